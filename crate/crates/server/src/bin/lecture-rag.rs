fn main() -> std::process::ExitCode {
    lecture_rag_server::cli::main()
}
