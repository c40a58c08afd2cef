//! Boots the HTTP service from `config.example.toml` with a fresh store,
//! submits code and prints the raw feedback event stream for both modes.

use std::path::Path;
use std::sync::Arc;

use futures::StreamExt;
use lecture_rag::embedding::LocalEmbedder;
use lecture_rag_server::app::{router, AppState};
use lecture_rag_server::cli::index;
use lecture_rag_server::config::Config;
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir()?;
    let store = tmp.path().join("store");
    let n = index(
        &manifest.join("fixtures/lecture_03.srt"),
        "lecture_03.mp4",
        &store,
        false,
        Arc::new(LocalEmbedder::default()),
    )
    .await?;
    println!("indexed {n} chunks");

    std::env::set_var("LECTURE_STORE", &store);
    std::env::set_var("LECTURE_USAGE_LOG", tmp.path().join("usage.jsonl"));
    std::env::set_var("LECTURE_BIND", "127.0.0.1:0");
    let config = Config::load(manifest.join("config.example.toml"))?;
    let state = Arc::new(AppState::from_config(&config).await?);
    let listener = tokio::net::TcpListener::bind(config.server.bind).await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(state)).await });

    let client = reqwest::Client::new();
    let submission: Value = client
        .post(format!("{base}/api/tasks/factorial/submissions"))
        .json(&json!({"code": "def factorial(n):\n    return n * factorial(n - 1)\n"}))
        .send()
        .await?
        .json()
        .await?;
    println!("submission: {}", serde_json::to_string_pretty(&submission)?);
    let id = submission["submission_id"].as_str().unwrap_or_default();

    for lecture in [true, false] {
        println!("\n--- lecture={lecture}");
        let resp = client
            .post(format!("{base}/api/submissions/{id}/feedback?lecture={lecture}"))
            .send()
            .await?;
        let mut body = resp.bytes_stream();
        while let Some(chunk) = body.next().await {
            print!("{}", String::from_utf8_lossy(&chunk?));
        }
    }

    let stats: Value = client.get(format!("{base}/api/stats")).send().await?.json().await?;
    println!("\nstats: {stats}");
    Ok(())
}
