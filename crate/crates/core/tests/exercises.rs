use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use lecture_rag::exercises::{
    load_tasks, CommandRunner, CommandTemplate, EvaluationLimits, Evaluator, ExerciseError, Runner,
    ScriptedRunner, Task, TaskFile, OUTPUT_CAP_BYTES,
};

fn fixture_tasks() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/tasks")
}

fn task(language: &str) -> Task {
    Task {
        task_id: "t1".into(),
        title: "T".into(),
        description_md: "do it".into(),
        programming_language: language.into(),
        unit_tests: vec![TaskFile {
            name: "test_main.txt".into(),
            content: "check".into(),
        }],
        starter_code: None,
    }
}

fn evaluator(runner: impl Runner + 'static) -> Evaluator {
    Evaluator::new(vec![Arc::new(runner)], EvaluationLimits::default())
}

fn write_task(root: &std::path::Path, dir: &str, json: &str) {
    let d = root.join(dir);
    std::fs::create_dir_all(d.join("tests")).unwrap();
    std::fs::write(d.join("task.json"), json).unwrap();
    std::fs::write(d.join("description.md"), "Describe.").unwrap();
    std::fs::write(d.join("tests/test.py"), "pass").unwrap();
}

#[test]
fn fixture_directory_loads_sorted() {
    let tasks = load_tasks(fixture_tasks()).unwrap();
    let ids: Vec<_> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    assert_eq!(ids, ["factorial", "sum_list"]);
    assert_eq!(tasks[0].programming_language, "python");
    assert!(tasks[0].starter_code.is_some());
    assert!(tasks[1].starter_code.is_none());
    assert!(tasks[0].unit_test_source().contains("3628800"));
}

#[test]
fn duplicate_ids_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), "a", r#"{"id":"same","title":"A","language":"python"}"#);
    write_task(dir.path(), "b", r#"{"id":"same","title":"B","language":"python"}"#);
    assert!(matches!(load_tasks(dir.path()), Err(ExerciseError::InvalidTaskDefinition { .. })));
}

#[test]
fn missing_fields_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), "a", r#"{"title":"A"}"#);
    assert!(matches!(load_tasks(dir.path()), Err(ExerciseError::InvalidTaskDefinition { .. })));

    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), "a", r#"{"title":"A","language":"python"}"#);
    std::fs::write(dir.path().join("a/description.md"), "  \n").unwrap();
    assert!(matches!(load_tasks(dir.path()), Err(ExerciseError::InvalidTaskDefinition { .. })));
}

#[test]
fn empty_directory_gives_no_tasks() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_tasks(dir.path()).unwrap().is_empty());
}

#[tokio::test]
async fn scripted_outcome_passes_through() {
    let ev = evaluator(ScriptedRunner::new("python").tests(3, 5, "2 failures"));
    let s = ev.evaluate(&task("python"), "code").await.unwrap();
    assert!(s.compile.success);
    let t = s.tests.unwrap();
    assert_eq!((t.passed, t.total), (3, 5));
    assert_eq!(s.task_id, "t1");
    assert_eq!(s.code, "code");
}

#[tokio::test]
async fn compile_error_gates_tests() {
    let ev = evaluator(ScriptedRunner::new("python").compile_error("missing ;"));
    let s = ev.evaluate(&task("python"), "code").await.unwrap();
    assert!(!s.compile.success);
    assert_eq!(s.compile.output, "missing ;");
    assert!(s.tests.is_none());
}

#[tokio::test]
async fn unknown_language_is_runner_unavailable() {
    let ev = evaluator(ScriptedRunner::new("python"));
    let err = ev.evaluate(&task("cobol"), "x").await.unwrap_err();
    assert!(matches!(err, ExerciseError::RunnerUnavailable(l) if l == "cobol"));
}

#[tokio::test(start_paused = true)]
async fn slow_compile_hits_timeout() {
    let ev = evaluator(ScriptedRunner::new("python").compile_delay(Duration::from_secs(20)));
    let started = tokio::time::Instant::now();
    let s = ev.evaluate(&task("python"), "x").await.unwrap();
    assert!(!s.compile.success);
    assert!(s.compile.output.contains("timeout"));
    assert!(s.compile.duration_ms <= 10_000);
    assert!(s.tests.is_none());
    assert!(started.elapsed() < Duration::from_secs(11));
}

#[tokio::test(start_paused = true)]
async fn slow_tests_hit_timeout() {
    let ev = evaluator(ScriptedRunner::new("python").test_delay(Duration::from_secs(20)));
    let s = ev.evaluate(&task("python"), "x").await.unwrap();
    assert!(s.compile.success);
    let t = s.tests.unwrap();
    assert!(t.timed_out);
    assert_eq!(t.passed, 0);
    assert!(t.output.contains("timeout"));
    assert!(t.duration_ms <= 10_000);
}

#[tokio::test]
async fn outputs_are_capped() {
    let huge = "x".repeat(OUTPUT_CAP_BYTES * 3);
    let ev = evaluator(ScriptedRunner::new("python").compile_error(huge));
    let s = ev.evaluate(&task("python"), "x").await.unwrap();
    assert!(s.compile.output.len() <= OUTPUT_CAP_BYTES);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_evaluations_use_distinct_workdirs() {
    let runner = Arc::new(ScriptedRunner::new("python").compile_delay(Duration::from_millis(20)));
    let ev = Arc::new(Evaluator::new(vec![runner.clone()], EvaluationLimits::default()));
    let t = Arc::new(task("python"));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let (ev, t) = (ev.clone(), t.clone());
            tokio::spawn(async move { ev.evaluate(&t, &format!("code {i}")).await.unwrap() })
        })
        .collect();
    let mut ids = HashSet::new();
    for h in handles {
        ids.insert(h.await.unwrap().submission_id);
    }
    assert_eq!(ids.len(), 8);
    let dirs: HashSet<_> = runner.workdirs().into_iter().collect();
    assert_eq!(dirs.len(), 8);
}

#[tokio::test(start_paused = true)]
async fn concurrency_limit_is_respected() {
    let runner = ScriptedRunner::new("python").compile_delay(Duration::from_secs(1));
    let ev = Arc::new(Evaluator::new(
        vec![Arc::new(runner)],
        EvaluationLimits {
            max_concurrent: 2,
            ..Default::default()
        },
    ));
    let t = Arc::new(task("python"));
    let started = tokio::time::Instant::now();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (ev, t) = (ev.clone(), t.clone());
            tokio::spawn(async move { ev.evaluate(&t, "x").await.unwrap() })
        })
        .collect();
    for h in handles {
        h.await.unwrap();
    }
    // four one-second compiles, two at a time
    assert!(started.elapsed() >= Duration::from_secs(2));
}

fn python_runner() -> CommandRunner {
    CommandRunner::new(HashMap::from([(
        "python".to_string(),
        CommandTemplate {
            source_file: "main.py".into(),
            compile: Some("python3 -m py_compile {{source_file}}".into()),
            test: "for t in test_*.py; do python3 \"$t\"; done".into(),
            summary_pattern: None,
        },
    )]))
    .unwrap()
}

fn has_python() -> bool {
    std::process::Command::new("python3").arg("--version").output().is_ok()
}

#[tokio::test]
async fn subprocess_runner_counts_tests() {
    if !has_python() {
        eprintln!("python3 not found, skipping");
        return;
    }
    let tasks = load_tasks(fixture_tasks()).unwrap();
    let factorial = tasks.iter().find(|t| t.task_id == "factorial").unwrap();
    let ev = evaluator(python_runner());

    let ok = "def factorial(n):\n    if n == 0:\n        return 1\n    return n * factorial(n - 1)\n";
    let s = ev.evaluate(factorial, ok).await.unwrap();
    let t = s.tests.unwrap();
    assert_eq!((t.passed, t.total), (4, 4), "{}", t.output);

    let no_base = "def factorial(n):\n    return n * factorial(n - 1)\n";
    let t = ev.evaluate(factorial, no_base).await.unwrap().tests.unwrap();
    assert_eq!((t.passed, t.total), (0, 4));
    assert!(t.output.contains("RecursionError"));

    let broken = "def factorial(n)\n    return 1\n";
    let s = ev.evaluate(factorial, broken).await.unwrap();
    assert!(!s.compile.success);
    assert!(s.compile.output.contains("SyntaxError"), "{}", s.compile.output);
    assert!(s.tests.is_none());
}

#[tokio::test]
async fn subprocess_timeout_kills_child() {
    let runner = CommandRunner::new(HashMap::from([(
        "sh".to_string(),
        CommandTemplate {
            source_file: "main.sh".into(),
            compile: None,
            test: "sleep 30".into(),
            summary_pattern: None,
        },
    )]))
    .unwrap();
    let ev = Evaluator::new(
        vec![Arc::new(runner)],
        EvaluationLimits {
            test_timeout: Duration::from_millis(300),
            ..Default::default()
        },
    );
    let started = std::time::Instant::now();
    let t = ev.evaluate(&task("sh"), "").await.unwrap().tests.unwrap();
    assert!(t.timed_out);
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[tokio::test]
async fn student_context_from_submission() {
    let ev = evaluator(ScriptedRunner::new("python").tests(1, 4, "factorial(5) returned None"));
    let task = task("python");
    let s = ev.evaluate(&task, "def f(): pass").await.unwrap();
    let ctx = s.student_context(&task);
    assert_eq!(ctx.student_code, "def f(): pass");
    assert!(ctx.unit_test_result.starts_with("1/4 tests passed"));
    assert!(ctx.validate().is_ok());
}

#[cfg(target_os = "linux")]
#[tokio::test]
async fn subprocess_timeout_kills_grandchildren() {
    let scratch = tempfile::tempdir().unwrap();
    let pid_file = scratch.path().join("pid");
    let runner = CommandRunner::new(HashMap::from([(
        "sh".to_string(),
        CommandTemplate {
            source_file: "main.sh".into(),
            compile: None,
            test: format!("sleep 30 & echo $! > {}; wait", pid_file.display()),
            summary_pattern: None,
        },
    )]))
    .unwrap();
    let ev = Evaluator::new(
        vec![Arc::new(runner)],
        EvaluationLimits {
            test_timeout: Duration::from_millis(300),
            ..Default::default()
        },
    );
    assert!(ev.evaluate(&task("sh"), "").await.unwrap().tests.unwrap().timed_out);
    let pid = std::fs::read_to_string(&pid_file).unwrap().trim().to_string();
    tokio::time::sleep(Duration::from_millis(200)).await;
    let state = std::fs::read_to_string(format!("/proc/{pid}/stat")).unwrap_or_default();
    // gone, or a zombie awaiting its reaper
    assert!(state.is_empty() || state.split_whitespace().nth(2) == Some("Z"), "{state}");
}
