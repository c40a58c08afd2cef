#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::StreamExt;
use serde_json::Value;

use eventsource_stream::Eventsource;
use lecture_rag_server::app::{router, AppState};
use lecture_rag_server::config::Config;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn task_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/tasks")
}

/// Writes a service config into `dir`. `store` is optional; the LLM script is
/// written next to it.
pub fn write_config(dir: &Path, store: Option<&Path>, script: &str) -> PathBuf {
    std::fs::write(dir.join("script.json"), script).unwrap();
    let store_line = store.map(|s| format!("store = {:?}\n", s.display().to_string())).unwrap_or_default();
    let config = format!(
        r#"
[server]
bind = "127.0.0.1:0"
usage_log = "usage.jsonl"

[paths]
{store_line}tasks = {tasks:?}
videos = {videos:?}

[llm]
provider = "scripted"
script = "script.json"

[runners.python]
kind = "scripted"
passed = 2
total = 4
output = "factorial(5) returned None, expected 120"
"#,
        tasks = task_fixtures().display().to_string(),
        videos = fixtures().join("videos").display().to_string(),
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn fixture_script() -> String {
    std::fs::read_to_string(fixtures().join("script.json")).unwrap()
}

/// Indexes the fixture transcript into `store` with the local embedder.
pub async fn index_fixture(store: &Path) {
    let embedder = Arc::new(lecture_rag::embedding::LocalEmbedder::default());
    let n = lecture_rag_server::cli::index(
        &fixtures().join("lecture_03.srt"),
        "lecture_03.mp4",
        store,
        false,
        embedder,
    )
    .await
    .unwrap();
    assert_eq!(n, 3);
}

pub async fn spawn(config: &Path) -> (String, Arc<AppState>) {
    let config = Config::load(config).unwrap();
    let state = Arc::new(AppState::from_config(&config).await.unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), state)
}

/// Reads an SSE response to the end as `(event, data)` pairs.
pub async fn read_sse(resp: reqwest::Response) -> Vec<(String, Value)> {
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut out = Vec::new();
    let mut events = resp.bytes_stream().eventsource();
    while let Some(ev) = events.next().await {
        let ev = ev.unwrap();
        out.push((ev.event, serde_json::from_str(&ev.data).unwrap()));
    }
    out
}

pub async fn submit(client: &reqwest::Client, base: &str, task: &str, code: &str) -> reqwest::Response {
    client
        .post(format!("{base}/api/tasks/{task}/submissions"))
        .json(&serde_json::json!({ "code": code }))
        .send()
        .await
        .unwrap()
}

pub async fn submission_id(client: &reqwest::Client, base: &str) -> String {
    let resp = submit(client, base, "factorial", "def factorial(n):\n    return n * factorial(n - 1)\n").await;
    assert_eq!(resp.status(), 200);
    resp.json::<Value>().await.unwrap()["submission_id"].as_str().unwrap().to_string()
}

pub async fn feedback(client: &reqwest::Client, base: &str, id: &str, lecture: bool) -> reqwest::Response {
    client
        .post(format!("{base}/api/submissions/{id}/feedback?lecture={lecture}"))
        .send()
        .await
        .unwrap()
}

/// Checks event order `token* citations done` and returns (tokens joined, citations, done).
pub fn split_stream(events: &[(String, Value)]) -> (String, Value, Value) {
    let names: Vec<&str> = events.iter().map(|(n, _)| n.as_str()).collect();
    let n = names.len();
    assert!(n >= 2, "{names:?}");
    assert_eq!(&names[n - 2..], ["citations", "done"], "{names:?}");
    assert!(names[..n - 2].iter().all(|e| *e == "token"), "{names:?}");
    let text: String = events[..n - 2].iter().map(|(_, d)| d["text"].as_str().unwrap()).collect();
    (text, events[n - 2].1.clone(), events[n - 1].1.clone())
}
