#![allow(dead_code)]

use std::sync::Arc;

use lecture_rag::chain::{FeedbackChain, StudentContext};
use lecture_rag::chunker::LectureChunk;
use lecture_rag::embedding::{local_embed, LocalEmbedder, DEFAULT_LOCAL_DIM, LOCAL_EMBEDDER_ID};
use lecture_rag::llm::{LlmClient, ScriptedCompletion, ScriptedProvider};
use lecture_rag::prompt::PromptTemplate;
use lecture_rag::srt::Timestamp;
use lecture_rag::store::{ChunkRecord, VectorStore};
use serde_json::json;

pub fn ts(ms: u32) -> Timestamp {
    Timestamp::from_millis(ms).unwrap()
}

pub fn record(chunk_id: &str, video_file: &str, start_ms: u32, text: &str) -> ChunkRecord {
    ChunkRecord::from_chunk(
        LectureChunk {
            chunk_id: chunk_id.into(),
            video_file: video_file.into(),
            start: ts(start_ms),
            text: text.into(),
        },
        local_embed(text, DEFAULT_LOCAL_DIM),
    )
}

/// Small lecture store; the recursion chunk sits at 00:14:32 in lecture_03.mp4.
pub fn fixture_store() -> VectorStore {
    let mut store = VectorStore::new(LOCAL_EMBEDDER_ID, DEFAULT_LOCAL_DIM);
    store
        .insert_batch(vec![
            record(
                "lecture_03.mp4#00004",
                "lecture_03.mp4",
                872_000,
                "How does recursion work in Python? A recursive function calls itself and needs a base case.",
            ),
            record("lecture_01.mp4#00000", "lecture_01.mp4", 0, "Welcome to the course, today we install Python."),
            record("lecture_02.mp4#00001", "lecture_02.mp4", 65_000, "A for loop iterates over a range of numbers."),
            record("lecture_02.mp4#00002", "lecture_02.mp4", 130_000, "Lists store several values; indices start at zero."),
            record("lecture_04.mp4#00000", "lecture_04.mp4", 10_000, "Dictionaries map keys to values."),
        ])
        .unwrap();
    store
}

/// Four chunks about `alpha` and four about `beta`.
pub fn two_topic_store() -> VectorStore {
    let mut store = VectorStore::new(LOCAL_EMBEDDER_ID, DEFAULT_LOCAL_DIM);
    let mut records = Vec::new();
    for (t, topic) in ["alpha", "beta"].iter().enumerate() {
        for i in 0..4 {
            let id = t * 4 + i;
            records.push(record(&format!("v.mp4#{id:05}"), "v.mp4", id as u32 * 1000, &format!("{topic} part {id}")));
        }
    }
    store.insert_batch(records).unwrap();
    store
}

pub fn context() -> StudentContext {
    StudentContext {
        task_description: "Write a function factorial(n) that returns n!.".into(),
        programming_language: "Python".into(),
        student_code: "def factorial(n):\n    return n * factorial(n - 1)".into(),
        compiler_output: String::new(),
        unit_test_result: "0 of 3 tests passed: RecursionError: maximum recursion depth exceeded".into(),
    }
}

pub fn concepts_call(concepts: &[(&str, &str)]) -> ScriptedCompletion {
    let list: Vec<_> = concepts.iter().map(|(c, q)| json!({"concept": c, "query": q})).collect();
    ScriptedCompletion::tool_call("report_missing_concepts", &json!({ "concepts": list }))
}

pub fn chain_with(
    script: Vec<ScriptedCompletion>,
    store: Option<VectorStore>,
) -> (FeedbackChain, Arc<ScriptedProvider>) {
    let provider = Arc::new(ScriptedProvider::new(script));
    let chain = FeedbackChain::new(
        LlmClient::new(provider.clone()),
        Arc::new(LocalEmbedder::default()),
        store.map(Arc::new),
        Arc::new(PromptTemplate::default()),
        "test-model",
    );
    (chain, provider)
}
