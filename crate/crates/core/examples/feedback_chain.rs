//! Both feedback modes against a scripted model, printing the token stream.
//!
//! Set `LLM_API_URL`, `LLM_API_KEY` and `LLM_MODEL` to talk to an
//! OpenAI-compatible endpoint instead of the script.

use std::sync::Arc;
use std::time::Duration;

use lecture_rag::chain::{FeedbackChain, FeedbackMode, StudentContext};
use lecture_rag::chunker::{chunk_transcript, ChunkParams};
use lecture_rag::embedding::{Embedder, LocalEmbedder};
use lecture_rag::llm::{ChatProvider, LlmClient, OpenAiCompatConfig, OpenAiCompatProvider, ScriptedCompletion, ScriptedProvider};
use lecture_rag::prompt::PromptTemplate;
use lecture_rag::srt::parse_srt;
use lecture_rag::store::{ChunkRecord, VectorStore};
use serde_json::json;

fn scripted() -> Arc<dyn ChatProvider> {
    let concepts = json!({"concepts": [
        {"concept": "recursion base case", "query": "What is the base case of a recursive function?"}
    ]});
    Arc::new(ScriptedProvider::new([
        ScriptedCompletion::tool_call("report_missing_concepts", &concepts),
        ScriptedCompletion::deltas(["factorial(0) never ", "stops calling itself.", "[^1] Which input ", "needs no recursive call?"])
            .with_event_delay(Duration::from_millis(30)),
        ScriptedCompletion::deltas(["Check what happens ", "for the smallest input."]).with_event_delay(Duration::from_millis(30)),
    ]))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (provider, model): (Arc<dyn ChatProvider>, String) = match OpenAiCompatConfig::from_env() {
        Some(cfg) => {
            let p = OpenAiCompatProvider::new(cfg);
            let model = p.model().to_string();
            (Arc::new(p), model)
        }
        None => (scripted(), "scripted".into()),
    };

    let srt = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/srt/lecture_03.srt"))?;
    let chunks = chunk_transcript(&parse_srt(&srt, "lecture_03.mp4")?.transcript, ChunkParams::default());
    let embedder = Arc::new(LocalEmbedder::default());
    let mut store = VectorStore::new(embedder.descriptor().id.clone(), embedder.descriptor().dim);
    for c in chunks {
        let v = embedder.embed(&c.text).await?;
        store.insert_batch(vec![ChunkRecord::from_chunk(c, v)])?;
    }

    let chain = FeedbackChain::new(
        LlmClient::new(provider),
        embedder,
        Some(Arc::new(store)),
        Arc::new(PromptTemplate::default()),
        model,
    );
    let ctx = StudentContext {
        task_description: "Implement factorial(n) recursively.".into(),
        programming_language: "python".into(),
        student_code: "def factorial(n):\n    return n * factorial(n - 1)\n".into(),
        compiler_output: String::new(),
        unit_test_result: "0/4 tests passed\nfactorial(0) raised RecursionError".into(),
    };

    for mode in [FeedbackMode::WithLecture, FeedbackMode::WithoutLecture] {
        println!("--- {mode:?}");
        let result = chain
            .generate(&ctx, mode, |t| {
                print!("{t}");
                use std::io::Write;
                let _ = std::io::stdout().flush();
            })
            .await?;
        println!(
            "\n[{} citations, ttft {} ms, run1 {} ms]",
            result.citations.len(),
            result.metrics.time_to_first_token_ms,
            result.metrics.run1_ms
        );
    }
    Ok(())
}
