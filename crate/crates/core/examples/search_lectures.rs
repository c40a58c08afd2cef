//! Index every bundled transcript and rank chunks for a question.
//!
//! ```bash
//! cargo run -p lecture-rag --example search_lectures -- "how does a while loop stop?"
//! ```

use std::path::Path;

use lecture_rag::chunker::{chunk_transcript, ChunkParams};
use lecture_rag::embedding::{Embedder, LocalEmbedder};
use lecture_rag::srt::parse_srt;
use lecture_rag::store::{ChunkRecord, VectorStore};

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "What is the base case of a recursion?".into());
    let embedder = LocalEmbedder::default();
    let mut store = VectorStore::new(embedder.descriptor().id.clone(), embedder.descriptor().dim);

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/srt");
    let mut files: Vec<_> = std::fs::read_dir(&dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    files.sort();
    for path in files {
        let video = path.with_extension("mp4").file_name().unwrap().to_string_lossy().into_owned();
        let transcript = parse_srt(&std::fs::read(&path)?, &video)?.transcript;
        let chunks = chunk_transcript(&transcript, ChunkParams::default());
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_batch(&texts).await?;
        store.insert_batch(chunks.into_iter().zip(vectors).map(|(c, v)| ChunkRecord::from_chunk(c, v)).collect())?;
    }
    println!("{} chunks indexed\nquery: {query}\n", store.len());

    for hit in store.top_k(&embedder.embed(&query).await?, 4)? {
        let preview: String = hit.record.text.chars().take(70).collect();
        println!("{:.4}  {}  {}  {}", hit.score, hit.record.chunk_id, hit.record.start.to_hms(), preview.replace('\n', " "));
    }
    Ok(())
}
