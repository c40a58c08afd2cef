//! Parse an SRT file, cut it into overlapping windows and persist a store.
//!
//! ```bash
//! cargo run -p lecture-rag --example index_transcript -- path/to/lecture.srt lecture.mp4 /tmp/store
//! ```
//! Without arguments the bundled `lecture_03.srt` fixture is indexed into a
//! temporary directory.

use std::path::PathBuf;

use lecture_rag::chunker::{chunk_transcript, ChunkParams};
use lecture_rag::embedding::{Embedder, LocalEmbedder};
use lecture_rag::srt::parse_srt;
use lecture_rag::store::{ChunkRecord, VectorStore};

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let srt = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/srt/lecture_03.srt"));
    let video = args.next().unwrap_or_else(|| "lecture_03.mp4".into());
    let tmp = tempfile::tempdir()?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| tmp.path().join("store"));

    let parsed = parse_srt(&std::fs::read(&srt)?, &video)?;
    println!(
        "{} segments ({} empty blocks skipped)",
        parsed.transcript.segments.len(),
        parsed.skipped_blocks
    );

    let chunks = chunk_transcript(&parsed.transcript, ChunkParams::default());
    let embedder = LocalEmbedder::default();
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed_batch(&texts).await?;

    let descriptor = embedder.descriptor();
    let mut store = VectorStore::new(descriptor.id.clone(), descriptor.dim);
    store.insert_batch(chunks.into_iter().zip(vectors).map(|(c, v)| ChunkRecord::from_chunk(c, v)).collect())?;
    std::fs::create_dir_all(&out)?;
    store.save(&out)?;

    for r in store.records() {
        println!("{}  {}  {} chars", r.chunk_id, r.start.to_hms(), r.text.chars().count());
    }
    println!("saved {} chunks to {}", store.len(), out.display());
    Ok(())
}
