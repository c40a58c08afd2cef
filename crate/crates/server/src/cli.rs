//! Command line: `index`, `search`, `serve`, `stats`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use lecture_rag::chunker::{chunk_transcript, ChunkParams};
use lecture_rag::embedding::{Embedder, LocalEmbedder, RemoteEmbedder, RemoteEmbedderConfig, LOCAL_EMBEDDER_ID};
use lecture_rag::srt::parse_srt;
use lecture_rag::store::{ChunkRecord, VectorStore, MANIFEST_FILE};

use crate::app::{router, AppState};
use crate::config::Config;
use crate::usage::{compute_stats, read_log};

const EMBED_BATCH: usize = 64;
const PREFIX_CHARS: usize = 60;

#[derive(Debug, Parser)]
#[command(name = "lecture-rag", version, about = "Lecture-grounded feedback for programming exercises")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmbedderKind {
    Local,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an SRT transcript, chunk, embed and add it to a store.
    Index {
        #[arg(long)]
        srt: PathBuf,
        /// Video file name the transcript belongs to, as served from the videos directory.
        #[arg(long)]
        video: String,
        #[arg(long)]
        store: PathBuf,
        /// Drop the video's existing chunks before inserting.
        #[arg(long)]
        replace: bool,
        #[arg(long, value_enum, default_value_t = EmbedderKind::Local)]
        embedder: EmbedderKind,
        #[arg(long, default_value_t = lecture_rag::embedding::DEFAULT_LOCAL_DIM)]
        dim: usize,
    },
    /// Rank stored chunks against a query.
    Search {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print usage statistics of a usage log as JSON.
    Stats {
        #[arg(long)]
        log: PathBuf,
    },
}

fn embedder_for(kind: EmbedderKind, dim: usize) -> anyhow::Result<Arc<dyn Embedder>> {
    Ok(match kind {
        EmbedderKind::Local => Arc::new(LocalEmbedder::new(dim)),
        EmbedderKind::Remote => Arc::new(RemoteEmbedder::new(
            RemoteEmbedderConfig::from_env(dim).context("EMBED_API_URL and EMBED_MODEL must be set")?,
        )),
    })
}

/// Embedder matching a store's manifest: local for the hashed embedder, remote otherwise.
fn embedder_for_store(store: &VectorStore) -> anyhow::Result<Arc<dyn Embedder>> {
    let m = store.manifest();
    if m.embedder_id == LOCAL_EMBEDDER_ID {
        return Ok(Arc::new(LocalEmbedder::new(m.dim)));
    }
    let cfg = RemoteEmbedderConfig::from_env(m.dim).context("EMBED_API_URL and EMBED_MODEL must be set")?;
    if cfg.model != m.embedder_id {
        bail!("store was built with embedder {:?}, EMBED_MODEL is {:?}", m.embedder_id, cfg.model);
    }
    Ok(Arc::new(RemoteEmbedder::new(cfg)))
}

fn store_exists(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).exists()
}

pub async fn index(
    srt: &Path,
    video: &str,
    store_dir: &Path,
    replace: bool,
    embedder: Arc<dyn Embedder>,
) -> anyhow::Result<usize> {
    let bytes = std::fs::read(srt).with_context(|| format!("reading {}", srt.display()))?;
    let parsed = parse_srt(&bytes, video).with_context(|| format!("parsing {}", srt.display()))?;
    if parsed.skipped_blocks > 0 {
        tracing::warn!(skipped = parsed.skipped_blocks, "blocks without text were skipped");
    }
    let chunks = chunk_transcript(&parsed.transcript, ChunkParams::default());

    let descriptor = embedder.descriptor().clone();
    let mut store = if store_exists(store_dir) {
        VectorStore::load(store_dir, Some(&descriptor.id))?
    } else {
        VectorStore::new(descriptor.id.clone(), descriptor.dim)
    };
    if replace {
        store.remove_video(video);
    }

    let mut records = Vec::with_capacity(chunks.len());
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_batch(&texts).await?;
        records.extend(batch.iter().cloned().zip(vectors).map(|(c, v)| ChunkRecord::from_chunk(c, v)));
    }
    let n = store.insert_batch(records)?;
    std::fs::create_dir_all(store_dir)?;
    store.save(store_dir)?;
    Ok(n)
}

fn one_line_prefix(text: &str) -> String {
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut prefix: String = flat.chars().take(PREFIX_CHARS).collect();
    if flat.chars().count() > PREFIX_CHARS {
        prefix.push('…');
    }
    prefix
}

/// One line per hit: chunk_id, score, HH:MM:SS, text prefix (tab separated).
pub async fn search(store_dir: &Path, query: &str, k: usize) -> anyhow::Result<Vec<String>> {
    if !store_dir.is_dir() {
        bail!("store directory {} does not exist", store_dir.display());
    }
    if !store_exists(store_dir) {
        return Ok(Vec::new());
    }
    let store = VectorStore::load(store_dir, None)?;
    if store.is_empty() {
        return Ok(Vec::new());
    }
    let embedder = embedder_for_store(&store)?;
    let q = embedder.embed(query).await?;
    Ok(store
        .top_k(&q, k)?
        .into_iter()
        .map(|hit| {
            format!(
                "{}\t{:.6}\t{}\t{}",
                hit.record.chunk_id,
                hit.score,
                hit.record.start.to_hms(),
                one_line_prefix(&hit.record.text)
            )
        })
        .collect())
}

pub async fn serve(config_path: &Path) -> anyhow::Result<()> {
    let config = Config::load(config_path)?;
    let state = Arc::new(AppState::from_config(&config).await?);
    let listener = tokio::net::TcpListener::bind(config.server.bind)
        .await
        .with_context(|| format!("binding {}", config.server.bind))?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    std::io::stdout().flush()?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Index {
            srt,
            video,
            store,
            replace,
            embedder,
            dim,
        } => {
            let n = index(&srt, &video, &store, replace, embedder_for(embedder, dim)?).await?;
            println!("{n} chunks indexed");
        }
        Command::Search { store, query, k } => {
            for line in search(&store, &query, k).await? {
                println!("{line}");
            }
        }
        Command::Serve { config } => serve(&config).await?,
        Command::Stats { log } => {
            let events = read_log(&log)?;
            println!("{}", serde_json::to_string_pretty(&compute_stats(&events))?);
        }
    }
    Ok(())
}

pub fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
