//! Embedded exact-scan vector store with JSON-lines persistence.
//!
//! A saved store is a directory holding `manifest.json` and `records.jsonl`
//! (one record per line). Queries score every record and order the results by
//! score descending, then `chunk_id` ascending.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::LectureChunk;
use crate::embedding::{cosine, EmbeddingVector};
use crate::srt::Timestamp;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate chunk id {0:?}")]
    DuplicateChunkId(String),
    #[error("dimension mismatch: store has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("corrupt store at {path}{}: {reason}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    CorruptStore {
        path: PathBuf,
        line: Option<usize>,
        reason: String,
    },
    #[error("store was built with embedder {stored:?}, but {configured:?} is configured")]
    EmbedderMismatch { stored: String, configured: String },
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub video_file: String,
    #[serde(rename = "start_ms")]
    pub start: Timestamp,
    pub text: String,
    pub vector: EmbeddingVector,
}

impl ChunkRecord {
    pub fn from_chunk(chunk: LectureChunk, vector: EmbeddingVector) -> Self {
        Self {
            chunk_id: chunk.chunk_id,
            video_file: chunk.video_file,
            start: chunk.start,
            text: chunk.text,
            vector,
        }
    }

    pub fn to_chunk(&self) -> LectureChunk {
        LectureChunk {
            chunk_id: self.chunk_id.clone(),
            video_file: self.video_file.clone(),
            start: self.start,
            text: self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub embedder_id: String,
    pub dim: usize,
    pub record_count: usize,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk {
    pub record: ChunkRecord,
    pub score: f64,
}

/// Ranking order: higher score first, then smaller chunk id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

#[derive(Debug, Clone)]
pub struct VectorStore {
    manifest: StoreManifest,
    records: Vec<ChunkRecord>,
    ids: HashSet<String>,
}

impl VectorStore {
    pub fn new(embedder_id: impl Into<String>, dim: usize) -> Self {
        Self {
            manifest: StoreManifest {
                embedder_id: embedder_id.into(),
                dim,
                record_count: 0,
                created_at: Utc::now(),
            },
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn records(&self) -> &[ChunkRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_dim(&self, actual: usize) -> Result<(), StoreError> {
        if actual != self.manifest.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.manifest.dim,
                actual,
            });
        }
        Ok(())
    }

    /// Inserts all records or none of them.
    pub fn insert_batch(&mut self, records: Vec<ChunkRecord>) -> Result<usize, StoreError> {
        let mut batch_ids = HashSet::with_capacity(records.len());
        for r in &records {
            self.check_dim(r.vector.dim())?;
            if self.ids.contains(&r.chunk_id) || !batch_ids.insert(r.chunk_id.as_str()) {
                return Err(StoreError::DuplicateChunkId(r.chunk_id.clone()));
            }
        }
        let n = records.len();
        for r in records {
            self.ids.insert(r.chunk_id.clone());
            self.records.push(r);
        }
        self.manifest.record_count = self.records.len();
        Ok(n)
    }

    /// Drops every record that came from `video_file`; returns how many were removed.
    pub fn remove_video(&mut self, video_file: &str) -> usize {
        let before = self.records.len();
        self.records.retain(|r| r.video_file != video_file);
        self.ids = self.records.iter().map(|r| r.chunk_id.clone()).collect();
        self.manifest.record_count = self.records.len();
        before - self.records.len()
    }

    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, StoreError> {
        self.check_dim(query.dim())?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, &ChunkRecord)> = self
            .records
            .iter()
            .map(|r| {
                // dims were checked on insert and above
                let s = cosine(query, &r.vector).unwrap_or(0.0);
                (s, r)
            })
            .collect();
        let cmp = |a: &(f64, &ChunkRecord), b: &(f64, &ChunkRecord)| rank_order(a.0, &a.1.chunk_id, b.0, &b.1.chunk_id);
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, r)| ScoredChunk {
                record: r.clone(),
                score,
            })
            .collect())
    }

    /// Writes `records.jsonl` then `manifest.json`, each via a temporary file and rename.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;

        let tmp = dir.join(format!("{RECORDS_FILE}.tmp"));
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            for r in &self.records {
                serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, dir.join(RECORDS_FILE))?;

        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&self.manifest).map_err(std::io::Error::other)?)?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Loads a saved store. With `expected_embedder` set, a store built by a
    /// different embedder is rejected.
    pub fn load(dir: impl AsRef<Path>, expected_embedder: Option<&str>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let corrupt = |path: &Path, line: Option<usize>, reason: String| StoreError::CorruptStore {
            path: path.to_path_buf(),
            line,
            reason,
        };

        let manifest: StoreManifest = serde_json::from_slice(&fs::read(&manifest_path)?)
            .map_err(|e| corrupt(&manifest_path, None, e.to_string()))?;
        if let Some(configured) = expected_embedder {
            if configured != manifest.embedder_id {
                return Err(StoreError::EmbedderMismatch {
                    stored: manifest.embedder_id,
                    configured: configured.to_string(),
                });
            }
        }

        let records_path = dir.join(RECORDS_FILE);
        let reader = BufReader::new(fs::File::open(&records_path)?);
        let mut store = VectorStore {
            manifest: manifest.clone(),
            records: Vec::with_capacity(manifest.record_count),
            ids: HashSet::with_capacity(manifest.record_count),
        };
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ChunkRecord =
                serde_json::from_str(&line).map_err(|e| corrupt(&records_path, Some(line_no), e.to_string()))?;
            if record.vector.dim() != manifest.dim {
                return Err(corrupt(
                    &records_path,
                    Some(line_no),
                    format!("vector dim {} != manifest dim {}", record.vector.dim(), manifest.dim),
                ));
            }
            if !store.ids.insert(record.chunk_id.clone()) {
                return Err(corrupt(
                    &records_path,
                    Some(line_no),
                    format!("duplicate chunk id {:?}", record.chunk_id),
                ));
            }
            store.records.push(record);
        }
        if store.records.len() != manifest.record_count {
            return Err(corrupt(
                &manifest_path,
                None,
                format!(
                    "manifest lists {} records, found {}",
                    manifest.record_count,
                    store.records.len()
                ),
            ));
        }
        Ok(store)
    }
}
