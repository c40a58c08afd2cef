//! Append-only usage log and the statistics derived from it.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use lecture_rag::chain::FeedbackMode;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageKind {
    Submission,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub event_id: String,
    pub kind: UsageKind,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FeedbackMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citations_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_to_first_token_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_ms: Option<u64>,
    pub at: DateTime<Utc>,
}

impl UsageEvent {
    pub fn submission(task_id: impl Into<String>) -> Self {
        Self {
            event_id: uuid::Uuid::new_v4().to_string(),
            kind: UsageKind::Submission,
            task_id: task_id.into(),
            mode: None,
            citations_count: None,
            time_to_first_token_ms: None,
            total_ms: None,
            at: Utc::now(),
        }
    }

    pub fn feedback(
        task_id: impl Into<String>,
        mode: FeedbackMode,
        citations_count: u32,
        time_to_first_token_ms: u64,
        total_ms: u64,
    ) -> Self {
        Self {
            event_id: uuid::Uuid::new_v4().to_string(),
            kind: UsageKind::Feedback,
            task_id: task_id.into(),
            mode: Some(mode),
            citations_count: Some(citations_count),
            time_to_first_token_ms: Some(time_to_first_token_ms),
            total_ms: Some(total_ms),
            at: Utc::now(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub submissions: u64,
    pub feedback_total: u64,
    pub feedback_with_lecture: u64,
    pub feedback_without_lecture: u64,
    pub linked_segments_total: u64,
    pub avg_links_per_lecture_feedback: f64,
    pub ttft_ms_p50_with_lecture: u64,
    pub ttft_ms_p95_with_lecture: u64,
    pub ttft_ms_p50_without_lecture: u64,
    pub ttft_ms_p95_without_lecture: u64,
}

/// Nearest-rank percentile of an ascending slice; 0 when empty.
pub fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn compute_stats(events: &[UsageEvent]) -> UsageStats {
    let mut stats = UsageStats::default();
    let mut ttft_with = Vec::new();
    let mut ttft_without = Vec::new();
    for e in events {
        match e.kind {
            UsageKind::Submission => stats.submissions += 1,
            UsageKind::Feedback => {
                stats.feedback_total += 1;
                stats.linked_segments_total += u64::from(e.citations_count.unwrap_or(0));
                let ttft = e.time_to_first_token_ms;
                match e.mode {
                    Some(FeedbackMode::WithLecture) => {
                        stats.feedback_with_lecture += 1;
                        ttft_with.extend(ttft);
                    }
                    _ => {
                        stats.feedback_without_lecture += 1;
                        ttft_without.extend(ttft);
                    }
                }
            }
        }
    }
    if stats.feedback_with_lecture > 0 {
        stats.avg_links_per_lecture_feedback =
            stats.linked_segments_total as f64 / stats.feedback_with_lecture as f64;
    }
    ttft_with.sort_unstable();
    ttft_without.sort_unstable();
    stats.ttft_ms_p50_with_lecture = nearest_rank(&ttft_with, 50.0);
    stats.ttft_ms_p95_with_lecture = nearest_rank(&ttft_with, 95.0);
    stats.ttft_ms_p50_without_lecture = nearest_rank(&ttft_without, 50.0);
    stats.ttft_ms_p95_without_lecture = nearest_rank(&ttft_without, 95.0);
    stats
}

/// Reads a JSON-lines usage log. Blank lines are skipped.
pub fn read_log(path: impl AsRef<Path>) -> anyhow::Result<Vec<UsageEvent>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))
        })
        .collect()
}

struct LogInner {
    file: Option<tokio::fs::File>,
    events: Vec<UsageEvent>,
}

/// The single writer of the usage log; also keeps every event for live stats.
pub struct UsageLog {
    path: Option<PathBuf>,
    inner: Mutex<LogInner>,
}

impl UsageLog {
    /// Opens (or creates) the log, loading existing events.
    pub async fn open(path: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let path = path.into();
        let events = if path.exists() { read_log(&path)? } else { Vec::new() };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            tokio::fs::create_dir_all(parent).await?;
        }
        let file = tokio::fs::OpenOptions::new().create(true).append(true).open(&path).await?;
        Ok(Self {
            path: Some(path),
            inner: Mutex::new(LogInner {
                file: Some(file),
                events,
            }),
        })
    }

    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(LogInner {
                file: None,
                events: Vec::new(),
            }),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub async fn append(&self, event: UsageEvent) -> std::io::Result<()> {
        let mut inner = self.inner.lock().await;
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&event).map_err(std::io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes()).await?;
            file.flush().await?;
        }
        inner.events.push(event);
        Ok(())
    }

    pub async fn stats(&self) -> UsageStats {
        compute_stats(&self.inner.lock().await.events)
    }

    pub async fn events(&self) -> Vec<UsageEvent> {
        self.inner.lock().await.events.clone()
    }
}
