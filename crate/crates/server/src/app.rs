//! HTTP routes, shared state and the SSE feedback stream.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use anyhow::Context;
use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;
use tokio::time::Instant;
use tower::ServiceExt;
use tower_http::services::ServeFile;

use lecture_rag::chain::{ChainError, FeedbackChain, FeedbackMode, FeedbackResult};
use lecture_rag::citation::Citation;
use lecture_rag::embedding::{Embedder, LocalEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use lecture_rag::exercises::{
    load_tasks, CommandRunner, EvaluationLimits, Evaluator, ExerciseError, Runner, ScriptedRunner, Submission, Task,
};
use lecture_rag::llm::{ChatProvider, LlmClient, LlmError, OpenAiCompatConfig, OpenAiCompatProvider, ScriptedProvider};
use lecture_rag::prompt::PromptTemplate;
use lecture_rag::store::{VectorStore, MANIFEST_FILE};

use crate::config::{Config, EmbeddingSection, LlmSection, RunnerSection};
use crate::usage::{UsageEvent, UsageLog};

pub struct AppState {
    pub tasks: BTreeMap<String, Task>,
    pub evaluator: Evaluator,
    pub chain: FeedbackChain,
    pub usage: UsageLog,
    pub videos: Option<PathBuf>,
    submissions: RwLock<HashMap<String, Submission>>,
    active_feedback: Mutex<HashSet<String>>,
}

impl AppState {
    pub fn new(
        tasks: Vec<Task>,
        evaluator: Evaluator,
        chain: FeedbackChain,
        usage: UsageLog,
        videos: Option<PathBuf>,
    ) -> Self {
        Self {
            tasks: tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
            evaluator,
            chain,
            usage,
            videos,
            submissions: RwLock::default(),
            active_feedback: Mutex::default(),
        }
    }

    pub async fn from_config(config: &Config) -> anyhow::Result<Self> {
        let tasks = load_tasks(&config.paths.tasks)
            .with_context(|| format!("loading tasks from {}", config.paths.tasks.display()))?;

        let limits = EvaluationLimits {
            compile_timeout: Duration::from_secs_f64(config.limits.compile_timeout_secs),
            test_timeout: Duration::from_secs_f64(config.limits.test_timeout_secs),
            max_concurrent: config.limits.max_concurrent_evaluations,
        };
        let evaluator = Evaluator::new(build_runners(config)?, limits);

        let embedder = build_embedder(&config.embedding)?;
        let store = match &config.paths.store {
            Some(dir) if dir.join(MANIFEST_FILE).exists() => {
                let store = VectorStore::load(dir, Some(&embedder.descriptor().id))
                    .with_context(|| format!("loading store {}", dir.display()))?;
                tracing::info!(records = store.len(), "vector store loaded");
                Some(Arc::new(store))
            }
            Some(dir) => {
                tracing::warn!(path = %dir.display(), "no vector store found; lecture feedback will degrade");
                None
            }
            None => None,
        };

        let (provider, model): (Arc<dyn ChatProvider>, String) = match &config.llm {
            LlmSection::Scripted { script, cycle } => {
                let json = std::fs::read_to_string(script)
                    .with_context(|| format!("reading LLM script {}", script.display()))?;
                (Arc::new(ScriptedProvider::from_json(&json, *cycle)?), "scripted".into())
            }
            LlmSection::Remote { url, api_key, model } => {
                let env = OpenAiCompatConfig::from_env();
                let pick = |v: &Option<String>, f: fn(&OpenAiCompatConfig) -> String| {
                    v.clone().filter(|s| !s.is_empty()).or_else(|| env.as_ref().map(f))
                };
                let cfg = OpenAiCompatConfig {
                    url: pick(url, |c| c.url.clone()).context("llm.url or LLM_API_URL is required")?,
                    api_key: pick(api_key, |c| c.api_key.clone().unwrap_or_default()).filter(|k| !k.is_empty()),
                    model: pick(model, |c| c.model.clone()).context("llm.model or LLM_MODEL is required")?,
                };
                let model = cfg.model.clone();
                (Arc::new(OpenAiCompatProvider::new(cfg)), model)
            }
        };

        let template = match &config.prompt.template {
            Some(path) => PromptTemplate::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => PromptTemplate::default(),
        };
        let chain = FeedbackChain::new(LlmClient::new(provider), embedder, store, Arc::new(template), model);

        let usage = match &config.server.usage_log {
            Some(path) => UsageLog::open(path).await?,
            None => UsageLog::in_memory(),
        };
        Ok(Self::new(tasks, evaluator, chain, usage, config.paths.videos.clone()))
    }

    pub fn submission(&self, id: &str) -> Option<Submission> {
        self.submissions.read().expect("poisoned").get(id).cloned()
    }
}

fn build_runners(config: &Config) -> anyhow::Result<Vec<Arc<dyn Runner>>> {
    let mut runners: Vec<Arc<dyn Runner>> = Vec::new();
    let mut commands = HashMap::new();
    for (language, section) in &config.runners {
        match section {
            RunnerSection::Command(t) => {
                commands.insert(language.clone(), t.clone());
            }
            RunnerSection::Scripted {
                passed,
                total,
                output,
                compile_error,
            } => {
                let mut r = ScriptedRunner::new(language.clone()).tests(*passed, *total, output.clone());
                if let Some(err) = compile_error {
                    r = r.compile_error(err.clone());
                }
                runners.push(Arc::new(r));
            }
        }
    }
    if !commands.is_empty() {
        runners.push(Arc::new(CommandRunner::new(commands)?));
    }
    if runners.is_empty() {
        tracing::warn!("no runners configured; submissions will be rejected");
    }
    Ok(runners)
}

pub fn build_embedder(section: &EmbeddingSection) -> anyhow::Result<Arc<dyn Embedder>> {
    Ok(match section {
        EmbeddingSection::Local { dim } => Arc::new(LocalEmbedder::new(*dim)),
        EmbeddingSection::Remote {
            dim,
            url,
            api_key,
            model,
        } => {
            let env = RemoteEmbedderConfig::from_env(*dim);
            let cfg = RemoteEmbedderConfig {
                url: url
                    .clone()
                    .or_else(|| env.as_ref().map(|c| c.url.clone()))
                    .context("embedding.url or EMBED_API_URL is required")?,
                api_key: api_key.clone().or_else(|| env.as_ref().and_then(|c| c.api_key.clone())),
                model: model
                    .clone()
                    .or_else(|| env.as_ref().map(|c| c.model.clone()))
                    .context("embedding.model or EMBED_MODEL is required")?,
                dim: *dim,
            };
            Arc::new(RemoteEmbedder::new(cfg))
        }
    })
}

/// Every error response is `{error_code, message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error_code": self.code, "message": self.message}))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), "invalid_body", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_query", r.body_text())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{id}", get(get_task))
        .route("/api/tasks/{id}/submissions", post(submit))
        .route("/api/submissions/{id}/feedback", post(feedback))
        .route("/api/videos/{file}", get(video))
        .route("/api/stats", get(stats))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

#[derive(Serialize)]
struct TaskSummary<'a> {
    task_id: &'a str,
    title: &'a str,
    programming_language: &'a str,
}

async fn list_tasks(State(state): State<Arc<AppState>>) -> Response {
    let list: Vec<_> = state
        .tasks
        .values()
        .map(|t| TaskSummary {
            task_id: &t.task_id,
            title: &t.title,
            programming_language: &t.programming_language,
        })
        .collect();
    Json(list).into_response()
}

fn find_task<'a>(state: &'a AppState, id: &str) -> Result<&'a Task, ApiError> {
    state
        .tasks
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "task_not_found", format!("unknown task {id:?}")))
}

async fn get_task(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let t = find_task(&state, &id)?;
    Ok(Json(json!({
        "task_id": t.task_id,
        "title": t.title,
        "description_md": t.description_md,
        "programming_language": t.programming_language,
        "starter_code": t.starter_code,
    }))
    .into_response())
}

#[derive(Deserialize)]
struct SubmitBody {
    code: String,
}

async fn submit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<SubmitBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let task = find_task(&state, &id)?;
    let Json(body) = body?;
    if body.code.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_code", "code must not be empty"));
    }
    let submission = state.evaluator.evaluate(task, &body.code).await.map_err(|e| match e {
        ExerciseError::RunnerUnavailable(_) => {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "runner_unavailable", e.to_string())
        }
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "evaluation_failed", other.to_string()),
    })?;
    state
        .submissions
        .write()
        .expect("poisoned")
        .insert(submission.submission_id.clone(), submission.clone());
    if let Err(e) = state.usage.append(UsageEvent::submission(&task.task_id)).await {
        tracing::error!(error = %e, "usage log write failed");
    }
    Ok(Json(submission).into_response())
}

#[derive(Deserialize)]
struct FeedbackQuery {
    #[serde(default = "default_lecture")]
    lecture: bool,
}

fn default_lecture() -> bool {
    true
}

/// Percent-encodes everything outside the RFC 3986 unreserved set.
fn encode_path_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

/// Service-relative URL for a citation, replacing the `video://` scheme.
pub fn citation_url(c: &Citation) -> String {
    format!("/api/videos/{}#t={}", encode_path_segment(&c.video_file), c.start.as_secs())
}

fn citations_payload(citations: &[Citation]) -> serde_json::Value {
    citations
        .iter()
        .map(|c| {
            json!({
                "footnote_id": c.footnote_id,
                "video_file": c.video_file,
                "start_ms": c.start,
                "url": citation_url(c),
            })
        })
        .collect()
}

fn done_payload(r: &FeedbackResult) -> serde_json::Value {
    json!({
        "mode": r.mode,
        "requested_mode": r.requested_mode,
        "degraded": r.metrics.degraded,
        "metrics": r.metrics,
    })
}

fn chain_error_code(e: &ChainError) -> &'static str {
    match e {
        ChainError::InvalidContext(_) => "invalid_context",
        ChainError::Llm(LlmError::StreamInterrupted(_)) => "stream_interrupted",
        ChainError::Llm(LlmError::ProviderUnavailable(_) | LlmError::ScriptExhausted) => "llm_unavailable",
        ChainError::Llm(_) => "llm_error",
        ChainError::Embed(_) => "embedding_unavailable",
        ChainError::Store(_) => "store_error",
    }
}

fn sse_event(name: &str, data: &serde_json::Value) -> Event {
    Event::default().event(name).data(data.to_string())
}

/// Releases the per-submission stream slot when the generation task ends.
struct ActiveGuard {
    state: Arc<AppState>,
    submission_id: String,
}

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        self.state.active_feedback.lock().expect("poisoned").remove(&self.submission_id);
    }
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<FeedbackQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let accepted_at = Instant::now();
    let Query(query) = query?;
    let submission = state.submission(&id).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "submission_not_found", format!("unknown submission {id:?}"))
    })?;
    let task = find_task(&state, &submission.task_id)?.clone();
    if !state.active_feedback.lock().expect("poisoned").insert(id.clone()) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "feedback_in_progress",
            "a feedback stream for this submission is already active",
        ));
    }
    let guard = ActiveGuard {
        state: state.clone(),
        submission_id: id,
    };
    let mode = if query.lecture {
        FeedbackMode::WithLecture
    } else {
        FeedbackMode::WithoutLecture
    };
    let ctx = submission.student_context(&task);

    let (tx, rx) = mpsc::unbounded_channel::<Event>();
    tokio::spawn(async move {
        let _guard = guard;
        let token_tx = tx.clone();
        let generation = state.chain.generate_since(accepted_at, &ctx, mode, move |text| {
            let _ = token_tx.send(sse_event("token", &json!({"text": text})));
        });
        tokio::select! {
            result = generation => match result {
                Ok(r) => {
                    let _ = tx.send(sse_event("citations", &citations_payload(&r.citations)));
                    let _ = tx.send(sse_event("done", &done_payload(&r)));
                    let event = UsageEvent::feedback(
                        &task.task_id,
                        r.mode,
                        r.citations.len() as u32,
                        r.metrics.time_to_first_token_ms,
                        r.metrics.total_ms,
                    );
                    if let Err(e) = state.usage.append(event).await {
                        tracing::error!(error = %e, "usage log write failed");
                    }
                }
                Err(e) => {
                    tracing::warn!(error = %e, "feedback generation failed");
                    let body = json!({"error_code": chain_error_code(&e), "message": e.to_string()});
                    let _ = tx.send(sse_event("error", &body));
                }
            },
            _ = tx.closed() => tracing::info!("client disconnected, feedback generation aborted"),
        }
    });

    let events = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|e| (Ok::<_, Infallible>(e), rx))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

fn valid_video_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && !name.contains(['/', '\\', '\0'])
        && !name.contains("..")
}

async fn video(
    State(state): State<Arc<AppState>>,
    Path(file): Path<String>,
    request: Request,
) -> Result<Response, ApiError> {
    if !valid_video_name(&file) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_path", "invalid video file name"));
    }
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "video_not_found", format!("unknown video {file:?}"));
    let dir = state.videos.as_ref().ok_or_else(not_found)?;
    let path = dir.join(&file);
    if !path.is_file() {
        return Err(not_found());
    }
    let response = ServeFile::new(path)
        .oneshot(request)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io_error", e.to_string()))?;
    Ok(response.map(Body::new))
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    Json(state.usage.stats().await).into_response()
}

#[cfg(test)]
mod tests {
    use super::*;
    use lecture_rag::srt::Timestamp;

    #[test]
    fn citation_urls() {
        let c = Citation {
            footnote_id: 1,
            video_file: "lecture_03.mp4".into(),
            start: Timestamp::from_millis(872_999).unwrap(),
        };
        assert_eq!(citation_url(&c), "/api/videos/lecture_03.mp4#t=872");
        let c = Citation {
            video_file: "week 1/ä.mp4".into(),
            ..c
        };
        assert_eq!(citation_url(&c), "/api/videos/week%201%2F%C3%A4.mp4#t=872");
    }

    #[test]
    fn video_names() {
        assert!(valid_video_name("lecture_03.mp4"));
        for bad in ["", "../etc/passwd", "..", ".hidden", "a/b.mp4", "a\\b.mp4", "x..y"] {
            assert!(!valid_video_name(bad), "{bad}");
        }
    }
}
