//! Two-run feedback chain.
//!
//! With lecture content, a feedback request runs three sequential stages:
//!
//! 1. **Run 1** asks the model, via the `report_missing_concepts` tool, for at
//!    most two concepts the student is missing, each with a simple question.
//! 2. **Retrieval** embeds each question and takes the top four chunks per
//!    question from the vector store. Results are concatenated in question
//!    order, deduplicated by chunk id and numbered `1..=n` as footnotes.
//! 3. **Run 2** streams the feedback. The prompt holds the role, the rules, a
//!    description of the chunk JSON, citation examples, the student context and
//!    the chunks themselves. Unknown footnote references are filtered out of
//!    the stream and definitions for the cited chunks are appended at the end.
//!
//! Without lecture content only Run 2 runs, and its prompt leaves out the
//! chunk description, the citation examples and the chunks.
//!
//! If there is no store, or Run 1 yields no concepts, a lecture request falls
//! back to the plain path and says so in [`FeedbackMetrics::degraded`].

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::time::Instant;

use crate::chunker::LectureChunk;
use crate::citation::{extract_footnote_refs, footnote_definition, Citation, CitationSet, FootnoteFilter};
use crate::embedding::{EmbedError, Embedder};
use crate::llm::{ChatMessage, CompletionRequest, LlmClient, LlmError, StreamEvent, ToolSpec};
use crate::prompt::{render, PromptTemplate};
use crate::store::{StoreError, VectorStore};

pub const CONCEPT_TOOL: &str = "report_missing_concepts";
pub const MAX_QUERIES: usize = 2;
pub const CHUNKS_PER_QUERY: usize = 4;
pub const MAX_CONTEXT_CHUNKS: usize = MAX_QUERIES * CHUNKS_PER_QUERY;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid student context: {0}")]
    InvalidContext(&'static str),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    WithLecture,
    WithoutLecture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    /// No vector store is loaded.
    NoStore,
    /// Run 1 produced no usable concept, even after the retry.
    NoConcepts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentContext {
    pub task_description: String,
    pub programming_language: String,
    pub student_code: String,
    #[serde(default)]
    pub compiler_output: String,
    #[serde(default)]
    pub unit_test_result: String,
}

impl StudentContext {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.task_description.trim().is_empty() {
            return Err(ChainError::InvalidContext("task description is empty"));
        }
        if self.student_code.trim().is_empty() {
            return Err(ChainError::InvalidContext("student code is empty"));
        }
        Ok(())
    }

    fn vars(&self) -> [(&'static str, &str); 5] {
        [
            ("task_description", self.task_description.as_str()),
            ("programming_language", self.programming_language.as_str()),
            ("student_code", self.student_code.as_str()),
            ("compiler_output", or_none(&self.compiler_output)),
            ("unit_test_result", or_none(&self.unit_test_result)),
        ]
    }
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)"
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptQuery {
    pub concept: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedEntry {
    pub footnote_id: u32,
    pub chunk: LectureChunk,
    pub score: f64,
    pub source_query: ConceptQuery,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetrievedContext {
    pub entries: Vec<RetrievedEntry>,
}

impl RetrievedContext {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn citation_set(&self) -> CitationSet {
        let mut cs = CitationSet::new();
        for e in &self.entries {
            cs.insert(footnote_definition(e.footnote_id, &e.chunk.video_file, e.chunk.start));
        }
        cs
    }

    /// `[{"id":1,"citation":"[^1]","content":"..."}]`
    pub fn to_prompt_json(&self) -> String {
        #[derive(Serialize)]
        struct PromptChunk<'a> {
            id: u32,
            citation: String,
            content: &'a str,
        }
        let chunks: Vec<PromptChunk<'_>> = self
            .entries
            .iter()
            .map(|e| PromptChunk {
                id: e.footnote_id,
                citation: format!("[^{}]", e.footnote_id),
                content: &e.chunk.text,
            })
            .collect();
        serde_json::to_string(&chunks).expect("chunk list serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackMetrics {
    pub time_to_first_token_ms: u64,
    pub total_ms: u64,
    /// Run 1 plus retrieval; 0 when Run 1 did not run.
    pub run1_ms: u64,
    pub chunks_used: usize,
    pub degraded: Option<Degradation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackResult {
    pub markdown: String,
    pub citations: Vec<Citation>,
    /// The mode the feedback was actually generated in.
    pub mode: FeedbackMode,
    pub requested_mode: FeedbackMode,
    pub metrics: FeedbackMetrics,
    /// Chunks offered to Run 2.
    #[serde(skip)]
    pub context: RetrievedContext,
}

/// JSON schema of the Run-1 tool arguments.
pub fn concept_tool_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "concepts": {
                "type": "array",
                "maxItems": MAX_QUERIES,
                "items": {
                    "type": "object",
                    "properties": {
                        "concept": {"type": "string", "minLength": 1},
                        "query": {"type": "string", "minLength": 1}
                    },
                    "required": ["concept", "query"]
                }
            }
        },
        "required": ["concepts"]
    })
}

fn student_context_text(template: &PromptTemplate, ctx: &StudentContext) -> String {
    render(&template.student_context, &ctx.vars()).trim().to_string()
}

fn join_sections(sections: &[String]) -> String {
    sections
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_run1_request(ctx: &StudentContext, template: &PromptTemplate, model: &str) -> CompletionRequest {
    let context = student_context_text(template, ctx);
    let mut vars = ctx.vars().to_vec();
    vars.push(("student_context", &context));
    CompletionRequest {
        model: model.to_string(),
        messages: vec![
            ChatMessage::system(render(&template.run1.system, &vars).trim()),
            ChatMessage::user(render(&template.run1.user, &vars).trim()),
        ],
        tools: vec![ToolSpec {
            name: CONCEPT_TOOL.to_string(),
            description: template.run1.tool_description.trim().to_string(),
            parameters: concept_tool_schema(),
        }],
        temperature: 0.0,
        stream: false,
    }
}

pub fn build_run2_prompt(
    ctx: &StudentContext,
    retrieved: &RetrievedContext,
    mode: FeedbackMode,
    template: &PromptTemplate,
    model: &str,
) -> CompletionRequest {
    let vars = ctx.vars();
    let t = &template.run2;
    let mut system = vec![render(&t.role, &vars), render(&t.rules, &vars)];
    let mut user = vec![student_context_text(template, ctx)];
    if mode == FeedbackMode::WithLecture {
        system.push(render(&t.chunk_format, &vars));
        system.push(render(&t.citation_examples, &vars));
        user.push(render(&t.lecture_chunks, &[("lecture_chunks", &retrieved.to_prompt_json())]));
    }
    CompletionRequest {
        model: model.to_string(),
        messages: vec![
            ChatMessage::system(join_sections(&system)),
            ChatMessage::user(join_sections(&user)),
        ],
        tools: Vec::new(),
        temperature: 0.0,
        stream: true,
    }
}

#[derive(Deserialize)]
struct ConceptArgs {
    concepts: Vec<ConceptQuery>,
}

enum Run1Outcome {
    Concepts(Vec<ConceptQuery>),
    Malformed,
}

fn parse_concepts(arguments: &str) -> Option<Vec<ConceptQuery>> {
    let args: ConceptArgs = serde_json::from_str(arguments).ok()?;
    Some(
        args.concepts
            .into_iter()
            .map(|c| ConceptQuery {
                concept: c.concept.trim().to_string(),
                query: c.query.trim().to_string(),
            })
            .filter(|c| !c.concept.is_empty() && !c.query.is_empty())
            .take(MAX_QUERIES)
            .collect(),
    )
}

fn ms(d: std::time::Duration) -> u64 {
    d.as_millis().try_into().unwrap_or(u64::MAX)
}

#[derive(Clone)]
pub struct FeedbackChain {
    llm: LlmClient,
    embedder: Arc<dyn Embedder>,
    store: Option<Arc<VectorStore>>,
    template: Arc<PromptTemplate>,
    model: String,
}

impl FeedbackChain {
    pub fn new(
        llm: LlmClient,
        embedder: Arc<dyn Embedder>,
        store: Option<Arc<VectorStore>>,
        template: Arc<PromptTemplate>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            llm,
            embedder,
            store,
            template,
            model: model.into(),
        }
    }

    pub fn has_store(&self) -> bool {
        self.store.is_some()
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    async fn run1_attempt(&self, ctx: &StudentContext) -> Result<Run1Outcome, ChainError> {
        let request = build_run1_request(ctx, &self.template, &self.model);
        let mut events = self.llm.complete(request).await?;
        let mut outcome = Run1Outcome::Malformed;
        while let Some(event) = events.next().await {
            match event {
                Ok(StreamEvent::ToolCall(call)) if call.name == CONCEPT_TOOL => {
                    if let Some(concepts) = parse_concepts(&call.arguments) {
                        outcome = Run1Outcome::Concepts(concepts);
                    }
                }
                Ok(_) => {}
                // an overlong list is not malformed: it is cut to the first two
                Err(LlmError::MalformedToolCall {
                    name,
                    arguments,
                    violations,
                }) if name == CONCEPT_TOOL && violations.iter().all(|v| v.keyword == "maxItems") => {
                    if let Some(concepts) = parse_concepts(&arguments) {
                        outcome = Run1Outcome::Concepts(concepts);
                    }
                    break;
                }
                Err(LlmError::MalformedToolCall { violations, .. }) => {
                    tracing::warn!(?violations, "malformed concept report");
                    return Ok(Run1Outcome::Malformed);
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(outcome)
    }

    /// Run 1: up to two concept queries; one retry on malformed output, then empty.
    pub async fn identify_missing_concepts(&self, ctx: &StudentContext) -> Result<Vec<ConceptQuery>, ChainError> {
        for attempt in 1..=2 {
            match self.run1_attempt(ctx).await? {
                Run1Outcome::Concepts(c) => return Ok(c),
                Run1Outcome::Malformed => tracing::warn!(attempt, "run 1 gave no usable tool call"),
            }
        }
        Ok(Vec::new())
    }

    pub async fn retrieve_context(&self, queries: &[ConceptQuery]) -> Result<RetrievedContext, ChainError> {
        match &self.store {
            Some(store) => retrieve_context(queries, store, self.embedder.as_ref()).await,
            None => Ok(RetrievedContext::default()),
        }
    }

    /// Generates feedback, passing streamed markdown to `on_token`.
    ///
    /// The concatenation of everything passed to `on_token` equals the
    /// returned `markdown`; footnote definitions arrive as the last piece.
    pub async fn generate<F>(
        &self,
        ctx: &StudentContext,
        mode: FeedbackMode,
        on_token: F,
    ) -> Result<FeedbackResult, ChainError>
    where
        F: FnMut(&str) + Send,
    {
        self.generate_since(Instant::now(), ctx, mode, on_token).await
    }

    /// Like [`generate`](Self::generate), with latency measured from `accepted_at`.
    pub async fn generate_since<F>(
        &self,
        accepted_at: Instant,
        ctx: &StudentContext,
        requested_mode: FeedbackMode,
        mut on_token: F,
    ) -> Result<FeedbackResult, ChainError>
    where
        F: FnMut(&str) + Send,
    {
        ctx.validate()?;
        let mut mode = requested_mode;
        let mut degraded = None;
        let mut retrieved = RetrievedContext::default();
        let mut run1_ms = 0;

        if mode == FeedbackMode::WithLecture {
            if self.store.is_none() {
                mode = FeedbackMode::WithoutLecture;
                degraded = Some(Degradation::NoStore);
            } else {
                let concepts = self.identify_missing_concepts(ctx).await?;
                if concepts.is_empty() {
                    mode = FeedbackMode::WithoutLecture;
                    degraded = Some(Degradation::NoConcepts);
                } else {
                    retrieved = self.retrieve_context(&concepts).await?;
                }
                run1_ms = ms(accepted_at.elapsed());
            }
        }

        let citations = retrieved.citation_set();
        let request = build_run2_prompt(ctx, &retrieved, mode, &self.template, &self.model);
        let mut events = self.llm.complete(request).await?;
        let mut filter = FootnoteFilter::new(&citations);
        let mut body = String::new();
        let mut first_token = None;
        while let Some(event) = events.next().await {
            match event? {
                StreamEvent::TextDelta(delta) => {
                    first_token.get_or_insert_with(|| accepted_at.elapsed());
                    let out = filter.push(&delta);
                    if !out.is_empty() {
                        on_token(&out);
                        body.push_str(&out);
                    }
                }
                StreamEvent::ToolCall(call) => tracing::warn!(tool = call.name, "ignoring tool call in run 2"),
                StreamEvent::End { .. } => break,
            }
        }
        let tail = filter.finish();
        body.push_str(&tail);
        let referenced: BTreeSet<u32> = extract_footnote_refs(&body).into_iter().collect();
        let (suffix, cited) = citations.definitions_suffix(&referenced);
        let flushed = tail + &suffix;
        if !flushed.is_empty() {
            on_token(&flushed);
        }
        body.push_str(&suffix);

        let total = accepted_at.elapsed();
        Ok(FeedbackResult {
            markdown: body,
            citations: cited,
            mode,
            requested_mode,
            metrics: FeedbackMetrics {
                time_to_first_token_ms: ms(first_token.unwrap_or(total)),
                total_ms: ms(total),
                run1_ms,
                chunks_used: retrieved.len(),
                degraded,
            },
            context: retrieved,
        })
    }

    /// Generates feedback without observing the stream.
    pub async fn generate_collected(
        &self,
        ctx: &StudentContext,
        mode: FeedbackMode,
    ) -> Result<FeedbackResult, ChainError> {
        self.generate(ctx, mode, |_| {}).await
    }
}

/// Embeds each query, takes its top chunks, and numbers the deduplicated union.
pub async fn retrieve_context(
    queries: &[ConceptQuery],
    store: &VectorStore,
    embedder: &dyn Embedder,
) -> Result<RetrievedContext, ChainError> {
    let configured = &embedder.descriptor().id;
    if *configured != store.manifest().embedder_id {
        return Err(StoreError::EmbedderMismatch {
            stored: store.manifest().embedder_id.clone(),
            configured: configured.clone(),
        }
        .into());
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for query in queries.iter().take(MAX_QUERIES) {
        let vector = embedder.embed(&query.query).await?;
        for hit in store.top_k(&vector, CHUNKS_PER_QUERY)? {
            if !seen.insert(hit.record.chunk_id.clone()) {
                continue;
            }
            entries.push(RetrievedEntry {
                footnote_id: entries.len() as u32 + 1,
                chunk: hit.record.to_chunk(),
                score: hit.score,
                source_query: query.clone(),
            });
        }
    }
    Ok(RetrievedContext { entries })
}
