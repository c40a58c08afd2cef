//! Chat-completion contract with tool calls and token streaming.
//!
//! Providers implement [`ChatProvider`] and return a stream of [`StreamEvent`]s.
//! [`LlmClient`] wraps a provider, checks requests, validates tool-call
//! arguments against the declared JSON schema and enforces that every stream
//! ends with exactly one [`StreamEvent::End`].
//!
//! [`ScriptedProvider`] replays canned completions (with optional delays) and
//! records every request, for tests and offline demos. [`OpenAiCompatProvider`]
//! talks to a chat-completions HTTP endpoint with server-sent event streaming.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use eventsource_stream::Eventsource;
use futures::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub instance_path: String,
    pub keyword: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("LLM provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed call to tool {name:?}: {}", violations.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    MalformedToolCall {
        name: String,
        arguments: String,
        violations: Vec<SchemaViolation>,
    },
    #[error("completion stream interrupted: {0}")]
    StreamInterrupted(String),
    #[error("scripted provider has no completions left")]
    ScriptExhausted,
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<ToolSpec>,
    pub temperature: f64,
    pub stream: bool,
}

impl CompletionRequest {
    /// Full prompt text, messages separated by blank lines.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let invalid = |m: &str| Err(LlmError::InvalidRequest(m.to_string()));
        if self.messages.is_empty() {
            return invalid("no messages");
        }
        let systems: Vec<usize> = self
            .messages
            .iter()
            .enumerate()
            .filter(|(_, m)| m.role == Role::System)
            .map(|(i, _)| i)
            .collect();
        if systems.len() > 1 || systems.first().is_some_and(|i| *i != 0) {
            return invalid("a system message may only appear once, first");
        }
        let mut names = HashSet::new();
        if !self.tools.iter().all(|t| names.insert(t.name.as_str())) {
            return invalid("duplicate tool name");
        }
        if !self.temperature.is_finite() {
            return invalid("temperature must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    /// Raw JSON argument text as produced by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum StreamEvent {
    TextDelta(String),
    ToolCall(ToolCall),
    End { finish_reason: String },
}

pub type EventStream = BoxStream<'static, Result<StreamEvent, LlmError>>;

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, request: CompletionRequest) -> Result<EventStream, LlmError>;
}

/// Checks a tool call against the request's tool declarations.
pub fn validate_tool_call(call: &ToolCall, tools: &[ToolSpec]) -> Result<Value, LlmError> {
    let malformed = |violations| LlmError::MalformedToolCall {
        name: call.name.clone(),
        arguments: call.arguments.clone(),
        violations,
    };
    let Some(spec) = tools.iter().find(|t| t.name == call.name) else {
        return Err(malformed(vec![SchemaViolation {
            instance_path: String::new(),
            keyword: "name".into(),
            message: format!("unknown tool {:?}", call.name),
        }]));
    };
    let args: Value = serde_json::from_str(&call.arguments).map_err(|e| {
        malformed(vec![SchemaViolation {
            instance_path: String::new(),
            keyword: "json".into(),
            message: format!("arguments are not valid JSON: {e}"),
        }])
    })?;
    let validator = jsonschema::validator_for(&spec.parameters)
        .map_err(|e| LlmError::InvalidRequest(format!("tool {:?} has an invalid schema: {e}", spec.name)))?;
    let violations: Vec<SchemaViolation> = validator
        .iter_errors(&args)
        .map(|e| SchemaViolation {
            instance_path: e.instance_path().as_str().to_string(),
            keyword: e.kind().keyword().to_string(),
            message: e.to_string(),
        })
        .collect();
    if violations.is_empty() {
        Ok(args)
    } else {
        Err(malformed(violations))
    }
}

#[derive(Clone)]
pub struct LlmClient {
    provider: Arc<dyn ChatProvider>,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self { provider }
    }

    pub async fn complete(&self, request: CompletionRequest) -> Result<EventStream, LlmError> {
        request.validate()?;
        let tools = request.tools.clone();
        let inner = self.provider.complete(request).await?;
        Ok(checked_stream(inner, tools))
    }
}

/// Validates tool calls, stops after `End`, and turns a stream that stops
/// early into `StreamInterrupted`.
fn checked_stream(inner: EventStream, tools: Vec<ToolSpec>) -> EventStream {
    stream::unfold(Some((inner, tools)), |state| async move {
        let (mut inner, tools) = state?;
        match inner.next().await {
            None => Some((
                Err(LlmError::StreamInterrupted("stream ended without a finish event".into())),
                None,
            )),
            Some(Err(e)) => Some((Err(e), None)),
            Some(Ok(StreamEvent::End { finish_reason })) => Some((Ok(StreamEvent::End { finish_reason }), None)),
            Some(Ok(StreamEvent::ToolCall(call))) => match validate_tool_call(&call, &tools) {
                Ok(_) => Some((Ok(StreamEvent::ToolCall(call)), Some((inner, tools)))),
                Err(e) => Some((Err(e), None)),
            },
            Some(Ok(ev)) => Some((Ok(ev), Some((inner, tools)))),
        }
    })
    .boxed()
}

/// One canned completion for [`ScriptedProvider`].
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "ScriptEntry")]
pub struct ScriptedCompletion {
    events: Vec<StreamEvent>,
    first_event_delay: Option<Duration>,
    event_delay: Duration,
    ending: ScriptEnding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ScriptEnding {
    Finish,
    Interrupt,
    Unavailable,
}

impl ScriptedCompletion {
    fn from_events(events: Vec<StreamEvent>) -> Self {
        Self {
            events,
            first_event_delay: None,
            event_delay: Duration::ZERO,
            ending: ScriptEnding::Finish,
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self::from_events(vec![StreamEvent::TextDelta(text.into())])
    }

    pub fn deltas<I, S>(deltas: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_events(deltas.into_iter().map(|d| StreamEvent::TextDelta(d.into())).collect())
    }

    /// A tool call with verbatim argument text (which need not be valid JSON).
    pub fn tool_call_raw(name: impl Into<String>, arguments: impl Into<String>) -> Self {
        Self::from_events(vec![StreamEvent::ToolCall(ToolCall {
            name: name.into(),
            arguments: arguments.into(),
        })])
    }

    pub fn tool_call(name: impl Into<String>, arguments: &Value) -> Self {
        Self::tool_call_raw(name, arguments.to_string())
    }

    /// The provider call itself fails.
    pub fn unavailable() -> Self {
        Self {
            ending: ScriptEnding::Unavailable,
            ..Self::from_events(Vec::new())
        }
    }

    /// The stream errors with `StreamInterrupted` after its events instead of finishing.
    pub fn interrupted(mut self) -> Self {
        self.ending = ScriptEnding::Interrupt;
        self
    }

    pub fn with_first_event_delay(mut self, delay: Duration) -> Self {
        self.first_event_delay = Some(delay);
        self
    }

    /// Delay before every event except the final `End` (and the first one, if
    /// a first-event delay is set).
    pub fn with_event_delay(mut self, delay: Duration) -> Self {
        self.event_delay = delay;
        self
    }

    fn into_stream(self) -> EventStream {
        let n = self.events.len();
        let mut steps: Vec<(Duration, Result<StreamEvent, LlmError>)> = self
            .events
            .into_iter()
            .enumerate()
            .map(|(i, ev)| {
                let delay = match (i, self.first_event_delay) {
                    (0, Some(d)) => d,
                    _ => self.event_delay,
                };
                (delay, Ok(ev))
            })
            .collect();
        let tail_delay = if n == 0 {
            self.first_event_delay.unwrap_or(self.event_delay)
        } else {
            Duration::ZERO
        };
        steps.push(match self.ending {
            ScriptEnding::Interrupt => (
                tail_delay,
                Err(LlmError::StreamInterrupted("scripted interruption".into())),
            ),
            _ => (
                tail_delay,
                Ok(StreamEvent::End {
                    finish_reason: "stop".into(),
                }),
            ),
        });
        stream::iter(steps)
            .then(|(delay, ev)| async move {
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
                ev
            })
            .boxed()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptEntry {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    deltas: Option<Vec<String>>,
    #[serde(default)]
    tool_call: Option<ScriptToolCall>,
    #[serde(default)]
    unavailable: bool,
    #[serde(default)]
    interrupted: bool,
    #[serde(default)]
    first_event_delay_ms: Option<u64>,
    #[serde(default)]
    event_delay_ms: u64,
}

#[derive(Deserialize)]
struct ScriptToolCall {
    name: String,
    arguments: Value,
}

impl TryFrom<ScriptEntry> for ScriptedCompletion {
    type Error = String;

    fn try_from(e: ScriptEntry) -> Result<Self, Self::Error> {
        let mut c = match (e.text, e.deltas, e.tool_call, e.unavailable) {
            (Some(t), None, None, false) => Self::text(t),
            (None, Some(d), None, false) => Self::deltas(d),
            (None, None, Some(tc), false) => match tc.arguments {
                Value::String(raw) => Self::tool_call_raw(tc.name, raw),
                args => Self::tool_call(tc.name, &args),
            },
            (None, None, None, true) => Self::unavailable(),
            _ => return Err("script entry needs exactly one of text, deltas, tool_call, unavailable".into()),
        };
        if e.interrupted {
            c = c.interrupted();
        }
        if let Some(ms) = e.first_event_delay_ms {
            c = c.with_first_event_delay(Duration::from_millis(ms));
        }
        Ok(c.with_event_delay(Duration::from_millis(e.event_delay_ms)))
    }
}

#[derive(Debug, Default)]
struct Queue {
    pending: VecDeque<ScriptedCompletion>,
    original: Vec<ScriptedCompletion>,
    cycle: bool,
}

impl Queue {
    fn new(script: Vec<ScriptedCompletion>, cycle: bool) -> Self {
        Self {
            pending: script.iter().cloned().collect(),
            original: if cycle { script } else { Vec::new() },
            cycle,
        }
    }

    fn next(&mut self) -> Option<ScriptedCompletion> {
        if self.pending.is_empty() && self.cycle {
            self.pending.extend(self.original.iter().cloned());
        }
        self.pending.pop_front()
    }
}

#[derive(Debug)]
enum Queues {
    Single(Queue),
    /// Requests that declare tools draw from `tools`, all others from `text`.
    Split { tools: Queue, text: Queue },
}

impl Default for Queues {
    fn default() -> Self {
        Self::Single(Queue::default())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitScript {
    tools: Vec<ScriptedCompletion>,
    text: Vec<ScriptedCompletion>,
}

/// Replays canned completions in order and records every request.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queues: Mutex<Queues>,
    log: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedProvider {
    pub fn new(script: impl IntoIterator<Item = ScriptedCompletion>) -> Self {
        Self::from_queues(Queues::Single(Queue::new(script.into_iter().collect(), false)))
    }

    /// Starts over from the first completion once the script runs out.
    pub fn cycling(script: impl IntoIterator<Item = ScriptedCompletion>) -> Self {
        Self::from_queues(Queues::Single(Queue::new(script.into_iter().collect(), true)))
    }

    /// Separate scripts for requests with tools (concept identification) and
    /// without, so interleaved conversations stay in step.
    pub fn split(
        tools: impl IntoIterator<Item = ScriptedCompletion>,
        text: impl IntoIterator<Item = ScriptedCompletion>,
        cycle: bool,
    ) -> Self {
        Self::from_queues(Queues::Split {
            tools: Queue::new(tools.into_iter().collect(), cycle),
            text: Queue::new(text.into_iter().collect(), cycle),
        })
    }

    fn from_queues(queues: Queues) -> Self {
        Self {
            queues: Mutex::new(queues),
            log: Mutex::default(),
        }
    }

    /// Parses either a JSON array of script entries such as
    /// `[{"text": "Hi", "first_event_delay_ms": 100}, {"tool_call": {"name": "f", "arguments": {}}}]`
    /// or an object `{"tools": [...], "text": [...]}` for a [`split`](Self::split) script.
    pub fn from_json(json: &str, cycle: bool) -> Result<Self, serde_json::Error> {
        let value: Value = serde_json::from_str(json)?;
        Ok(if value.is_object() {
            let SplitScript { tools, text } = serde_json::from_value(value)?;
            Self::split(tools, text, cycle)
        } else {
            Self::from_queues(Queues::Single(Queue::new(serde_json::from_value(value)?, cycle)))
        })
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }

    /// Completions left before the script runs out (or cycles).
    pub fn remaining(&self) -> usize {
        match &*self.queues.lock().expect("script poisoned") {
            Queues::Single(q) => q.pending.len(),
            Queues::Split { tools, text } => tools.pending.len() + text.pending.len(),
        }
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn complete(&self, request: CompletionRequest) -> Result<EventStream, LlmError> {
        let next = match &mut *self.queues.lock().expect("script poisoned") {
            Queues::Single(q) => q.next(),
            Queues::Split { tools, .. } if !request.tools.is_empty() => tools.next(),
            Queues::Split { text, .. } => text.next(),
        };
        self.log.lock().expect("request log poisoned").push(request);
        let completion = next.ok_or(LlmError::ScriptExhausted)?;
        if completion.ending == ScriptEnding::Unavailable {
            if let Some(d) = completion.first_event_delay {
                tokio::time::sleep(d).await;
            }
            return Err(LlmError::ProviderUnavailable("scripted outage".into()));
        }
        Ok(completion.into_stream())
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiCompatConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl OpenAiCompatConfig {
    /// Reads `LLM_API_URL`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Option<Self> {
        Some(Self {
            url: std::env::var("LLM_API_URL").ok()?,
            api_key: std::env::var("LLM_API_KEY").ok(),
            model: std::env::var("LLM_MODEL").ok()?,
        })
    }
}

/// Client for the de-facto chat-completions wire format.
pub struct OpenAiCompatProvider {
    config: OpenAiCompatConfig,
    http: reqwest::Client,
}

impl OpenAiCompatProvider {
    pub fn new(config: OpenAiCompatConfig) -> Self {
        Self {
            config,
            http: reqwest::Client::new(),
        }
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }
}

pub fn wire_body(request: &CompletionRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "stream": request.stream,
    });
    if !request.tools.is_empty() {
        body["tools"] = request
            .tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {"name": t.name, "description": t.description, "parameters": t.parameters},
                })
            })
            .collect();
        body["tool_choice"] = json!("required");
    }
    body
}

#[derive(Default)]
struct ChunkAccumulator {
    pending: VecDeque<StreamEvent>,
    tool_calls: BTreeMap<u64, ToolCall>,
    finished: bool,
}

impl ChunkAccumulator {
    fn finish(&mut self, reason: String) {
        for (_, call) in std::mem::take(&mut self.tool_calls) {
            self.pending.push_back(StreamEvent::ToolCall(call));
        }
        self.pending.push_back(StreamEvent::End { finish_reason: reason });
        self.finished = true;
    }

    /// Folds one `data:` payload into pending events.
    fn absorb(&mut self, data: &str) -> Result<(), LlmError> {
        if data.trim() == "[DONE]" {
            if !self.finished {
                self.finish("stop".into());
            }
            return Ok(());
        }
        let chunk: Value = serde_json::from_str(data)
            .map_err(|e| LlmError::StreamInterrupted(format!("bad stream chunk: {e}")))?;
        let Some(choice) = chunk["choices"].get(0) else {
            return Ok(());
        };
        let delta = &choice["delta"];
        if let Some(text) = delta["content"].as_str() {
            if !text.is_empty() {
                self.pending.push_back(StreamEvent::TextDelta(text.to_string()));
            }
        }
        if let Some(calls) = delta["tool_calls"].as_array() {
            for (pos, call) in calls.iter().enumerate() {
                let index = call["index"].as_u64().unwrap_or(pos as u64);
                let entry = self.tool_calls.entry(index).or_insert_with(|| ToolCall {
                    name: String::new(),
                    arguments: String::new(),
                });
                if let Some(name) = call["function"]["name"].as_str() {
                    entry.name.push_str(name);
                }
                if let Some(args) = call["function"]["arguments"].as_str() {
                    entry.arguments.push_str(args);
                }
            }
        }
        if let Some(reason) = choice["finish_reason"].as_str() {
            if !self.finished {
                self.finish(reason.to_string());
            }
        }
        Ok(())
    }

    fn from_message(body: &Value) -> Self {
        let mut acc = Self::default();
        let message = &body["choices"][0]["message"];
        if let Some(text) = message["content"].as_str() {
            acc.pending.push_back(StreamEvent::TextDelta(text.to_string()));
        }
        for (i, call) in message["tool_calls"].as_array().into_iter().flatten().enumerate() {
            acc.tool_calls.insert(
                i as u64,
                ToolCall {
                    name: call["function"]["name"].as_str().unwrap_or_default().to_string(),
                    arguments: call["function"]["arguments"].as_str().unwrap_or_default().to_string(),
                },
            );
        }
        let reason = body["choices"][0]["finish_reason"].as_str().unwrap_or("stop").to_string();
        acc.finish(reason);
        acc
    }
}

#[async_trait]
impl ChatProvider for OpenAiCompatProvider {
    async fn complete(&self, request: CompletionRequest) -> Result<EventStream, LlmError> {
        let unavailable = |e: reqwest::Error| LlmError::ProviderUnavailable(e.to_string());
        let mut req = self.http.post(&self.config.url).json(&wire_body(&request));
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(unavailable)?.error_for_status().map_err(unavailable)?;

        if !request.stream {
            let body: Value = resp.json().await.map_err(unavailable)?;
            let acc = ChunkAccumulator::from_message(&body);
            return Ok(stream::iter(acc.pending.into_iter().map(Ok)).boxed());
        }

        let events = resp.bytes_stream().eventsource();
        let state = (events.boxed(), ChunkAccumulator::default(), false);
        Ok(stream::unfold(state, |(mut events, mut acc, mut failed)| async move {
            loop {
                if failed {
                    return None;
                }
                if let Some(ev) = acc.pending.pop_front() {
                    return Some((Ok(ev), (events, acc, failed)));
                }
                if acc.finished {
                    return None;
                }
                match events.next().await {
                    Some(Ok(event)) => {
                        if let Err(e) = acc.absorb(&event.data) {
                            failed = true;
                            return Some((Err(e), (events, acc, failed)));
                        }
                    }
                    Some(Err(e)) => {
                        failed = true;
                        return Some((Err(LlmError::StreamInterrupted(e.to_string())), (events, acc, failed)));
                    }
                    // the checked wrapper reports a missing finish event
                    None => return None,
                }
            }
        })
        .boxed())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    async fn collect(s: EventStream) -> Vec<Result<StreamEvent, LlmError>> {
        s.collect().await
    }

    fn request(tools: Vec<ToolSpec>) -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            tools,
            temperature: 0.0,
            stream: true,
        }
    }

    fn concept_tool() -> ToolSpec {
        ToolSpec {
            name: "report".into(),
            description: "d".into(),
            parameters: json!({
                "type": "object",
                "properties": {"concepts": {"type": "array", "maxItems": 2, "items": {"type": "string"}}},
                "required": ["concepts"],
            }),
        }
    }

    #[tokio::test]
    async fn scripted_text() {
        let client = LlmClient::new(Arc::new(ScriptedProvider::new([ScriptedCompletion::text("Hi")])));
        let events = collect(client.complete(request(vec![])).await.unwrap()).await;
        assert_eq!(
            events,
            vec![
                Ok(StreamEvent::TextDelta("Hi".into())),
                Ok(StreamEvent::End {
                    finish_reason: "stop".into()
                })
            ]
        );
    }

    #[tokio::test]
    async fn scripted_tool_call_validates() {
        let args = json!({"concepts": ["a"]});
        let provider = Arc::new(ScriptedProvider::new([
            ScriptedCompletion::tool_call("report", &args),
            ScriptedCompletion::tool_call("report", &json!({"concepts": [1]})),
            ScriptedCompletion::tool_call_raw("report", "{not json"),
            ScriptedCompletion::tool_call("other", &args),
        ]));
        let client = LlmClient::new(provider.clone());
        let ok = collect(client.complete(request(vec![concept_tool()])).await.unwrap()).await;
        assert_eq!(ok.len(), 2);
        assert!(matches!(&ok[0], Ok(StreamEvent::ToolCall(c)) if c.name == "report"));

        for keyword in ["type", "json", "name"] {
            let events = collect(client.complete(request(vec![concept_tool()])).await.unwrap()).await;
            match &events[..] {
                [Err(LlmError::MalformedToolCall { violations, .. })] => assert_eq!(violations[0].keyword, keyword),
                other => panic!("{other:?}"),
            }
        }
        assert_eq!(provider.requests().len(), 4);
    }

    #[tokio::test]
    async fn max_items_violation_is_reported() {
        let provider = Arc::new(ScriptedProvider::new([ScriptedCompletion::tool_call(
            "report",
            &json!({"concepts": ["a", "b", "c"]}),
        )]));
        let client = LlmClient::new(provider);
        let events = collect(client.complete(request(vec![concept_tool()])).await.unwrap()).await;
        match &events[..] {
            [Err(LlmError::MalformedToolCall { violations, .. })] => {
                assert_eq!(violations[0].keyword, "maxItems");
                assert_eq!(violations[0].instance_path, "/concepts");
            }
            other => panic!("{other:?}"),
        }
    }

    #[tokio::test]
    async fn script_queue_semantics() {
        let p = ScriptedProvider::new([ScriptedCompletion::text("A"), ScriptedCompletion::text("B")]);
        let client = LlmClient::new(Arc::new(p));
        for expected in ["A", "B"] {
            let events = collect(client.complete(request(vec![])).await.unwrap()).await;
            assert_eq!(events[0], Ok(StreamEvent::TextDelta(expected.into())));
        }
        assert!(matches!(client.complete(request(vec![])).await, Err(LlmError::ScriptExhausted)));
    }

    #[tokio::test]
    async fn cycling_script_restarts() {
        let client = LlmClient::new(Arc::new(ScriptedProvider::cycling([ScriptedCompletion::text("A")])));
        for _ in 0..3 {
            assert!(client.complete(request(vec![])).await.is_ok());
        }
    }

    #[tokio::test]
    async fn identical_requests_give_identical_events() {
        let make = || ScriptedProvider::new([ScriptedCompletion::deltas(["a", "b", "c"])]);
        let (p1, p2) = (make(), make());
        let a = collect(p1.complete(request(vec![])).await.unwrap()).await;
        let b = collect(p2.complete(request(vec![])).await.unwrap()).await;
        assert_eq!(a, b);
    }

    #[tokio::test(start_paused = true)]
    async fn per_event_delay_timing() {
        let p = ScriptedProvider::new([ScriptedCompletion::deltas(["a", "b", "c", "d", "e"])
            .with_event_delay(Duration::from_millis(100))]);
        let start = tokio::time::Instant::now();
        let mut s = LlmClient::new(Arc::new(p)).complete(request(vec![])).await.unwrap();
        let mut first = None;
        let mut text = String::new();
        while let Some(ev) = s.next().await {
            if let StreamEvent::TextDelta(d) = ev.unwrap() {
                first.get_or_insert(start.elapsed());
                text.push_str(&d);
            }
        }
        assert_eq!(first.unwrap(), Duration::from_millis(100));
        assert_eq!(start.elapsed(), Duration::from_millis(500));
        assert_eq!(text, "abcde");
    }

    #[tokio::test]
    async fn interrupted_and_unavailable() {
        let p = ScriptedProvider::new([
            ScriptedCompletion::deltas(["par", "tial"]).interrupted(),
            ScriptedCompletion::unavailable(),
        ]);
        let client = LlmClient::new(Arc::new(p));
        let events = collect(client.complete(request(vec![])).await.unwrap()).await;
        assert!(matches!(events.last(), Some(Err(LlmError::StreamInterrupted(_)))));
        assert!(matches!(
            client.complete(request(vec![])).await,
            Err(LlmError::ProviderUnavailable(_))
        ));
    }

    #[test]
    fn request_validation() {
        let mut r = request(vec![concept_tool(), concept_tool()]);
        assert!(r.validate().is_err());
        r.tools.pop();
        assert!(r.validate().is_ok());
        r.messages.push(ChatMessage::system("again"));
        assert!(r.validate().is_err());
        r.messages = vec![ChatMessage::user("u"), ChatMessage::system("late")];
        assert!(r.validate().is_err());
    }

    #[test]
    fn script_json_entries() {
        let p = ScriptedProvider::from_json(
            r#"[{"text": "Hi", "first_event_delay_ms": 5},
                {"tool_call": {"name": "f", "arguments": {"x": 1}}},
                {"tool_call": {"name": "f", "arguments": "{broken"}},
                {"deltas": ["a", "b"], "interrupted": true},
                {"unavailable": true}]"#,
            false,
        )
        .unwrap();
        assert_eq!(p.remaining(), 5);
        assert!(ScriptedProvider::from_json(r#"[{"text": "a", "deltas": ["b"]}]"#, false).is_err());
    }

    #[tokio::test]
    async fn split_script_routes_by_tools() {
        let p = ScriptedProvider::from_json(
            r#"{"tools": [{"tool_call": {"name": "report", "arguments": {"concepts": []}}}], "text": [{"text": "A"}, {"text": "B"}]}"#,
            true,
        )
        .unwrap();
        let first = collect(p.complete(request(vec![])).await.unwrap()).await;
        assert!(matches!(&first[0], Ok(StreamEvent::TextDelta(t)) if t == "A"));
        let tool = collect(p.complete(request(vec![concept_tool()])).await.unwrap()).await;
        assert!(matches!(&tool[0], Ok(StreamEvent::ToolCall(c)) if c.name == "report"));
        let second = collect(p.complete(request(vec![])).await.unwrap()).await;
        assert!(matches!(&second[0], Ok(StreamEvent::TextDelta(t)) if t == "B"));
        assert_eq!(p.requests().len(), 3);
        assert!(ScriptedProvider::from_json(r#"{"tools": [], "txt": []}"#, false).is_err());
    }

    #[test]
    fn wire_body_shape() {
        let body = wire_body(&request(vec![concept_tool()]));
        assert_eq!(body["messages"][0], json!({"role": "system", "content": "s"}));
        assert_eq!(body["tools"][0]["type"], "function");
        assert_eq!(body["tools"][0]["function"]["name"], "report");
        assert_eq!(body["temperature"], 0.0);
        assert!(wire_body(&request(vec![])).get("tools").is_none());
    }

    #[test]
    fn accumulator_assembles_tool_call_fragments() {
        let mut acc = ChunkAccumulator::default();
        acc.absorb(r#"{"choices":[{"delta":{"tool_calls":[{"index":0,"function":{"name":"report","arguments":"{\"conc"}}]}}]}"#).unwrap();
        acc.absorb(r#"{"choices":[{"delta":{"tool_calls":[{"index":0,"function":{"arguments":"epts\":[]}"}}]}}]}"#).unwrap();
        acc.absorb(r#"{"choices":[{"delta":{},"finish_reason":"tool_calls"}]}"#).unwrap();
        acc.absorb("[DONE]").unwrap();
        let events: Vec<_> = acc.pending.into_iter().collect();
        assert_eq!(
            events,
            vec![
                StreamEvent::ToolCall(ToolCall {
                    name: "report".into(),
                    arguments: r#"{"concepts":[]}"#.into()
                }),
                StreamEvent::End {
                    finish_reason: "tool_calls".into()
                }
            ]
        );
    }
}
