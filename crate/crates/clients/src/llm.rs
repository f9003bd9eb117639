//! OpenAI-compatible streaming chat completions.
//!
//! The same client talks to vLLM, the OpenAI API or any compatible server;
//! only [`LlmConfig`] changes. Responses are read as Server-Sent Events:
//! `data: {chunk}` lines separated by blank lines and terminated by
//! `data: [DONE]`.

use std::collections::{BTreeMap, VecDeque};
use std::pin::Pin;
use std::sync::Arc;

use bytes::Bytes;
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use voxline_core::Clock;

use crate::env_or;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request failed with HTTP {status}: {body}")]
    Request { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("protocol error: {reason} (line: {line:?})")]
    Protocol { reason: String, line: String },
    #[error("stream ended without a finish_reason")]
    TruncatedStream,
    #[error("tool call `{name}` has malformed arguments: {arguments:?}")]
    MalformedToolArguments { name: String, arguments: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl LlmConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
            temperature: None,
            top_p: None,
            max_tokens: None,
        }
    }

    /// `OPENAI_BASE_URL`, `OPENAI_API_KEY`, `LLM_MODEL`.
    pub fn from_env() -> Self {
        Self::new(
            env_or("OPENAI_BASE_URL", "http://127.0.0.1:8000"),
            env_or("OPENAI_API_KEY", "not-needed"),
            env_or("LLM_MODEL", "Qwen/Qwen2.5-7B-Instruct"),
        )
    }

    /// `{base_url}/v1/chat/completions`, tolerating a base URL that already
    /// ends in `/v1`.
    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/chat/completions")
    }
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
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments_json: String,
}

impl ToolCall {
    fn to_wire(&self) -> Value {
        json!({
            "id": self.id,
            "type": "function",
            "function": { "name": self.name, "arguments": self.arguments_json },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    /// Assistant text cut short by an interruption. Local bookkeeping only;
    /// never sent on the wire.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: Some(content.into()),
            tool_calls: None,
            tool_call_id: None,
            truncated: false,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_calls(content: Option<String>, calls: Vec<ToolCall>) -> Self {
        Self {
            role: Role::Assistant,
            content,
            tool_calls: Some(calls),
            tool_call_id: None,
            truncated: false,
        }
    }

    pub fn tool_result(tool_call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: Some(content.into()),
            tool_calls: None,
            tool_call_id: Some(tool_call_id.into()),
            truncated: false,
        }
    }

    /// The chat-completions request shape of this message.
    pub fn to_wire(&self) -> Value {
        let mut m = serde_json::Map::new();
        m.insert("role".into(), serde_json::to_value(self.role).unwrap());
        match (&self.content, self.role) {
            (Some(c), _) => {
                m.insert("content".into(), Value::String(c.clone()));
            }
            // assistant tool-call turns carry an explicit null content
            (None, Role::Assistant) => {
                m.insert("content".into(), Value::Null);
            }
            _ => {}
        }
        if let Some(calls) = &self.tool_calls {
            m.insert(
                "tool_calls".into(),
                Value::Array(calls.iter().map(ToolCall::to_wire).collect()),
            );
        }
        if let Some(id) = &self.tool_call_id {
            m.insert("tool_call_id".into(), Value::String(id.clone()));
        }
        Value::Object(m)
    }
}

/// A function the model may call, in JSON-schema form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDefinition {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl ToolDefinition {
    pub fn to_wire(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeltaKind {
    Text(String),
    ToolCallFragment {
        index: usize,
        id: Option<String>,
        name: Option<String>,
        arguments: Option<String>,
    },
    /// Always the last delta of a stream; unknown reasons are passed through.
    Finish {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamDelta {
    pub kind: DeltaKind,
    pub at_ms: f64,
}

impl StreamDelta {
    pub fn is_content(&self) -> bool {
        !matches!(self.kind, DeltaKind::Finish { .. })
    }
}

#[derive(Debug, Default)]
struct PartialCall {
    id: Option<String>,
    name: Option<String>,
    arguments: String,
}

/// Folds tool-call fragments into complete calls, keyed by `index`.
#[derive(Debug, Default)]
pub struct ToolCallAccumulator {
    calls: BTreeMap<usize, PartialCall>,
}

impl ToolCallAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, delta: &StreamDelta) {
        if let DeltaKind::ToolCallFragment {
            index,
            id,
            name,
            arguments,
        } = &delta.kind
        {
            let call = self.calls.entry(*index).or_default();
            if call.id.is_none() {
                call.id.clone_from(id);
            }
            if call.name.is_none() {
                call.name.clone_from(name);
            }
            if let Some(a) = arguments {
                call.arguments.push_str(a);
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// Complete calls in index order. Missing ids are synthesised as
    /// `call_{index}`; empty argument strings become `{}`.
    pub fn finish(self) -> Result<Vec<ToolCall>, LlmError> {
        self.calls
            .into_iter()
            .map(|(index, c)| {
                let name = c.name.unwrap_or_default();
                let arguments = if c.arguments.trim().is_empty() {
                    "{}".to_string()
                } else {
                    c.arguments
                };
                match serde_json::from_str::<Value>(&arguments) {
                    Ok(Value::Object(_)) => Ok(ToolCall {
                        id: c.id.unwrap_or_else(|| format!("call_{index}")),
                        name,
                        arguments_json: arguments,
                    }),
                    _ => Err(LlmError::MalformedToolArguments { name, arguments }),
                }
            })
            .collect()
    }
}

pub fn accumulate_tool_calls<'a>(deltas: impl IntoIterator<Item = &'a StreamDelta>) -> Result<Vec<ToolCall>, LlmError> {
    let mut acc = ToolCallAccumulator::new();
    for d in deltas {
        acc.push(d);
    }
    acc.finish()
}

// --- wire shapes of streamed chunks ---

#[derive(Debug, Deserialize)]
struct ChunkWire {
    #[serde(default)]
    choices: Vec<ChoiceWire>,
}

#[derive(Debug, Deserialize)]
struct ChoiceWire {
    #[serde(default)]
    delta: Option<DeltaWire>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct DeltaWire {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<Vec<ToolCallDeltaWire>>,
}

#[derive(Debug, Deserialize)]
struct ToolCallDeltaWire {
    index: usize,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    function: Option<FunctionDeltaWire>,
}

#[derive(Debug, Default, Deserialize)]
struct FunctionDeltaWire {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    arguments: Option<String>,
}

/// What one SSE line contributes.
#[derive(Debug, PartialEq)]
enum SseLine {
    Data(String),
    Done,
    Ignore,
}

fn parse_sse_line(line: &str) -> Result<SseLine, LlmError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.is_empty() || line.starts_with(':') {
        return Ok(SseLine::Ignore);
    }
    if let Some(payload) = line.strip_prefix("data:") {
        let payload = payload.strip_prefix(' ').unwrap_or(payload);
        if payload.trim() == "[DONE]" {
            return Ok(SseLine::Done);
        }
        return Ok(SseLine::Data(payload.to_string()));
    }
    if ["event:", "id:", "retry:"].iter().any(|p| line.starts_with(p)) {
        return Ok(SseLine::Ignore);
    }
    Err(LlmError::Protocol {
        reason: "unrecognised SSE line".into(),
        line: line.to_string(),
    })
}

/// Translate one chunk payload into deltas. Empty-choice chunks (usage
/// reports, keep-alives) produce nothing.
fn chunk_to_deltas(payload: &str, at_ms: f64, out: &mut VecDeque<StreamDelta>) -> Result<bool, LlmError> {
    let chunk: ChunkWire = serde_json::from_str(payload).map_err(|e| LlmError::Protocol {
        reason: format!("invalid chunk JSON: {e}"),
        line: payload.to_string(),
    })?;
    let Some(choice) = chunk.choices.into_iter().next() else {
        return Ok(false);
    };
    let delta = choice.delta.unwrap_or_default();
    let mk = |kind| StreamDelta { kind, at_ms };
    if let Some(text) = delta.content.filter(|t| !t.is_empty()) {
        out.push_back(mk(DeltaKind::Text(text)));
    }
    for tc in delta.tool_calls.unwrap_or_default() {
        let f = tc.function.unwrap_or_default();
        out.push_back(mk(DeltaKind::ToolCallFragment {
            index: tc.index,
            id: tc.id,
            name: f.name,
            arguments: f.arguments,
        }));
    }
    if let Some(reason) = choice.finish_reason {
        out.push_back(mk(DeltaKind::Finish { reason }));
        return Ok(true);
    }
    Ok(false)
}

type ByteStream = Pin<Box<dyn Stream<Item = Result<Bytes, reqwest::Error>> + Send>>;

/// One streamed completion. Pull deltas with [`ChatStream::next_delta`].
pub struct ChatStream {
    body: ByteStream,
    clock: Clock,
    line_buf: Vec<u8>,
    pending: VecDeque<StreamDelta>,
    request_sent_ms: f64,
    first_content_ms: Option<f64>,
    finished: bool,
    done: bool,
}

impl ChatStream {
    pub fn request_sent_ms(&self) -> f64 {
        self.request_sent_ms
    }

    /// Time from request to the first text or tool-call delta.
    pub fn ttft_ms(&self) -> Option<f64> {
        self.first_content_ms.map(|t| t - self.request_sent_ms)
    }

    pub fn first_content_ms(&self) -> Option<f64> {
        self.first_content_ms
    }

    /// `None` once the stream has finished cleanly.
    pub async fn next_delta(&mut self) -> Option<Result<StreamDelta, LlmError>> {
        loop {
            if let Some(d) = self.pending.pop_front() {
                if d.is_content() && self.first_content_ms.is_none() {
                    self.first_content_ms = Some(d.at_ms);
                }
                return Some(Ok(d));
            }
            if self.done {
                return None;
            }
            // complete lines already buffered
            if let Some(pos) = self.line_buf.iter().position(|&b| b == b'\n') {
                let raw: Vec<u8> = self.line_buf.drain(..=pos).collect();
                let line = String::from_utf8_lossy(&raw[..raw.len() - 1]).into_owned();
                if let Err(e) = self.handle_line(&line) {
                    self.done = true;
                    return Some(Err(e));
                }
                continue;
            }
            match self.body.next().await {
                Some(Ok(bytes)) => self.line_buf.extend_from_slice(&bytes),
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(LlmError::Transport(e)));
                }
                None => {
                    self.done = true;
                    if !self.line_buf.is_empty() {
                        let line = String::from_utf8_lossy(&std::mem::take(&mut self.line_buf)).into_owned();
                        if let Err(e) = self.handle_line(&line) {
                            return Some(Err(e));
                        }
                        if !self.pending.is_empty() {
                            continue;
                        }
                    }
                    if !self.finished {
                        return Some(Err(LlmError::TruncatedStream));
                    }
                    return None;
                }
            }
        }
    }

    fn handle_line(&mut self, line: &str) -> Result<(), LlmError> {
        match parse_sse_line(line)? {
            SseLine::Ignore => Ok(()),
            SseLine::Done => {
                self.done = true;
                if self.finished {
                    Ok(())
                } else {
                    Err(LlmError::TruncatedStream)
                }
            }
            SseLine::Data(payload) => {
                let mut deltas = VecDeque::new();
                let finished = chunk_to_deltas(&payload, self.clock.now_ms(), &mut deltas)?;
                if self.finished && !deltas.is_empty() {
                    return Err(LlmError::Protocol {
                        reason: "content after finish_reason".into(),
                        line: line.to_string(),
                    });
                }
                self.finished |= finished;
                self.pending.extend(deltas);
                Ok(())
            }
        }
    }

    /// Drain the remaining deltas.
    pub async fn collect(mut self) -> Result<Vec<StreamDelta>, LlmError> {
        let mut out = Vec::new();
        while let Some(d) = self.next_delta().await {
            out.push(d?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::Client,
    config: Arc<LlmConfig>,
    clock: Clock,
}

impl LlmClient {
    pub fn new(config: LlmConfig, clock: Clock) -> Result<Self, LlmError> {
        if config.base_url.trim().is_empty() {
            return Err(LlmError::InvalidArgument("base_url must not be empty".into()));
        }
        Ok(Self {
            http: reqwest::Client::new(),
            config: Arc::new(config),
            clock,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn request_body(&self, messages: &[Message], tools: &[ToolDefinition]) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": messages.iter().map(Message::to_wire).collect::<Vec<_>>(),
            "stream": true,
        });
        let obj = body.as_object_mut().unwrap();
        if !tools.is_empty() {
            obj.insert(
                "tools".into(),
                Value::Array(tools.iter().map(ToolDefinition::to_wire).collect()),
            );
        }
        if let Some(t) = self.config.temperature {
            obj.insert("temperature".into(), json!(t));
        }
        if let Some(p) = self.config.top_p {
            obj.insert("top_p".into(), json!(p));
        }
        if let Some(m) = self.config.max_tokens {
            obj.insert("max_tokens".into(), json!(m));
        }
        body
    }

    /// Start a streamed completion. No retries: a replayed turn could execute
    /// tools twice.
    pub async fn chat_stream(&self, messages: &[Message], tools: &[ToolDefinition]) -> Result<ChatStream, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::InvalidArgument("messages must not be empty".into()));
        }
        let body = self.request_body(messages, tools);
        let request_sent_ms = self.clock.now_ms();
        let resp = self
            .http
            .post(self.config.completions_url())
            .bearer_auth(&self.config.api_key)
            .header("accept", "text/event-stream")
            .json(&body)
            .send()
            .await?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(LlmError::Request {
                status: status.as_u16(),
                body,
            });
        }
        Ok(ChatStream {
            body: Box::pin(resp.bytes_stream()),
            clock: self.clock,
            line_buf: Vec::new(),
            pending: VecDeque::new(),
            request_sent_ms,
            first_content_ms: None,
            finished: false,
            done: false,
        })
    }
}
