//! The tool-use loop: send history and tool definitions, execute any
//! requested calls, append their results, repeat until the model answers in
//! text or the depth bound is hit.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;
use tracing::{debug, warn};
use voxline_clients::llm::{DeltaKind, LlmClient, LlmConfig, LlmError, Message, Role, ToolCallAccumulator};
use voxline_core::Clock;

use crate::store::HospitalStore;
use crate::tools::{execute_tool, hospital_tools, ToolRegistry};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are the front-desk receptionist of a small \
hospital, speaking with a caller on the phone. Keep replies short and conversational: one or \
two plain sentences, no lists or markdown. Use the tools to look up patients, doctors and open \
slots. Always confirm the doctor, date and time with the caller before booking or cancelling.";

pub const DEFAULT_FALLBACK: &str = "Sorry, I'm having trouble completing that request right now. Could you try again?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub system_prompt: String,
    pub max_tool_depth: u32,
    /// Spoken when the depth bound is exceeded.
    pub fallback_text: String,
    pub llm: LlmConfig,
}

impl AgentConfig {
    pub fn new(llm: LlmConfig) -> Self {
        Self {
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            max_tool_depth: 5,
            fallback_text: DEFAULT_FALLBACK.into(),
            llm,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_tool_depth < 1 {
            return Err(AgentError::InvalidArgument("max_tool_depth must be at least 1".into()));
        }
        if self.system_prompt.trim().is_empty() {
            return Err(AgentError::InvalidArgument("system_prompt must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    /// The token receiver went away mid-turn.
    #[error("token output closed")]
    OutputClosed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TurnSummary {
    pub rounds: u32,
    /// Tool names in execution order.
    pub tools_executed: Vec<String>,
    /// Clock time of the first text token forwarded downstream.
    pub first_delta_ms: Option<f64>,
    pub llm_done_ms: Option<f64>,
    pub depth_exceeded: bool,
    /// Text of the last assistant message (the fallback if depth was exceeded).
    pub final_text: String,
}

/// One conversation's agent: owns its store, so sessions never share state.
pub struct Agent {
    config: AgentConfig,
    llm: LlmClient,
    registry: ToolRegistry,
    store: HospitalStore,
    clock: Clock,
}

impl Agent {
    pub fn new(
        config: AgentConfig,
        store: HospitalStore,
        registry: ToolRegistry,
        clock: Clock,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let llm = LlmClient::new(config.llm.clone(), clock)?;
        Ok(Self {
            config,
            llm,
            registry,
            store,
            clock,
        })
    }

    /// The receptionist agent over `store`.
    pub fn hospital(config: AgentConfig, store: HospitalStore, clock: Clock) -> Result<Self, AgentError> {
        Self::new(config, store, hospital_tools(), clock)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn store(&self) -> &HospitalStore {
        &self.store
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    /// Run one user turn. Text tokens go to `tokens` as they stream in; the
    /// user message, every tool round and the final assistant reply are
    /// appended to `history`. An assistant tool-call message and its results
    /// are appended together, so dropping this future mid-turn never leaves
    /// a call without its result.
    pub async fn handle_utterance(
        &mut self,
        history: &mut Vec<Message>,
        user_text: &str,
        tokens: &mpsc::Sender<String>,
    ) -> Result<TurnSummary, AgentError> {
        if user_text.trim().is_empty() {
            return Err(AgentError::InvalidArgument("user_text is empty".into()));
        }
        history.push(Message::user(user_text));
        let definitions = self.registry.definitions();
        let mut summary = TurnSummary::default();

        loop {
            summary.rounds += 1;
            let mut messages = Vec::with_capacity(history.len() + 1);
            messages.push(Message::system(&self.config.system_prompt));
            messages.extend(history.iter().cloned());

            let mut stream = self.llm.chat_stream(&messages, &definitions).await?;
            let mut text = String::new();
            let mut calls = ToolCallAccumulator::new();
            while let Some(delta) = stream.next_delta().await {
                let delta = delta?;
                match &delta.kind {
                    DeltaKind::Text(t) => {
                        summary.first_delta_ms.get_or_insert(delta.at_ms);
                        text.push_str(t);
                        tokens.send(t.clone()).await.map_err(|_| AgentError::OutputClosed)?;
                    }
                    DeltaKind::ToolCallFragment { .. } => calls.push(&delta),
                    DeltaKind::Finish { .. } => {}
                }
            }
            summary.llm_done_ms = Some(self.clock.now_ms());

            if calls.is_empty() {
                history.push(Message::assistant(text.clone()));
                summary.final_text = text;
                return Ok(summary);
            }
            let calls = calls.finish()?;
            if summary.rounds >= self.config.max_tool_depth {
                warn!(
                    rounds = summary.rounds,
                    requested = calls.len(),
                    "tool depth bound exceeded; answering with fallback"
                );
                let fallback = self.config.fallback_text.clone();
                // separate the fallback from any text already spoken this round
                let spoken = if text.is_empty() {
                    fallback.clone()
                } else {
                    format!(" {fallback}")
                };
                tokens.send(spoken).await.map_err(|_| AgentError::OutputClosed)?;
                let content = if text.is_empty() {
                    fallback
                } else {
                    format!("{text} {fallback}")
                };
                history.push(Message::assistant(content.clone()));
                summary.depth_exceeded = true;
                summary.final_text = content;
                return Ok(summary);
            }

            let content = (!text.is_empty()).then_some(text);
            history.push(Message::assistant_tool_calls(content, calls.clone()));
            for call in &calls {
                let result = execute_tool(&self.registry, call, &mut self.store);
                debug!(tool = %call.name, %result, "tool executed");
                summary.tools_executed.push(call.name.clone());
                history.push(Message::tool_result(&call.id, result.to_string()));
            }
        }
    }

    /// `handle_utterance` with the tokens collected into one string.
    pub async fn respond(
        &mut self,
        history: &mut Vec<Message>,
        user_text: &str,
    ) -> Result<(String, TurnSummary), AgentError> {
        let (tx, mut rx) = mpsc::channel::<String>(1024);
        let collect = async move {
            let mut out = String::new();
            while let Some(t) = rx.recv().await {
                out.push_str(&t);
            }
            out
        };
        let run = async move {
            let r = self.handle_utterance(history, user_text, &tx).await;
            drop(tx);
            r
        };
        let (summary, text) = tokio::join!(run, collect);
        Ok((text, summary?))
    }
}

/// Checks that every assistant tool call is answered by exactly one tool
/// message before the next assistant message, and that no tool message is
/// orphaned.
pub fn check_history(history: &[Message]) -> Result<(), String> {
    let mut open: Vec<String> = Vec::new();
    for (i, m) in history.iter().enumerate() {
        match m.role {
            Role::Assistant => {
                if !open.is_empty() {
                    return Err(format!("message {i}: unanswered tool calls {open:?}"));
                }
                if let Some(calls) = &m.tool_calls {
                    open = calls.iter().map(|c| c.id.clone()).collect();
                }
            }
            Role::Tool => {
                let id = m.tool_call_id.as_deref().unwrap_or_default();
                let Some(pos) = open.iter().position(|c| c == id) else {
                    return Err(format!("message {i}: tool result {id:?} answers no open call"));
                };
                open.remove(pos);
            }
            Role::User | Role::System => {
                if !open.is_empty() {
                    return Err(format!("message {i}: unanswered tool calls {open:?}"));
                }
            }
        }
    }
    if open.is_empty() {
        Ok(())
    } else {
        Err(format!("unanswered tool calls at end: {open:?}"))
    }
}
