//! Scenario files: the scripted content and latencies the mocks play back.
//!
//! A scenario is a JSON document with a `schema_version` and a list of turns.
//! Each turn scripts what the mock STT hears, what the mock LLM says in each
//! round (text or tool calls), and how fast the mock TTS speaks.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub name: String,
    /// Streamed verbatim as the call's argument string.
    pub arguments: Value,
    /// Defaults to `call_{round}_{index}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// One LLM round. Rounds past the end of a turn's script replay the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptStep {
    Text { tokens: Vec<String> },
    ToolCalls { calls: Vec<ScriptedCall> },
}

impl ScriptStep {
    pub fn text(text: &str) -> Self {
        Self::Text { tokens: tokenize(text) }
    }

    pub fn tool_call(name: &str, arguments: Value) -> Self {
        Self::ToolCalls {
            calls: vec![ScriptedCall {
                name: name.into(),
                arguments,
                id: None,
            }],
        }
    }

    /// Number of streamed content chunks this step produces.
    pub fn chunk_count(&self) -> usize {
        match self {
            Self::Text { tokens } => tokens.len(),
            // header chunk plus two argument fragments per call
            Self::ToolCalls { calls } => calls.len() * 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTurn {
    pub user_transcript: String,
    #[serde(default)]
    pub stt_partials: Vec<String>,
    /// Last audio of the utterance to the final transcript.
    pub stt_final_delay_ms: f64,
    /// Audio the mock STT consumes before it considers the utterance over.
    /// Zero means only an explicit `Finalize` ends it.
    #[serde(default = "default_utterance_audio_ms")]
    pub utterance_audio_ms: f64,
    pub llm_ttft_ms: f64,
    pub llm_inter_token_ms: f64,
    pub llm_script: Vec<ScriptStep>,
    /// Emit one `{"choices": []}` chunk before the first content chunk.
    #[serde(default)]
    pub inject_empty_choices: bool,
    pub tts_ttfb_ms: f64,
    pub tts_ms_per_word: f64,
    /// Synthesis wall time per unit of audio after the first byte.
    pub tts_rtf: f64,
}

fn default_utterance_audio_ms() -> f64 {
    1000.0
}

impl ScenarioTurn {
    /// A turn answering `reply` in a single text round.
    pub fn simple(user: &str, reply: &str) -> Self {
        Self {
            user_transcript: user.into(),
            stt_partials: Vec::new(),
            stt_final_delay_ms: 0.0,
            utterance_audio_ms: default_utterance_audio_ms(),
            llm_ttft_ms: 0.0,
            llm_inter_token_ms: 0.0,
            llm_script: vec![ScriptStep::text(reply)],
            inject_empty_choices: false,
            tts_ttfb_ms: 0.0,
            tts_ms_per_word: 300.0,
            tts_rtf: 0.0,
        }
    }

    pub fn utterance_bytes(&self) -> usize {
        // 16 kHz mono int16: 32 bytes per ms, kept frame-aligned to 2 bytes
        (self.utterance_audio_ms.max(0.0) * 32.0).round() as usize / 2 * 2
    }

    /// Script step served in `round` (0-based).
    pub fn step(&self, round: usize) -> &ScriptStep {
        &self.llm_script[round.min(self.llm_script.len() - 1)]
    }

    /// Concatenated text of every text step.
    pub fn reply_text(&self) -> String {
        self.llm_script
            .iter()
            .filter_map(|s| match s {
                ScriptStep::Text { tokens } => Some(tokens.concat()),
                ScriptStep::ToolCalls { .. } => None,
            })
            .collect()
    }

    fn validate(&self, i: usize) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(format!("turn {i}: {m}")));
        for (name, v) in [
            ("stt_final_delay_ms", self.stt_final_delay_ms),
            ("utterance_audio_ms", self.utterance_audio_ms),
            ("llm_ttft_ms", self.llm_ttft_ms),
            ("llm_inter_token_ms", self.llm_inter_token_ms),
            ("tts_ttfb_ms", self.tts_ttfb_ms),
            ("tts_ms_per_word", self.tts_ms_per_word),
            ("tts_rtf", self.tts_rtf),
        ] {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.llm_script.is_empty() {
            return invalid("llm_script must not be empty".into());
        }
        for (r, step) in self.llm_script.iter().enumerate() {
            match step {
                ScriptStep::Text { tokens } if tokens.is_empty() => {
                    return invalid(format!("llm_script[{r}] has no tokens"));
                }
                ScriptStep::ToolCalls { calls } if calls.is_empty() => {
                    return invalid(format!("llm_script[{r}] has no calls"));
                }
                ScriptStep::ToolCalls { calls } => {
                    if let Some(c) = calls.iter().find(|c| !c.arguments.is_object()) {
                        return invalid(format!("llm_script[{r}] call {}: arguments must be an object", c.name));
                    }
                }
                ScriptStep::Text { .. } => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Extra first-token delay on the first request a mock LLM serves.
    #[serde(default)]
    pub llm_cold_start_ms: f64,
    pub turns: Vec<ScenarioTurn>,
}

impl Scenario {
    pub fn new(name: &str, turns: Vec<ScenarioTurn>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            llm_cold_start_ms: 0.0,
            turns,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.turns.is_empty() {
            return Err(ScenarioError::Invalid("turns must not be empty".into()));
        }
        if !self.llm_cold_start_ms.is_finite() || self.llm_cold_start_ms < 0.0 {
            return Err(ScenarioError::Invalid("llm_cold_start_ms must be non-negative".into()));
        }
        self.turns.iter().enumerate().try_for_each(|(i, t)| t.validate(i))
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Turn served for the `n`-th utterance (cycles).
    pub fn turn(&self, n: usize) -> &ScenarioTurn {
        &self.turns[n % self.turns.len()]
    }

    /// Every latency set to zero.
    pub fn zero_latency(mut self) -> Self {
        self.llm_cold_start_ms = 0.0;
        for t in &mut self.turns {
            t.stt_final_delay_ms = 0.0;
            t.llm_ttft_ms = 0.0;
            t.llm_inter_token_ms = 0.0;
            t.tts_ttfb_ms = 0.0;
            t.tts_rtf = 0.0;
        }
        self
    }

    /// The reference latency profile: first token 296 ms after the request,
    /// the first sentence boundary becomes observable 143 ms after that, and
    /// TTS answers 316 ms after each request.
    pub fn calibrated() -> Self {
        let replies = [
            (
                "I'd like to book an appointment with Dr. Smith.",
                vec!["I'd like", "I'd like to book"],
                "Sure, I can help you book that. Which day works best for you?",
            ),
            (
                "Is Dr. Lee available on Tuesday?",
                vec!["Is Dr. Lee", "Is Dr. Lee available"],
                "Let me check that schedule for you. Dr. Lee has openings Tuesday morning.",
            ),
            (
                "Thanks, that's all for today.",
                vec!["Thanks", "Thanks, that's all"],
                "You're very welcome, have a great day. Goodbye and take care!",
            ),
        ];
        let turns = replies
            .into_iter()
            .map(|(user, partials, reply)| {
                let tokens = tokenize(reply);
                let k = first_boundary_token(&tokens).expect("reply has two sentences");
                ScenarioTurn {
                    user_transcript: user.into(),
                    stt_partials: partials.into_iter().map(String::from).collect(),
                    stt_final_delay_ms: 337.0,
                    utterance_audio_ms: 1000.0,
                    llm_ttft_ms: 296.0,
                    llm_inter_token_ms: 143.0 / k as f64,
                    llm_script: vec![ScriptStep::Text { tokens }],
                    inject_empty_choices: false,
                    tts_ttfb_ms: 316.0,
                    tts_ms_per_word: 300.0,
                    tts_rtf: 0.25,
                }
            })
            .collect();
        Self::new("calibrated", turns)
    }
}

impl Scenario {
    /// A three-turn receptionist call against the seed-42 hospital store:
    /// a record lookup, an availability check, then a booking.
    pub fn receptionist() -> Self {
        let turn = |user: &str, steps: Vec<ScriptStep>| ScenarioTurn {
            user_transcript: user.into(),
            stt_partials: Vec::new(),
            stt_final_delay_ms: 300.0,
            utterance_audio_ms: 1500.0,
            llm_ttft_ms: 250.0,
            llm_inter_token_ms: 30.0,
            llm_script: steps,
            inject_empty_choices: false,
            tts_ttfb_ms: 250.0,
            tts_ms_per_word: 300.0,
            tts_rtf: 0.25,
        };
        let call = |name: &str, args: Value| ScriptStep::tool_call(name, args);
        Self::new(
            "receptionist",
            vec![
                turn(
                    "Hi, this is Brian Chen, patient P002. When is my next appointment?",
                    vec![
                        call("get_patient_info", serde_json::json!({"patient_id": "P002"})),
                        ScriptStep::text(
                            "Hi Brian, you're booked with Dr. Garcia on March 11 at nine. \
                             Is there anything else I can help with?",
                        ),
                    ],
                ),
                turn(
                    "Could I also see Dr. Lee on March 11?",
                    vec![
                        call(
                            "check_availability",
                            serde_json::json!({"doctor": "Lee", "date": "2025-03-11"}),
                        ),
                        ScriptStep::text(
                            "Dr. Lee has openings at nine thirty, ten, one and three that day. \
                             Which time suits you?",
                        ),
                    ],
                ),
                turn(
                    "Ten o'clock please.",
                    vec![
                        call(
                            "schedule_appointment",
                            serde_json::json!({
                                "patient_id": "P002", "doctor": "Lee",
                                "date": "2025-03-11", "time": "10:00",
                            }),
                        ),
                        ScriptStep::text("You're all set with Dr. Lee on March 11 at ten. See you then!"),
                    ],
                ),
            ],
        )
    }
}

/// Split text into model-style tokens: a word with its leading space, or a
/// single punctuation mark. Concatenating the tokens gives back the text.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        let word_char = c.is_alphanumeric() || c == '\'';
        let starts_new = if c.is_whitespace() {
            !cur.chars().all(char::is_whitespace)
        } else if word_char {
            cur.chars()
                .last()
                .is_some_and(|p| !(p.is_alphanumeric() || p == '\'' || p.is_whitespace()))
        } else {
            !cur.is_empty() && !cur.chars().all(char::is_whitespace)
        };
        if starts_new {
            out.push(std::mem::take(&mut cur));
        }
        cur.push(c);
        if !word_char && !c.is_whitespace() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Index of the token whose leading whitespace follows the first `.`, `!`
/// or `?`: the token at which a streaming sentence splitter first sees a
/// complete sentence.
pub fn first_boundary_token(tokens: &[String]) -> Option<usize> {
    tokens
        .windows(2)
        .position(|w| w[0].ends_with(['.', '!', '?']) && w[1].starts_with(char::is_whitespace))
        .map(|i| i + 1)
}
