//! Streaming clients for the three cascaded stages.
//!
//! * [`stt`]: persistent WebSocket session, 20 ms PCM chunks in, partial and
//!   final transcripts out.
//! * [`llm`]: OpenAI-compatible chat completions over SSE, with tool-call
//!   delta accumulation.
//! * [`tts`]: chunked HTTP synthesis returning raw 24 kHz PCM.
//!
//! Each client reads its endpoint from the environment by default and can be
//! pointed at the mock services for tests.

pub mod llm;
pub mod stt;
pub mod tts;

pub(crate) fn env_or(key: &str, default: &str) -> String {
    std::env::var(key)
        .ok()
        .filter(|v| !v.is_empty())
        .unwrap_or_else(|| default.to_string())
}
