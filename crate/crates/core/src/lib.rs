//! Pure building blocks shared by every part of the voice agent: PCM frames
//! and resampling, the LLM-to-TTS sentence buffer, the turn-taking state
//! machine and latency statistics.
//!
//! Nothing in this crate performs I/O other than WAV encoding to and from
//! byte buffers.

pub mod audio;
pub mod clock;
pub mod sentence;
pub mod stats;
pub mod vad;

pub use audio::{AudioError, AudioFormat, AudioFrame};
pub use clock::Clock;
pub use sentence::{SentenceBuffer, SentenceBufferConfig, SentenceChunk};
pub use stats::{LatencyModel, LatencyReport, StatsError, TtfaMode};
pub use vad::{
    AgentSignal, EnergyDetector, SpeechDetector, TurnDetector, TurnEvent, TurnEventKind, TurnState, VadConfig, VadError,
};
