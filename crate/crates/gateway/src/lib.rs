//! WebSocket gateway for the voice agent.
//!
//! Each `/ws` connection owns one session: mic audio arrives as 640-byte
//! binary frames (16 kHz int16 LE, 20 ms), agent speech leaves as binary
//! 24 kHz int16 LE frames, and everything else travels as JSON text
//! messages (see [`protocol::ControlMessage`]).

pub mod client;
pub mod pipeline;
pub mod protocol;
pub mod server;
mod session;

pub use client::{GatewayClient, Received, ServerPayload};
pub use pipeline::{
    gate_mic, run_turn, ClientItem, ClientSink, PipelineConfig, SentenceTrace, SinkClosed, TurnCancel, TurnContext,
    TurnOutcome, TurnReport, TurnTimeline,
};
pub use protocol::{ControlMessage, CLIENT_FRAME_BYTES};
pub use server::{serve, Gateway, GatewayConfig, GatewayError};
pub use session::{Observer, SessionEvent};
