//! Streaming speech-to-text over a persistent WebSocket.
//!
//! Binary frames carry 16 kHz mono `linear16` PCM; text frames carry results
//! and control messages. Partial results (`is_final = false`) are for display
//! only. Final results are stable and are what the pipeline forwards to the
//! LLM; `speech_final` marks the end of the user's utterance.

use std::time::Duration;

use futures::stream::{SplitSink, SplitStream};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::http::HeaderValue;
use tokio_tungstenite::tungstenite::{self, Message as WsMessage};
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use tracing::{debug, warn};
use voxline_core::audio::MIC_SAMPLE_RATE_HZ;
use voxline_core::{AudioFrame, Clock};

use crate::env_or;

#[derive(Debug, Error)]
pub enum SttError {
    #[error("connection rejected: authentication failed (HTTP {status})")]
    Auth { status: u16 },
    #[error("could not connect: {0}")]
    Connect(String),
    #[error("session error: {0}")]
    Session(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("protocol error: {reason}; payload: {raw}")]
    Protocol { reason: String, raw: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub text: String,
    pub is_final: bool,
    pub speech_final: bool,
    pub audio_start_ms: f64,
    pub received_at_ms: f64,
}

/// Which result schema the endpoint speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SttProvider {
    /// Flat `{type, text, is_final, speech_final, audio_start_ms}` messages.
    #[default]
    Minimal,
    /// Deepgram live results (`channel.alternatives[0].transcript`, `start` in seconds).
    Deepgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SttSessionConfig {
    pub endpoint_url: String,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default)]
    pub provider: SttProvider,
    #[serde(default = "default_keepalive_ms")]
    pub keepalive_interval_ms: u64,
}

fn default_keepalive_ms() -> u64 {
    5000
}

impl SttSessionConfig {
    pub const SAMPLE_RATE_HZ: u32 = MIC_SAMPLE_RATE_HZ;
    pub const ENCODING: &'static str = "linear16";

    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            auth_token: None,
            provider: SttProvider::Minimal,
            keepalive_interval_ms: default_keepalive_ms(),
        }
    }

    /// `STT_URL`, `STT_API_KEY`; a URL containing `deepgram.com` selects the
    /// Deepgram result schema.
    pub fn from_env() -> Self {
        let url = env_or("STT_URL", "ws://127.0.0.1:8101/v1/listen");
        let provider = if url.contains("deepgram.com") {
            SttProvider::Deepgram
        } else {
            SttProvider::Minimal
        };
        Self {
            auth_token: std::env::var("STT_API_KEY").ok().filter(|k| !k.is_empty()),
            provider,
            ..Self::new(url)
        }
    }

    fn request_url(&self) -> Result<url::Url, SttError> {
        let mut url =
            url::Url::parse(&self.endpoint_url).map_err(|e| SttError::InvalidArgument(format!("endpoint_url: {e}")))?;
        {
            let mut q = url.query_pairs_mut();
            q.append_pair("encoding", Self::ENCODING)
                .append_pair("sample_rate", &Self::SAMPLE_RATE_HZ.to_string())
                .append_pair("channels", "1")
                .append_pair("interim_results", "true");
        }
        Ok(url)
    }
}

/// Maps a provider's result message onto [`TranscriptEvent`]. `Ok(None)` for
/// messages that carry no transcript (metadata and the like).
pub fn parse_transcript(
    provider: SttProvider,
    raw: &str,
    received_at_ms: f64,
) -> Result<Option<TranscriptEvent>, SttError> {
    let protocol = |reason: &str| SttError::Protocol {
        reason: reason.to_string(),
        raw: raw.to_string(),
    };
    let v: Value = serde_json::from_str(raw).map_err(|e| protocol(&format!("invalid JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| protocol("expected a JSON object"))?;
    match obj.get("type").and_then(Value::as_str) {
        None | Some("Results") => {}
        Some(_) => return Ok(None),
    }
    let is_final = obj
        .get("is_final")
        .and_then(Value::as_bool)
        .ok_or_else(|| protocol("missing boolean `is_final`"))?;
    let speech_final = match obj.get("speech_final") {
        None | Some(Value::Null) => false,
        Some(v) => v.as_bool().ok_or_else(|| protocol("`speech_final` is not a boolean"))?,
    };
    let (text, audio_start_ms) = match provider {
        SttProvider::Minimal => (
            obj.get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| protocol("missing string `text`"))?
                .to_string(),
            obj.get("audio_start_ms").and_then(Value::as_f64).unwrap_or(0.0),
        ),
        SttProvider::Deepgram => (
            v.pointer("/channel/alternatives/0/transcript")
                .and_then(Value::as_str)
                .ok_or_else(|| protocol("missing `channel.alternatives[0].transcript`"))?
                .to_string(),
            obj.get("start").and_then(Value::as_f64).unwrap_or(0.0) * 1000.0,
        ),
    };
    if speech_final && !is_final {
        return Err(protocol("speech_final without is_final"));
    }
    // empty finals carry nothing unless they close the utterance
    if is_final && !speech_final && text.trim().is_empty() {
        return Ok(None);
    }
    Ok(Some(TranscriptEvent {
        text,
        is_final,
        speech_final,
        audio_start_ms,
        received_at_ms,
    }))
}

type WsStream = WebSocketStream<MaybeTlsStream<TcpStream>>;

#[derive(Debug)]
enum Outbound {
    Audio(Vec<u8>),
    Finalize,
    Close,
}

/// Open a session. The returned halves may be driven from different tasks.
pub async fn open_session(config: SttSessionConfig, clock: Clock) -> Result<SttSession, SttError> {
    let url = config.request_url()?;
    let mut request = url
        .as_str()
        .into_client_request()
        .map_err(|e| SttError::InvalidArgument(e.to_string()))?;
    if let Some(token) = &config.auth_token {
        let value = HeaderValue::from_str(&format!("Token {token}"))
            .map_err(|e| SttError::InvalidArgument(format!("auth token: {e}")))?;
        request.headers_mut().insert("authorization", value);
    }
    // 20 ms frames are small writes; Nagle would hold them back
    let (ws, _resp) = tokio_tungstenite::connect_async_with_config(request, None, true)
        .await
        .map_err(|e| match e {
            tungstenite::Error::Http(resp) if matches!(resp.status().as_u16(), 401 | 403) => SttError::Auth {
                status: resp.status().as_u16(),
            },
            other => SttError::Connect(other.to_string()),
        })?;
    let (sink, stream) = ws.split();
    // capacity 1: at most one frame waits behind the one being written
    let (tx, rx) = mpsc::channel(1);
    tokio::spawn(writer_task(
        sink,
        rx,
        Duration::from_millis(config.keepalive_interval_ms.max(1)),
    ));
    Ok(SttSession {
        sender: SttSender { tx },
        receiver: SttReceiver {
            stream,
            provider: config.provider,
            clock,
            ended: false,
        },
    })
}

async fn writer_task(mut sink: SplitSink<WsStream, WsMessage>, mut rx: mpsc::Receiver<Outbound>, keepalive: Duration) {
    loop {
        let msg = match tokio::time::timeout(keepalive, rx.recv()).await {
            Err(_) => WsMessage::text(r#"{"type":"KeepAlive"}"#),
            Ok(Some(Outbound::Audio(bytes))) => WsMessage::binary(bytes),
            Ok(Some(Outbound::Finalize)) => WsMessage::text(r#"{"type":"Finalize"}"#),
            Ok(Some(Outbound::Close)) | Ok(None) => {
                let _ = sink.send(WsMessage::text(r#"{"type":"CloseStream"}"#)).await;
                let _ = sink.close().await;
                return;
            }
        };
        if let Err(e) = sink.send(msg).await {
            debug!("stt writer stopped: {e}");
            return;
        }
    }
}

pub struct SttSession {
    sender: SttSender,
    receiver: SttReceiver,
}

impl SttSession {
    pub fn split(self) -> (SttSender, SttReceiver) {
        (self.sender, self.receiver)
    }

    pub async fn send_audio(&self, frame: &AudioFrame) -> Result<(), SttError> {
        self.sender.send_audio(frame).await
    }

    pub async fn next_event(&mut self) -> Result<Option<TranscriptEvent>, SttError> {
        self.receiver.next_event().await
    }

    pub async fn close(&self) {
        self.sender.close().await
    }
}

#[derive(Clone)]
pub struct SttSender {
    tx: mpsc::Sender<Outbound>,
}

impl SttSender {
    pub async fn send_audio(&self, frame: &AudioFrame) -> Result<(), SttError> {
        if frame.sample_rate_hz != SttSessionConfig::SAMPLE_RATE_HZ {
            return Err(SttError::InvalidArgument(format!(
                "expected {} Hz audio, got {}",
                SttSessionConfig::SAMPLE_RATE_HZ,
                frame.sample_rate_hz
            )));
        }
        self.tx
            .send(Outbound::Audio(frame.to_le_bytes()))
            .await
            .map_err(|_| SttError::SessionClosed)
    }

    /// Ask the server to finalize whatever audio it holds.
    pub async fn finalize(&self) -> Result<(), SttError> {
        self.tx
            .send(Outbound::Finalize)
            .await
            .map_err(|_| SttError::SessionClosed)
    }

    /// Idempotent.
    pub async fn close(&self) {
        let _ = self.tx.send(Outbound::Close).await;
    }

    pub fn is_closed(&self) -> bool {
        self.tx.is_closed()
    }
}

pub struct SttReceiver {
    stream: SplitStream<WsStream>,
    provider: SttProvider,
    clock: Clock,
    ended: bool,
}

impl SttReceiver {
    /// Next transcript in server order; `Ok(None)` after a clean close.
    pub async fn next_event(&mut self) -> Result<Option<TranscriptEvent>, SttError> {
        while !self.ended {
            let Some(msg) = self.stream.next().await else {
                self.ended = true;
                break;
            };
            match msg {
                Ok(WsMessage::Text(text)) => {
                    if let Some(ev) = parse_transcript(self.provider, text.as_str(), self.clock.now_ms())? {
                        return Ok(Some(ev));
                    }
                }
                Ok(WsMessage::Close(_)) => self.ended = true,
                Ok(WsMessage::Binary(b)) => warn!("ignoring {} unexpected binary bytes from STT", b.len()),
                Ok(_) => {}
                Err(tungstenite::Error::ConnectionClosed) => self.ended = true,
                Err(e) => {
                    self.ended = true;
                    return Err(SttError::Session(e.to_string()));
                }
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_final() {
        let ev = parse_transcript(
            SttProvider::Minimal,
            r#"{"type":"Results","text":"book an appointment","is_final":true,"speech_final":true,"audio_start_ms":40}"#,
            100.0,
        )
        .unwrap()
        .unwrap();
        assert!(ev.is_final && ev.speech_final);
        assert_eq!(ev.audio_start_ms, 40.0);
        assert_eq!(ev.received_at_ms, 100.0);
    }

    #[test]
    fn missing_is_final_is_protocol_error() {
        let raw = r#"{"type":"Results","text":"x"}"#;
        match parse_transcript(SttProvider::Minimal, raw, 0.0) {
            Err(SttError::Protocol { raw: r, .. }) => assert_eq!(r, raw),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn speech_final_requires_final() {
        let raw = r#"{"text":"x","is_final":false,"speech_final":true}"#;
        assert!(parse_transcript(SttProvider::Minimal, raw, 0.0).is_err());
    }

    #[test]
    fn metadata_is_skipped() {
        let raw = r#"{"type":"Metadata","request_id":"abc"}"#;
        assert!(parse_transcript(SttProvider::Minimal, raw, 0.0).unwrap().is_none());
    }

    #[test]
    fn deepgram_shape() {
        let raw = r#"{"type":"Results","channel":{"alternatives":[{"transcript":"hello there","confidence":0.9}]},"is_final":true,"speech_final":false,"start":1.25,"duration":0.8}"#;
        let ev = parse_transcript(SttProvider::Deepgram, raw, 0.0).unwrap().unwrap();
        assert_eq!(ev.text, "hello there");
        assert_eq!(ev.audio_start_ms, 1250.0);
        assert!(!ev.speech_final);
    }

    #[test]
    fn empty_final_dropped_unless_speech_final() {
        let raw = r#"{"text":"","is_final":true,"speech_final":false}"#;
        assert!(parse_transcript(SttProvider::Minimal, raw, 0.0).unwrap().is_none());
        let raw = r#"{"text":"","is_final":true,"speech_final":true}"#;
        assert!(parse_transcript(SttProvider::Minimal, raw, 0.0).unwrap().is_some());
    }

    #[test]
    fn request_url_has_audio_params() {
        let url = SttSessionConfig::new("ws://localhost:1/v1/listen")
            .request_url()
            .unwrap();
        let q: Vec<_> = url.query_pairs().collect();
        assert!(q.iter().any(|(k, v)| k == "encoding" && v == "linear16"));
        assert!(q.iter().any(|(k, v)| k == "sample_rate" && v == "16000"));
    }
}
