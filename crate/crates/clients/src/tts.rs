//! Streaming text-to-speech over chunked HTTP.
//!
//! `POST {base_url}/v1/text-to-speech/{voice_id}/stream` with
//! `{"text", "model_id"}`; the response body is raw PCM int16 LE, 24 kHz mono,
//! delivered as it is synthesised. The client re-frames it into 20 ms frames
//! (960 samples) and never holds a complete frame back.

use std::pin::Pin;
use std::sync::Arc;

use bytes::Bytes;
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use voxline_core::audio::TTS_SAMPLE_RATE_HZ;
use voxline_core::{AudioFormat, AudioFrame, Clock};

use crate::env_or;

/// 20 ms at 24 kHz.
pub const FRAME_SAMPLES: usize = 960;

#[derive(Debug, Error)]
pub enum TtsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("synthesis failed with HTTP {status}: {body}")]
    Synthesis { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("audio stream truncated after {:.0} ms of audio: {cause}", partial.total_audio_ms)]
    TruncatedAudio { partial: TtsStreamStats, cause: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    pub voice_id: String,
    pub model_id: String,
}

impl TtsConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            voice_id: "default".into(),
            model_id: "eleven_turbo_v2_5".into(),
        }
    }

    /// `TTS_URL`, `TTS_API_KEY`, `TTS_VOICE_ID`.
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var("TTS_API_KEY").ok().filter(|k| !k.is_empty()),
            voice_id: env_or("TTS_VOICE_ID", "default"),
            ..Self::new(env_or("TTS_URL", "http://127.0.0.1:8103"))
        }
    }

    pub fn request(&self, text: impl Into<String>) -> TtsRequest {
        TtsRequest {
            text: text.into(),
            voice_id: self.voice_id.clone(),
            model_id: self.model_id.clone(),
        }
    }
}

/// Output is always PCM 16-bit 24 kHz mono.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsRequest {
    pub text: String,
    pub voice_id: String,
    pub model_id: String,
}

impl TtsRequest {
    pub const OUTPUT_FORMAT: AudioFormat = AudioFormat::TTS;
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TtsStreamStats {
    /// Request sent to first audio byte.
    pub ttfb_ms: f64,
    pub total_audio_ms: f64,
    pub wall_ms: f64,
    /// `wall_ms / total_audio_ms`.
    pub rtf: f64,
}

type ByteStream = Pin<Box<dyn Stream<Item = Result<Bytes, reqwest::Error>> + Send>>;

pub struct TtsStream {
    body: ByteStream,
    clock: Clock,
    request_sent_ms: f64,
    first_byte_ms: Option<f64>,
    pending: Vec<u8>,
    samples_out: usize,
    stats: Option<TtsStreamStats>,
    done: bool,
}

impl TtsStream {
    pub fn request_sent_ms(&self) -> f64 {
        self.request_sent_ms
    }

    pub fn first_byte_ms(&self) -> Option<f64> {
        self.first_byte_ms
    }

    /// Populated once the stream has ended cleanly.
    pub fn stats(&self) -> Option<TtsStreamStats> {
        self.stats
    }

    fn current_stats(&self) -> TtsStreamStats {
        let now = self.clock.now_ms();
        let total_audio_ms = self.samples_out as f64 * 1000.0 / f64::from(TTS_SAMPLE_RATE_HZ);
        let wall_ms = now - self.request_sent_ms;
        TtsStreamStats {
            ttfb_ms: self.first_byte_ms.map_or(wall_ms, |t| t - self.request_sent_ms),
            total_audio_ms,
            wall_ms,
            rtf: if total_audio_ms > 0.0 {
                wall_ms / total_audio_ms
            } else {
                f64::INFINITY
            },
        }
    }

    fn take_frame(&mut self, allow_short: bool) -> Option<AudioFrame> {
        let whole = self.pending.len() / 2 * 2;
        let take = if whole >= FRAME_SAMPLES * 2 {
            FRAME_SAMPLES * 2
        } else if allow_short && whole > 0 {
            whole
        } else {
            return None;
        };
        let bytes: Vec<u8> = self.pending.drain(..take).collect();
        let frame = AudioFrame::from_le_bytes(&bytes, TTS_SAMPLE_RATE_HZ, self.clock.now_ms()).expect("even length");
        self.samples_out += frame.samples.len();
        Some(frame)
    }

    /// Next 24 kHz frame in synthesis order; `None` at the end of the audio.
    pub async fn next_frame(&mut self) -> Option<Result<AudioFrame, TtsError>> {
        loop {
            if let Some(frame) = self.take_frame(false) {
                return Some(Ok(frame));
            }
            if self.done {
                return None;
            }
            match self.body.next().await {
                Some(Ok(bytes)) => {
                    if !bytes.is_empty() && self.first_byte_ms.is_none() {
                        self.first_byte_ms = Some(self.clock.now_ms());
                    }
                    self.pending.extend_from_slice(&bytes);
                    // hand over whatever arrived rather than wait for a full frame
                    if self.pending.len() >= 2 && self.pending.len() < FRAME_SAMPLES * 2 {
                        return self.take_frame(true).map(Ok);
                    }
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(TtsError::TruncatedAudio {
                        partial: self.current_stats(),
                        cause: e.to_string(),
                    }));
                }
                None => {
                    self.done = true;
                    let last = self.take_frame(true);
                    self.stats = Some(self.current_stats());
                    if self.samples_out == 0 {
                        return Some(Err(TtsError::Synthesis {
                            status: 200,
                            body: "response contained no audio".into(),
                        }));
                    }
                    return last.map(Ok);
                }
            }
        }
    }

    pub async fn collect(mut self) -> Result<(Vec<AudioFrame>, TtsStreamStats), TtsError> {
        let mut frames = Vec::new();
        while let Some(f) = self.next_frame().await {
            frames.push(f?);
        }
        let stats = self.stats.unwrap_or_else(|| self.current_stats());
        Ok((frames, stats))
    }
}

#[derive(Debug, Clone)]
pub struct TtsClient {
    http: reqwest::Client,
    config: Arc<TtsConfig>,
    clock: Clock,
}

impl TtsClient {
    pub fn new(config: TtsConfig, clock: Clock) -> Self {
        Self {
            http: reqwest::Client::new(),
            config: Arc::new(config),
            clock,
        }
    }

    pub fn config(&self) -> &TtsConfig {
        &self.config
    }

    pub fn stream_url(&self, voice_id: &str) -> String {
        format!(
            "{}/v1/text-to-speech/{}/stream",
            self.config.base_url.trim_end_matches('/'),
            voice_id
        )
    }

    /// Text is trimmed before submission; empty text fails without a request.
    pub async fn synthesize_stream(&self, request: &TtsRequest) -> Result<TtsStream, TtsError> {
        let text = request.text.trim();
        if text.is_empty() {
            return Err(TtsError::InvalidArgument("text is empty".into()));
        }
        let mut req = self
            .http
            .post(format!(
                "{}?output_format=pcm_24000",
                self.stream_url(&request.voice_id)
            ))
            .json(&json!({ "text": text, "model_id": request.model_id }));
        if let Some(key) = &self.config.api_key {
            req = req.header("xi-api-key", key);
        }
        let request_sent_ms = self.clock.now_ms();
        let resp = req.send().await?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TtsError::Synthesis {
                status: status.as_u16(),
                body: resp.text().await.unwrap_or_default(),
            });
        }
        Ok(TtsStream {
            body: Box::pin(resp.bytes_stream()),
            clock: self.clock,
            request_sent_ms,
            first_byte_ms: None,
            pending: Vec::new(),
            samples_out: 0,
            stats: None,
            done: false,
        })
    }
}
