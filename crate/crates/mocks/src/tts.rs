//! Mock streaming TTS: `POST /v1/text-to-speech/{voice}/stream` answering
//! with a chunked 440 Hz tone as raw PCM int16 LE at 24 kHz.
//!
//! Requests carry no turn information, so latencies and speaking rate come
//! from the scenario's first turn.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::Value;
use tokio::sync::mpsc;
use tokio::time::{sleep_until, Duration, Instant};
use tokio_util::sync::CancellationToken;

use crate::scenario::Scenario;
use crate::server::{spawn, MockServer};

pub const TONE_HZ: f64 = 440.0;
pub const TONE_AMPLITUDE: f64 = 6000.0;
const SAMPLE_RATE: f64 = 24_000.0;
const CHUNK_MS: f64 = 20.0;

#[derive(Debug, Clone, Default)]
pub struct MockTtsOptions {
    /// When set, requests must carry `xi-api-key: <key>`.
    pub expected_api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtsRequestLog {
    pub voice_id: String,
    pub text: String,
    pub received_at: Instant,
}

struct TtsState {
    scenario: Arc<Scenario>,
    options: MockTtsOptions,
    log: Mutex<Vec<TtsRequestLog>>,
}

pub struct MockTts {
    server: MockServer,
    state: Arc<TtsState>,
}

impl MockTts {
    pub fn server(&self) -> &MockServer {
        &self.server
    }

    pub fn url(&self) -> String {
        self.server.http_url()
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<TtsRequestLog> {
        self.state.log.lock().unwrap().clone()
    }

    pub async fn shutdown(self) {
        self.server.shutdown().await
    }

    pub async fn wait(self) {
        self.server.wait().await
    }
}

pub async fn run_mock_tts(
    scenario: Arc<Scenario>,
    bind: SocketAddr,
    options: MockTtsOptions,
) -> std::io::Result<MockTts> {
    let state = Arc::new(TtsState {
        scenario,
        options,
        log: Mutex::new(Vec::new()),
    });
    let router = Router::new()
        .route("/v1/text-to-speech/{voice}/stream", post(synthesize))
        .with_state(state.clone());
    let server = spawn(router, bind, CancellationToken::new()).await?;
    Ok(MockTts { server, state })
}

/// Samples of audio the mock produces for `text`.
pub fn audio_samples_for(text: &str, ms_per_word: f64) -> usize {
    let words = text.split_whitespace().count().max(1);
    (words as f64 * ms_per_word * SAMPLE_RATE / 1000.0).round() as usize
}

/// Tone samples `[from, to)` as little-endian bytes.
pub fn tone_bytes(from: usize, to: usize) -> Vec<u8> {
    (from..to)
        .flat_map(|n| {
            let phase = 2.0 * std::f64::consts::PI * TONE_HZ * n as f64 / SAMPLE_RATE;
            ((TONE_AMPLITUDE * phase.sin()).round() as i16).to_le_bytes()
        })
        .collect()
}

async fn synthesize(
    State(state): State<Arc<TtsState>>,
    Path(voice): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let start = Instant::now();
    if let Some(key) = &state.options.expected_api_key {
        if headers.get("xi-api-key").and_then(|v| v.to_str().ok()) != Some(key.as_str()) {
            return (StatusCode::UNAUTHORIZED, "invalid api key").into_response();
        }
    }
    let text = match serde_json::from_slice::<Value>(&body) {
        Ok(v) => v.get("text").and_then(Value::as_str).unwrap_or_default().to_string(),
        Err(e) => return (StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")).into_response(),
    };
    if text.trim().is_empty() {
        return (StatusCode::BAD_REQUEST, "text is empty").into_response();
    }
    state.log.lock().unwrap().push(TtsRequestLog {
        voice_id: voice,
        text: text.clone(),
        received_at: start,
    });

    let turn = state.scenario.turn(0).clone();
    let total = audio_samples_for(&text, turn.tts_ms_per_word);
    let per_chunk = (SAMPLE_RATE * CHUNK_MS / 1000.0) as usize;
    let (tx, rx) = mpsc::channel::<Bytes>(64);
    tokio::spawn(async move {
        let mut k = 0usize;
        while k * per_chunk < total {
            let due = turn.tts_ttfb_ms + k as f64 * CHUNK_MS * turn.tts_rtf;
            sleep_until(start + Duration::from_secs_f64(due / 1000.0)).await;
            let from = k * per_chunk;
            let bytes = tone_bytes(from, (from + per_chunk).min(total));
            if tx.send(bytes.into()).await.is_err() {
                return;
            }
            k += 1;
        }
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|b| (Ok::<_, Infallible>(b), rx))
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "audio/pcm")
        .body(Body::from_stream(stream))
        .expect("static response parts")
}
