//! Mock streaming STT over WebSocket.
//!
//! Consumes binary 16 kHz PCM and answers in the minimal result shape
//! `{"type":"Results","text","is_final","speech_final","audio_start_ms"}`.
//! An utterance ends once `utterance_audio_ms` of audio has arrived (or on
//! `Finalize`); its partials are spread across the utterance and the final
//! follows `stt_final_delay_ms` after the last audio.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde_json::{json, Value};
use tokio::time::{sleep_until, Duration, Instant};
use tokio_util::sync::CancellationToken;
use tracing::debug;

use crate::scenario::Scenario;
use crate::server::{spawn, MockServer};

#[derive(Debug, Clone, Default)]
pub struct MockSttOptions {
    /// When set, connections must present `Authorization: Token <t>` or
    /// `?token=<t>`; anything else is refused with HTTP 401.
    pub expected_token: Option<String>,
    /// Keep a copy of every audio byte received.
    pub record_audio: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SttStats {
    pub connections: usize,
    pub rejected: usize,
    pub bytes_received: usize,
    pub keepalives: usize,
    pub finalizes: usize,
    pub partials_sent: usize,
    pub finals_sent: usize,
    /// Received audio in arrival order, if recording.
    pub audio: Vec<u8>,
}

struct SttState {
    scenario: Arc<Scenario>,
    options: MockSttOptions,
    stats: Mutex<SttStats>,
    shutdown: CancellationToken,
}

pub struct MockStt {
    server: MockServer,
    state: Arc<SttState>,
}

impl MockStt {
    pub fn server(&self) -> &MockServer {
        &self.server
    }

    /// WebSocket endpoint for the client.
    pub fn url(&self) -> String {
        format!("{}/v1/listen", self.server.ws_url())
    }

    pub fn stats(&self) -> SttStats {
        self.state.stats.lock().unwrap().clone()
    }

    pub async fn shutdown(self) {
        self.server.shutdown().await
    }

    pub async fn wait(self) {
        self.server.wait().await
    }
}

pub async fn run_mock_stt(
    scenario: Arc<Scenario>,
    bind: SocketAddr,
    options: MockSttOptions,
) -> std::io::Result<MockStt> {
    let shutdown = CancellationToken::new();
    let state = Arc::new(SttState {
        scenario,
        options,
        stats: Mutex::new(SttStats::default()),
        shutdown: shutdown.clone(),
    });
    let router = Router::new()
        .route("/", get(upgrade))
        .route("/v1/listen", get(upgrade))
        .with_state(state.clone());
    let server = spawn(router, bind, shutdown).await?;
    Ok(MockStt { server, state })
}

async fn upgrade(
    State(state): State<Arc<SttState>>,
    headers: HeaderMap,
    Query(query): Query<HashMap<String, String>>,
    ws: WebSocketUpgrade,
) -> Response {
    if let Some(expected) = &state.options.expected_token {
        let header_ok = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == format!("Token {expected}"));
        if !header_ok && query.get("token") != Some(expected) {
            state.stats.lock().unwrap().rejected += 1;
            return (StatusCode::UNAUTHORIZED, "invalid token").into_response();
        }
    }
    state.stats.lock().unwrap().connections += 1;
    ws.on_upgrade(move |socket| session(socket, state))
}

fn result(text: &str, is_final: bool, audio_start_ms: f64) -> String {
    json!({
        "type": "Results",
        "text": text,
        "is_final": is_final,
        "speech_final": is_final,
        "audio_start_ms": audio_start_ms,
    })
    .to_string()
}

/// Per-connection cursor into the scenario.
struct Conn {
    turn: usize,
    bytes_in_turn: usize,
    total_bytes: usize,
    utterance_start_bytes: usize,
    partials_sent: usize,
    /// Outgoing messages in send order with their due times.
    pending: VecDeque<(Instant, String, bool)>,
}

impl Conn {
    fn schedule(&mut self, at: Instant, msg: String, is_final: bool) {
        // never overtake an earlier scheduled message
        let at = self.pending.back().map_or(at, |(last, _, _)| at.max(*last));
        self.pending.push_back((at, msg, is_final));
    }

    fn end_utterance(&mut self, scenario: &Scenario, now: Instant) {
        let turn = scenario.turn(self.turn);
        let start_ms = self.utterance_start_bytes as f64 / 32.0;
        let due = now + Duration::from_secs_f64(turn.stt_final_delay_ms / 1000.0);
        self.schedule(due, result(&turn.user_transcript, true, start_ms), true);
        self.turn += 1;
        self.bytes_in_turn = 0;
        self.partials_sent = 0;
        self.utterance_start_bytes = self.total_bytes;
    }

    fn on_audio(&mut self, scenario: &Scenario, len: usize, now: Instant) {
        self.bytes_in_turn += len;
        self.total_bytes += len;
        let turn = scenario.turn(self.turn);
        let needed = turn.utterance_bytes();
        if needed == 0 {
            return;
        }
        let n = turn.stt_partials.len();
        let start_ms = self.utterance_start_bytes as f64 / 32.0;
        while self.partials_sent < n && self.bytes_in_turn * (n + 1) >= (self.partials_sent + 1) * needed {
            let text = turn.stt_partials[self.partials_sent].clone();
            self.schedule(now, result(&text, false, start_ms), false);
            self.partials_sent += 1;
        }
        if self.bytes_in_turn >= needed {
            self.end_utterance(scenario, now);
        }
    }
}

async fn session(mut socket: WebSocket, state: Arc<SttState>) {
    let mut conn = Conn {
        turn: 0,
        bytes_in_turn: 0,
        total_bytes: 0,
        utterance_start_bytes: 0,
        partials_sent: 0,
        pending: VecDeque::new(),
    };
    let mut closing = false;
    loop {
        if closing && conn.pending.is_empty() {
            let _ = socket.send(Message::Close(None)).await;
            break;
        }
        let next_due = conn.pending.front().map(|p| p.0);
        tokio::select! {
            _ = state.shutdown.cancelled() => break,
            _ = sleep_until(next_due.unwrap_or_else(Instant::now)), if next_due.is_some() => {
                let now = Instant::now();
                while conn.pending.front().is_some_and(|p| p.0 <= now) {
                    let (_, msg, is_final) = conn.pending.pop_front().unwrap();
                    if socket.send(Message::Text(msg.into())).await.is_err() {
                        return;
                    }
                    let mut stats = state.stats.lock().unwrap();
                    if is_final { stats.finals_sent += 1 } else { stats.partials_sent += 1 }
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Binary(bytes))) => {
                    {
                        let mut stats = state.stats.lock().unwrap();
                        stats.bytes_received += bytes.len();
                        if state.options.record_audio {
                            stats.audio.extend_from_slice(&bytes);
                        }
                    }
                    conn.on_audio(&state.scenario, bytes.len(), Instant::now());
                }
                Some(Ok(Message::Text(text))) => {
                    let kind = serde_json::from_str::<Value>(text.as_str())
                        .ok()
                        .and_then(|v| v.get("type").and_then(Value::as_str).map(String::from));
                    match kind.as_deref() {
                        Some("KeepAlive") => state.stats.lock().unwrap().keepalives += 1,
                        Some("Finalize") => {
                            state.stats.lock().unwrap().finalizes += 1;
                            if conn.bytes_in_turn > 0 {
                                conn.end_utterance(&state.scenario, Instant::now());
                            }
                        }
                        Some("CloseStream") => closing = true,
                        _ => debug!("mock stt ignoring text message {}", text.as_str()),
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
