//! One WebSocket connection: its STT session, turn detector, agent and
//! conversation history. Nothing here is shared with other connections.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::ws::{Message as WsMessage, WebSocket};
use futures::stream::SplitSink;
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::sync::{mpsc, Mutex};
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};
use voxline_agent::{seed_store, Agent};
use voxline_clients::llm::Message;
use voxline_clients::stt::{open_session, SttReceiver, SttSender, TranscriptEvent};
use voxline_core::audio::MIC_SAMPLE_RATE_HZ;
use voxline_core::{
    AgentSignal, AudioFrame, Clock, EnergyDetector, SpeechDetector, TurnDetector, TurnEventKind, TurnState,
};

use crate::pipeline::{
    gate_mic, run_turn, ClientItem, ClientSink, PipelineConfig, SinkClosed, TurnCancel, TurnContext, TurnReport,
};
use crate::protocol::{ControlMessage, CLIENT_FRAME_BYTES};

/// What a session reports to an observer (tests, benchmarks, logs).
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Opened {
        session: u64,
    },
    VadTransition {
        session: u64,
        from: TurnState,
        to: TurnState,
        at_ms: f64,
    },
    TurnStarted {
        session: u64,
        user_text: String,
        at_ms: f64,
    },
    #[serde(skip)]
    TurnFinished {
        session: u64,
        report: Box<TurnReport>,
        history: Vec<Message>,
    },
    Closed {
        session: u64,
    },
}

pub type Observer = mpsc::UnboundedSender<SessionEvent>;

/// The WebSocket half that carries server output. Reports each
/// `agent_speaking` it delivers so the session can advance its detector.
#[derive(Clone)]
struct WsSink {
    ws: Arc<Mutex<SplitSink<WebSocket, WsMessage>>>,
    speaking: mpsc::UnboundedSender<f64>,
    clock: Clock,
}

impl ClientSink for WsSink {
    async fn emit(&self, item: ClientItem) -> Result<(), SinkClosed> {
        let speaking = matches!(item, ClientItem::Control(ControlMessage::AgentSpeaking));
        let msg = match item {
            ClientItem::Control(c) => WsMessage::Text(c.to_json().into()),
            ClientItem::Audio(frame) => WsMessage::Binary(frame.to_le_bytes().into()),
        };
        self.ws.lock().await.send(msg).await.map_err(|_| SinkClosed)?;
        if speaking {
            let _ = self.speaking.send(self.clock.now_ms());
        }
        Ok(())
    }
}

struct RunningTurn {
    cancel: TurnCancel,
    handle: JoinHandle<(Agent, Vec<Message>, TurnReport)>,
}

struct PendingUtterance {
    text: String,
    utterance_end_ms: f64,
    stt_final_ms: f64,
}

struct Session {
    id: u64,
    config: Arc<PipelineConfig>,
    clock: Clock,
    ctx: TurnContext,
    sink: WsSink,
    observer: Option<Observer>,
    stt_tx: SttSender,
    vad: TurnDetector,
    detector: EnergyDetector,
    vad_buf: Vec<i16>,
    last_audio_ms: f64,
    last_speech_ms: Option<f64>,
    /// Final transcript segments of the utterance in progress.
    final_text: String,
    /// Agent and history while no turn is running.
    idle: Option<(Agent, Vec<Message>)>,
    turn: Option<RunningTurn>,
    queued: Option<PendingUtterance>,
}

impl Session {
    fn notify(&self, event: SessionEvent) {
        if let Some(o) = &self.observer {
            let _ = o.send(event);
        }
    }

    fn set_vad(
        &mut self,
        result: Result<(TurnState, Option<voxline_core::TurnEvent>), voxline_core::VadError>,
        from: TurnState,
        at_ms: f64,
    ) -> Option<TurnEventKind> {
        match result {
            Ok((to, ev)) => {
                if to != from {
                    self.notify(SessionEvent::VadTransition {
                        session: self.id,
                        from,
                        to,
                        at_ms,
                    });
                }
                ev.map(|e| e.kind)
            }
            Err(e) => {
                warn!(session = self.id, "turn detector: {e}");
                None
            }
        }
    }

    fn vad_signal(&mut self, signal: AgentSignal, at_ms: f64) {
        let from = self.vad.state();
        let r = self.vad.step(0.0, Some(signal), at_ms);
        self.set_vad(r, from, at_ms);
    }

    async fn emit(&self, msg: ControlMessage) -> Result<(), SinkClosed> {
        self.sink.emit(ClientItem::Control(msg)).await
    }

    async fn on_binary(&mut self, payload: &[u8]) -> Result<(), SinkClosed> {
        if payload.len() != CLIENT_FRAME_BYTES {
            debug!(session = self.id, len = payload.len(), "dropping mis-sized frame");
            return self
                .emit(ControlMessage::Error {
                    message: format!(
                        "expected {CLIENT_FRAME_BYTES}-byte audio frames, got {}; frame dropped",
                        payload.len()
                    ),
                })
                .await;
        }
        let now = self.clock.now_ms();
        let frame = AudioFrame::from_le_bytes(payload, MIC_SAMPLE_RATE_HZ, now).expect("even length");
        let speaking = self.ctx.agent_speaking.load(Ordering::SeqCst);
        let frame = gate_mic(frame, speaking, self.config.echo_gate_attenuation);
        self.last_audio_ms = now;
        if let Err(e) = self.stt_tx.send_audio(&frame).await {
            warn!(session = self.id, "STT send failed: {e}");
        }
        self.feed_vad(&frame.samples, now);
        Ok(())
    }

    /// Re-chunk 20 ms client frames into detector frames and step the
    /// turn detector; a barge-in cancels the running turn.
    fn feed_vad(&mut self, samples: &[i16], now: f64) {
        self.vad_buf.extend_from_slice(samples);
        let n = self.detector.frame_samples;
        while self.vad_buf.len() >= n {
            let chunk: Vec<i16> = self.vad_buf.drain(..n).collect();
            let prob = match self
                .detector
                .speech_probability(&AudioFrame::new(chunk, MIC_SAMPLE_RATE_HZ, now))
            {
                Ok(p) => p,
                Err(e) => {
                    warn!(session = self.id, "speech detector: {e}");
                    continue;
                }
            };
            if prob >= self.vad.config().speech_threshold {
                self.last_speech_ms = Some(now);
            }
            let from = self.vad.state();
            let r = self.vad.step(prob, None, now);
            if self.set_vad(r, from, now) == Some(TurnEventKind::Interruption) {
                if let Some(turn) = &self.turn {
                    info!(session = self.id, "barge-in; cancelling turn");
                    turn.cancel.cancel(self.clock.now_ms());
                }
            }
        }
    }

    async fn on_transcript(&mut self, ev: TranscriptEvent) -> Result<(), SinkClosed> {
        if !ev.is_final {
            return self
                .emit(ControlMessage::Transcript {
                    text: ev.text,
                    is_final: false,
                })
                .await;
        }
        if !ev.text.trim().is_empty() {
            self.emit(ControlMessage::Transcript {
                text: ev.text.clone(),
                is_final: true,
            })
            .await?;
            if !self.final_text.is_empty() {
                self.final_text.push(' ');
            }
            self.final_text.push_str(ev.text.trim());
        }
        if !ev.speech_final {
            return Ok(());
        }
        let text = std::mem::take(&mut self.final_text);
        if text.is_empty() {
            return Ok(());
        }
        let pending = PendingUtterance {
            text,
            utterance_end_ms: self.last_speech_ms.unwrap_or(self.last_audio_ms),
            stt_final_ms: ev.received_at_ms,
        };
        self.last_speech_ms = None;
        if self.turn.is_some() {
            // answered once the running turn has closed
            self.queued = Some(pending);
        } else {
            self.start_turn(pending);
        }
        Ok(())
    }

    fn start_turn(&mut self, u: PendingUtterance) {
        let Some((mut agent, mut history)) = self.idle.take() else {
            warn!(session = self.id, "no idle agent; dropping utterance");
            return;
        };
        let now = self.clock.now_ms();
        let from = self.vad.state();
        self.vad.end_utterance(now);
        self.set_vad(Ok((self.vad.state(), None)), from, now);
        self.notify(SessionEvent::TurnStarted {
            session: self.id,
            user_text: u.text.clone(),
            at_ms: now,
        });
        let cancel = TurnCancel::new();
        let ctx = self.ctx.clone();
        let sink = self.sink.clone();
        let c = cancel.clone();
        let handle = tokio::spawn(async move {
            let report = run_turn(
                &ctx,
                &mut agent,
                &mut history,
                &u.text,
                u.utterance_end_ms,
                u.stt_final_ms,
                &c,
                &sink,
            )
            .await;
            (agent, history, report)
        });
        self.turn = Some(RunningTurn { cancel, handle });
    }

    fn on_agent_speaking(&mut self, at_ms: f64) {
        if self.turn.is_some() && self.vad.state() == TurnState::Processing {
            self.vad_signal(AgentSignal::AgentAudioStarted, at_ms);
        }
    }

    fn on_turn_finished(&mut self, agent: Agent, history: Vec<Message>, report: TurnReport) {
        self.turn = None;
        let now = self.clock.now_ms();
        if matches!(self.vad.state(), TurnState::Speaking | TurnState::Processing) {
            self.vad_signal(AgentSignal::AgentDone, now);
        }
        self.notify(SessionEvent::TurnFinished {
            session: self.id,
            report: Box::new(report),
            history: history.clone(),
        });
        self.idle = Some((agent, history));
        if let Some(next) = self.queued.take() {
            self.start_turn(next);
        }
    }
}

async fn turn_done(
    turn: &mut Option<RunningTurn>,
) -> Result<(Agent, Vec<Message>, TurnReport), tokio::task::JoinError> {
    match turn {
        Some(t) => (&mut t.handle).await,
        None => std::future::pending().await,
    }
}

async fn next_transcript(
    rx: &mut Option<SttReceiver>,
) -> Option<Result<Option<TranscriptEvent>, voxline_clients::stt::SttError>> {
    match rx {
        Some(r) => Some(r.next_event().await),
        None => std::future::pending().await,
    }
}

pub(crate) async fn run_session(
    socket: WebSocket,
    id: u64,
    config: Arc<PipelineConfig>,
    observer: Option<Observer>,
    shutdown: CancellationToken,
) {
    let clock = Clock::new();
    let (ws_tx, mut ws_rx) = socket.split();
    let (speaking_tx, mut speaking_rx) = mpsc::unbounded_channel();
    let sink = WsSink {
        ws: Arc::new(Mutex::new(ws_tx)),
        speaking: speaking_tx,
        clock,
    };
    let fail = |message: String| {
        let sink = sink.clone();
        async move {
            warn!(session = id, "{message}");
            let _ = sink.emit(ClientItem::Control(ControlMessage::Error { message })).await;
            let _ = sink.ws.lock().await.close().await;
        }
    };

    let agent = match Agent::hospital(config.agent.clone(), seed_store(config.store_seed), clock) {
        Ok(a) => a,
        Err(e) => return fail(format!("agent setup failed: {e}")).await,
    };
    let (vad, stt) = match (
        TurnDetector::new(config.vad.clone()),
        open_session(config.stt.clone(), clock).await,
    ) {
        (Ok(v), Ok(s)) => (v, s),
        (Err(e), _) => return fail(format!("turn detector setup failed: {e}")).await,
        (_, Err(e)) => return fail(format!("STT connection failed: {e}")).await,
    };
    let (stt_tx, stt_rx) = stt.split();
    let mut stt_rx = Some(stt_rx);
    let mut session = Session {
        id,
        ctx: TurnContext::new(&config, clock),
        detector: EnergyDetector::new(&config.vad),
        config,
        clock,
        sink,
        observer,
        stt_tx,
        vad,
        vad_buf: Vec::new(),
        last_audio_ms: 0.0,
        last_speech_ms: None,
        final_text: String::new(),
        idle: Some((agent, Vec::new())),
        turn: None,
        queued: None,
    };
    session.notify(SessionEvent::Opened { session: id });

    loop {
        // speaking notices go first so a stale one never reaches the next turn
        let step: Result<(), SinkClosed> = tokio::select! {
            biased;
            _ = shutdown.cancelled() => break,
            Some(at_ms) = speaking_rx.recv() => {
                session.on_agent_speaking(at_ms);
                Ok(())
            }
            msg = ws_rx.next() => match msg {
                Some(Ok(WsMessage::Binary(bytes))) => session.on_binary(&bytes).await,
                Some(Ok(WsMessage::Text(t))) => {
                    debug!(session = id, "ignoring client text {}", t.as_str());
                    Ok(())
                }
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => Ok(()),
            },
            ev = next_transcript(&mut stt_rx) => match ev {
                Some(Ok(Some(ev))) => session.on_transcript(ev).await,
                Some(Ok(None)) | None => {
                    stt_rx = None;
                    session.emit(ControlMessage::Error { message: "STT session ended".into() }).await
                }
                Some(Err(e)) => {
                    stt_rx = None;
                    session.emit(ControlMessage::Error { message: format!("STT session error: {e}") }).await
                }
            },
            done = turn_done(&mut session.turn) => match done {
                Ok((agent, history, report)) => {
                    session.on_turn_finished(agent, history, report);
                    Ok(())
                }
                Err(e) => {
                    warn!(session = id, "turn task failed: {e}");
                    break;
                }
            },
        };
        if step.is_err() {
            break;
        }
    }

    if let Some(turn) = session.turn.take() {
        turn.cancel.cancel(clock.now_ms());
        let _ = turn.handle.await;
    }
    session.stt_tx.close().await;
    session.notify(SessionEvent::Closed { session: id });
    debug!(session = id, "session closed");
}
