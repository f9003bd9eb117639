//! One conversational turn: agent tokens, sentence aggregation, TTS and audio
//! delivery running as concurrent stages joined by bounded queues.
//!
//! ```text
//! agent ──tokens──▶ sentence buffer ──sentences──▶ TTS requests ──streams──▶ emit
//! ```
//!
//! TTS for sentence k+1 is requested as soon as that sentence is complete,
//! while sentence k may still be streaming. Streams are drained strictly in
//! sentence order.

use std::future::Future;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;
use tokio_util::sync::CancellationToken;
use tokio_util::task::AbortOnDropHandle;
use tracing::{debug, warn};
use voxline_agent::{Agent, AgentConfig, AgentError, TurnSummary};
use voxline_clients::llm::{LlmConfig, Message, Role};
use voxline_clients::stt::SttSessionConfig;
use voxline_clients::tts::{TtsClient, TtsConfig, TtsError, TtsStream};
use voxline_core::{AudioFrame, Clock, SentenceBuffer, SentenceBufferConfig, VadConfig};

use crate::protocol::ControlMessage;

/// Clock timestamps (ms since the session epoch) of one turn.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TurnTimeline {
    pub utterance_end_ms: Option<f64>,
    pub stt_final_ms: Option<f64>,
    pub llm_first_delta_ms: Option<f64>,
    pub first_sentence_ms: Option<f64>,
    pub tts_first_byte_ms: Option<f64>,
    pub first_audio_to_client_ms: Option<f64>,
    pub llm_done_ms: Option<f64>,
    pub last_audio_to_client_ms: Option<f64>,
    pub sentences: u32,
    pub frames_sent: u32,
    pub audio_ms_sent: f64,
    pub cancelled_ms: Option<f64>,
    /// Frames whose delivery was not complete when the turn was cancelled.
    pub frames_after_cancel: u32,
}

impl TurnTimeline {
    /// Final transcript to first audio frame handed to the client.
    pub fn ttfa_ms(&self) -> Option<f64> {
        Some(self.first_audio_to_client_ms? - self.stt_final_ms?)
    }

    /// The ordered stamps, in definition order.
    pub fn ordered(&self) -> [Option<f64>; 6] {
        [
            self.utterance_end_ms,
            self.stt_final_ms,
            self.llm_first_delta_ms,
            self.first_sentence_ms,
            self.tts_first_byte_ms,
            self.first_audio_to_client_ms,
        ]
    }

    /// Every populated stamp is at or after the populated ones before it.
    pub fn is_monotone(&self) -> bool {
        let present: Vec<f64> = self.ordered().into_iter().flatten().collect();
        present.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn is_complete(&self) -> bool {
        self.ordered().iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub stt: SttSessionConfig,
    pub agent: AgentConfig,
    pub tts: TtsConfig,
    pub vad: VadConfig,
    pub sentence: SentenceBufferConfig,
    /// Mic gain while the agent speaks, in `[0, 1]`; 0 mutes the mic.
    pub echo_gate_attenuation: f32,
    /// Capacity of each inter-stage queue.
    pub queue_capacity: usize,
    /// Seed of each session's hospital store.
    pub store_seed: u64,
}

impl PipelineConfig {
    pub fn new(stt: SttSessionConfig, llm: LlmConfig, tts: TtsConfig) -> Self {
        Self {
            stt,
            agent: AgentConfig::new(llm),
            tts,
            vad: VadConfig::default(),
            sentence: SentenceBufferConfig::default(),
            echo_gate_attenuation: 0.0,
            queue_capacity: 64,
            store_seed: 42,
        }
    }

    /// Endpoints and keys from the client modules' environment variables.
    pub fn from_env() -> Self {
        Self::new(
            SttSessionConfig::from_env(),
            LlmConfig::from_env(),
            TtsConfig::from_env(),
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.queue_capacity < 1 {
            return Err("queue_capacity must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.echo_gate_attenuation) {
            return Err(format!(
                "echo_gate_attenuation {} outside [0, 1]",
                self.echo_gate_attenuation
            ));
        }
        self.vad.validate().map_err(|e| e.to_string())?;
        self.sentence.validate()?;
        self.agent.validate().map_err(|e| e.to_string())
    }
}

/// Scale mic samples while the agent is speaking, truncating toward zero.
/// The frame keeps its length so the STT stream timing is undisturbed.
pub fn gate_mic(frame: AudioFrame, agent_speaking: bool, attenuation: f32) -> AudioFrame {
    if !agent_speaking {
        return frame;
    }
    let a = f64::from(attenuation.clamp(0.0, 1.0));
    AudioFrame {
        samples: frame
            .samples
            .iter()
            .map(|&s| (f64::from(s) * a).trunc() as i16)
            .collect(),
        ..frame
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientItem {
    Control(ControlMessage),
    Audio(AudioFrame),
}

#[derive(Debug, Error)]
#[error("client connection closed")]
pub struct SinkClosed;

/// Where a turn's output goes: the WebSocket in the gateway, a channel in
/// tests and benchmarks.
pub trait ClientSink: Send + Sync {
    fn emit(&self, item: ClientItem) -> impl Future<Output = Result<(), SinkClosed>> + Send;
}

impl ClientSink for mpsc::Sender<ClientItem> {
    async fn emit(&self, item: ClientItem) -> Result<(), SinkClosed> {
        self.send(item).await.map_err(|_| SinkClosed)
    }
}

/// Shared, per-session pieces a turn needs.
#[derive(Debug, Clone)]
pub struct TurnContext {
    pub tts: TtsClient,
    pub sentence: SentenceBufferConfig,
    pub queue_capacity: usize,
    pub clock: Clock,
    /// True between `agent_speaking` and `agent_done`; read by the echo gate.
    pub agent_speaking: Arc<AtomicBool>,
}

impl TurnContext {
    pub fn new(config: &PipelineConfig, clock: Clock) -> Self {
        Self {
            tts: TtsClient::new(config.tts.clone(), clock),
            sentence: config.sentence.clone(),
            queue_capacity: config.queue_capacity.max(1),
            clock,
            agent_speaking: Arc::new(AtomicBool::new(false)),
        }
    }
}

/// Cancellation handle for a running turn.
#[derive(Debug, Clone, Default)]
pub struct TurnCancel {
    token: CancellationToken,
    at_ms: Arc<Mutex<Option<f64>>>,
}

impl TurnCancel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Idempotent; the first call's time is kept.
    pub fn cancel(&self, at_ms: f64) {
        self.at_ms.lock().unwrap().get_or_insert(at_ms);
        self.token.cancel();
    }

    pub fn is_cancelled(&self) -> bool {
        self.token.is_cancelled()
    }

    pub fn cancelled_at_ms(&self) -> Option<f64> {
        *self.at_ms.lock().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum TurnOutcome {
    Completed,
    Interrupted,
    Failed(String),
}

/// Per-sentence timings for overlap analysis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SentenceTrace {
    pub text: String,
    pub emitted_ms: f64,
    pub tts_request_ms: Option<f64>,
    pub tts_first_byte_ms: Option<f64>,
    pub first_frame_ms: Option<f64>,
    pub last_frame_ms: Option<f64>,
    pub frames: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnReport {
    pub timeline: TurnTimeline,
    pub outcome: TurnOutcome,
    /// Text of every sentence handed to TTS.
    pub spoken_text: String,
    pub sentences: Vec<SentenceTrace>,
    pub summary: Option<TurnSummary>,
}

#[derive(Debug, Error)]
enum StageError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Tts(#[from] TtsError),
    #[error("TTS task failed: {0}")]
    TtsTask(String),
    #[error(transparent)]
    Sink(#[from] SinkClosed),
    /// A downstream stage stopped; the stage that failed reports the cause.
    #[error("downstream stage stopped")]
    Downstream,
}

#[derive(Default)]
struct Shared {
    timeline: TurnTimeline,
    spoken: String,
    sentences: Vec<SentenceTrace>,
    /// (emit started, emit finished) per audio frame.
    deliveries: Vec<(f64, Option<f64>)>,
}

/// Run one turn for a final transcript.
///
/// On cancellation every stage is dropped (closing the LLM and TTS streams),
/// `history` keeps the user message, completed tool rounds and the text of
/// sentences already sent to TTS marked `truncated`, and `agent_done` is
/// still emitted.
#[allow(clippy::too_many_arguments)]
pub async fn run_turn<S: ClientSink>(
    ctx: &TurnContext,
    agent: &mut Agent,
    history: &mut Vec<Message>,
    user_text: &str,
    utterance_end_ms: f64,
    stt_final_ms: f64,
    cancel: &TurnCancel,
    sink: &S,
) -> TurnReport {
    let start_len = history.len();
    let shared = Mutex::new(Shared {
        timeline: TurnTimeline {
            utterance_end_ms: Some(utterance_end_ms.min(stt_final_ms)),
            stt_final_ms: Some(stt_final_ms),
            ..Default::default()
        },
        ..Default::default()
    });
    let summary: Mutex<Option<TurnSummary>> = Mutex::new(None);

    let result = {
        let work = stages(ctx, agent, history, user_text, cancel, sink, &shared, &summary);
        tokio::select! {
            biased;
            _ = cancel.token.cancelled() => None,
            r = work => Some(r),
        }
    };

    let outcome = match result {
        _ if cancel.is_cancelled() => TurnOutcome::Interrupted,
        None => TurnOutcome::Interrupted,
        Some(Ok(())) => TurnOutcome::Completed,
        Some(Err(e)) => TurnOutcome::Failed(e.to_string()),
    };

    let mut shared = shared.into_inner().unwrap();
    if outcome == TurnOutcome::Interrupted {
        let at = cancel.cancelled_at_ms().unwrap_or_else(|| ctx.clock.now_ms());
        shared.timeline.cancelled_ms = Some(at);
        shared.timeline.frames_after_cancel = shared
            .deliveries
            .iter()
            .filter(|(_, done)| done.is_none_or(|d| d > at))
            .count() as u32;
        truncate_history(history, start_len, &shared.spoken);
    }
    if let TurnOutcome::Failed(reason) = &outcome {
        warn!("turn failed: {reason}");
        let _ = sink
            .emit(ClientItem::Control(ControlMessage::Error {
                message: format!("turn failed: {reason}"),
            }))
            .await;
    }
    let timeline = shared.timeline;
    let _ = sink
        .emit(ClientItem::Control(ControlMessage::AgentDone {
            interrupted: outcome == TurnOutcome::Interrupted,
            timeline: Some(timeline.clone()),
        }))
        .await;
    ctx.agent_speaking.store(false, Ordering::SeqCst);

    TurnReport {
        timeline,
        outcome,
        spoken_text: shared.spoken,
        sentences: shared.sentences,
        summary: summary.into_inner().unwrap(),
    }
}

/// Replace whatever the agent appended as its final reply with the text
/// that actually reached TTS.
fn truncate_history(history: &mut Vec<Message>, start_len: usize, spoken: &str) {
    if history.len() > start_len {
        let last = history.last().unwrap();
        if last.role == Role::Assistant && last.tool_calls.is_none() {
            history.pop();
        }
    }
    if !spoken.trim().is_empty() {
        let mut m = Message::assistant(spoken.trim());
        m.truncated = true;
        history.push(m);
    }
}

#[allow(clippy::too_many_arguments)]
async fn stages<S: ClientSink>(
    ctx: &TurnContext,
    agent: &mut Agent,
    history: &mut Vec<Message>,
    user_text: &str,
    cancel: &TurnCancel,
    sink: &S,
    shared: &Mutex<Shared>,
    summary: &Mutex<Option<TurnSummary>>,
) -> Result<(), StageError> {
    let cap = ctx.queue_capacity;
    let clock = ctx.clock;
    let (token_tx, mut token_rx) = mpsc::channel::<String>(cap);
    let (sentence_tx, mut sentence_rx) = mpsc::channel::<(usize, String)>(cap);
    type Pending = AbortOnDropHandle<Result<TtsStream, TtsError>>;
    let (stream_tx, mut stream_rx) = mpsc::channel::<(usize, Pending)>(cap);

    let agent_stage = async move {
        let r = agent.handle_utterance(history, user_text, &token_tx).await;
        drop(token_tx);
        *summary.lock().unwrap() = r.as_ref().ok().cloned();
        r.map(|_| ()).map_err(StageError::from)
    };

    let sentence_stage = async move {
        let mut buf = SentenceBuffer::with_epoch(ctx.sentence.clone(), clock.epoch());
        let mut index = 0usize;
        let mut dispatch = |text: String, at_ms: f64| {
            if text.trim().is_empty() {
                return None;
            }
            let mut s = shared.lock().unwrap();
            s.timeline.first_sentence_ms.get_or_insert(at_ms);
            s.timeline.sentences += 1;
            s.sentences.push(SentenceTrace {
                text: text.clone(),
                emitted_ms: at_ms,
                ..Default::default()
            });
            index += 1;
            Some((index - 1, text))
        };
        while let Some(token) = token_rx.recv().await {
            shared
                .lock()
                .unwrap()
                .timeline
                .llm_first_delta_ms
                .get_or_insert_with(|| clock.now_ms());
            for chunk in buf.push(&token) {
                if let Some(item) = dispatch(chunk.text, chunk.emitted_at_ms) {
                    sentence_tx.send(item).await.map_err(|_| StageError::Downstream)?;
                }
            }
        }
        shared.lock().unwrap().timeline.llm_done_ms = Some(clock.now_ms());
        if let Some(chunk) = buf.flush() {
            if let Some(item) = dispatch(chunk.text, chunk.emitted_at_ms) {
                sentence_tx.send(item).await.map_err(|_| StageError::Downstream)?;
            }
        }
        Ok::<_, StageError>(())
    };

    let request_stage = async move {
        while let Some((index, text)) = sentence_rx.recv().await {
            let request = ctx.tts.config().request(text.clone());
            let tts = ctx.tts.clone();
            {
                let mut s = shared.lock().unwrap();
                s.spoken.push_str(&text);
                s.sentences[index].tts_request_ms = Some(clock.now_ms());
            }
            let handle = AbortOnDropHandle::new(tokio::spawn(async move { tts.synthesize_stream(&request).await }));
            stream_tx
                .send((index, handle))
                .await
                .map_err(|_| StageError::Downstream)?;
        }
        Ok::<_, StageError>(())
    };

    let emit_stage = async move {
        while let Some((index, handle)) = stream_rx.recv().await {
            let mut stream = handle.await.map_err(|e| StageError::TtsTask(e.to_string()))??;
            while let Some(frame) = stream.next_frame().await {
                let frame = frame?;
                if index == 0 {
                    let mut s = shared.lock().unwrap();
                    if s.timeline.tts_first_byte_ms.is_none() {
                        s.timeline.tts_first_byte_ms = stream.first_byte_ms();
                    }
                }
                if cancel.is_cancelled() {
                    return Ok(());
                }
                if !ctx.agent_speaking.swap(true, Ordering::SeqCst) {
                    sink.emit(ClientItem::Control(ControlMessage::AgentSpeaking)).await?;
                }
                let audio_ms = frame.duration_ms();
                let slot = {
                    let mut s = shared.lock().unwrap();
                    s.deliveries.push((clock.now_ms(), None));
                    s.deliveries.len() - 1
                };
                sink.emit(ClientItem::Audio(frame)).await?;
                let now = clock.now_ms();
                let mut s = shared.lock().unwrap();
                s.deliveries[slot].1 = Some(now);
                let t = &mut s.timeline;
                t.first_audio_to_client_ms.get_or_insert(now);
                t.last_audio_to_client_ms = Some(now);
                t.frames_sent += 1;
                t.audio_ms_sent += audio_ms;
                let trace = &mut s.sentences[index];
                trace.first_frame_ms.get_or_insert(now);
                trace.last_frame_ms = Some(now);
                trace.frames += 1;
                trace.tts_first_byte_ms = stream.first_byte_ms();
            }
            debug!(index, "sentence audio delivered");
        }
        Ok::<_, StageError>(())
    };

    tokio::try_join!(agent_stage, sentence_stage, request_stage, emit_stage).map(|_| ())
}
