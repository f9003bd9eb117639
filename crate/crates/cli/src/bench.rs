//! Latency benchmarks: per-component measurements against STT, LLM and TTS
//! endpoints, full-pipeline turns through a gateway, and the analytic
//! time-to-first-audio estimates.

use std::future::Future;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};
use voxline_clients::llm::{DeltaKind, LlmClient, LlmConfig, Message};
use voxline_clients::stt::{open_session, SttSessionConfig};
use voxline_clients::tts::{TtsClient, TtsConfig};
use voxline_core::stats::render_table;
use voxline_core::{Clock, LatencyModel, LatencyReport, StatsError, TtfaMode};
use voxline_gateway::client::mic_frame;
use voxline_gateway::{ControlMessage, GatewayClient, ServerPayload, TurnTimeline};
use voxline_mocks::Scenario;

const TURN_TIMEOUT: Duration = Duration::from_secs(30);
const RETRY_DELAY: Duration = Duration::from_millis(250);
const SPEECH_AMPLITUDE: i16 = 12_000;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{target}: {message}")]
    Endpoint { target: &'static str, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn endpoint(target: &'static str) -> impl Fn(String) -> BenchError {
    move |message| BenchError::Endpoint { target, message }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub iterations: usize,
    /// Leading iterations measured but left out of the statistics.
    pub warmup: usize,
    /// Extra attempts when an iteration cannot reach its endpoint.
    pub retries: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            iterations: 20,
            warmup: 1,
            retries: 2,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.iterations < 1 {
            return Err(BenchError::InvalidArgument("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

async fn with_retries<T, F, Fut>(retries: usize, mut attempt: F) -> Result<T, String>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, String>>,
{
    let mut last = String::new();
    for n in 0..=retries {
        match attempt().await {
            Ok(v) => return Ok(v),
            Err(e) => {
                warn!(attempt = n + 1, "{e}");
                last = e;
                tokio::time::sleep(RETRY_DELAY).await;
            }
        }
    }
    Err(format!("gave up after {} attempts: {last}", retries + 1))
}

/// Run `warmup + iterations` measurements in sequence and split the samples.
/// Per-iteration extras are returned for every iteration, warmup included.
async fn sample_series<X, F, Fut>(
    opts: &BenchOptions,
    mut measure: F,
) -> Result<(Vec<f64>, Vec<f64>, Vec<X>), BenchError>
where
    F: FnMut(usize) -> Fut,
    Fut: Future<Output = Result<(f64, X), BenchError>>,
{
    opts.validate()?;
    let mut warmup = Vec::with_capacity(opts.warmup);
    let mut samples = Vec::with_capacity(opts.iterations);
    let mut extras = Vec::with_capacity(opts.warmup + opts.iterations);
    for i in 0..opts.warmup + opts.iterations {
        let (v, x) = measure(i).await?;
        debug!(iteration = i, ms = v, "sample");
        if i < opts.warmup {
            warmup.push(v);
        } else {
            samples.push(v);
        }
        extras.push(x);
    }
    Ok((samples, warmup, extras))
}

/// Everything one `bench` invocation produces; also the `--out` file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub target: String,
    pub reports: Vec<LatencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<Throughput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tts_rtf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<Estimate>,
}

impl BenchOutput {
    fn new(target: &str, reports: Vec<LatencyReport>) -> Self {
        Self {
            target: target.into(),
            reports,
            throughput: None,
            tts_rtf: None,
            pipeline: None,
            estimate: None,
        }
    }

    /// Human-readable rendering; every number comes from the same fields
    /// that are exported.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.reports.is_empty() {
            out.push_str(&render_table(&self.reports));
        }
        if let Some(t) = &self.throughput {
            out.push_str(&format!(
                "throughput: {:.1} tokens/s (mean inter-token gap {:.1} ms over {} gaps)\n",
                t.tokens_per_second, t.mean_gap_ms, t.gaps
            ));
        }
        if let Some(rtf) = self.tts_rtf {
            out.push_str(&format!("tts real-time factor (mean): {rtf:.3}\n"));
        }
        if let Some(p) = &self.pipeline {
            out.push('\n');
            out.push_str(&p.render());
        }
        if let Some(e) = &self.estimate {
            out.push_str(&e.render());
        }
        out
    }
}

// ---- STT ----

/// Time from the last audio byte (followed by a finalize request) to the
/// `speech_final` result. Each iteration opens a fresh session.
pub async fn bench_stt(
    config: &SttSessionConfig,
    utterance_ms: u32,
    opts: &BenchOptions,
) -> Result<BenchOutput, BenchError> {
    let clock = Clock::new();
    let (samples, warmup, _) = sample_series(opts, |_| async {
        let session = with_retries(opts.retries, || async {
            open_session(config.clone(), clock).await.map_err(|e| e.to_string())
        })
        .await
        .map_err(endpoint("stt"))?;
        let (tx, mut rx) = session.split();
        let frames = utterance_ms.div_ceil(20);
        for k in 0..frames {
            tx.send_audio(&mic_frame(SPEECH_AMPLITUDE, f64::from(k * 20)))
                .await
                .map_err(|e| endpoint("stt")(e.to_string()))?;
        }
        tx.finalize().await.map_err(|e| endpoint("stt")(e.to_string()))?;
        let last_audio = clock.now_ms();
        let result = loop {
            match tokio::time::timeout(TURN_TIMEOUT, rx.next_event()).await {
                Err(_) => break Err(endpoint("stt")("no speech_final before timeout".into())),
                Ok(Err(e)) => break Err(endpoint("stt")(e.to_string())),
                Ok(Ok(None)) => break Err(endpoint("stt")("session ended before speech_final".into())),
                Ok(Ok(Some(ev))) if ev.speech_final => break Ok((ev.received_at_ms - last_audio, ())),
                Ok(Ok(Some(_))) => {}
            }
        };
        tx.close().await;
        result
    })
    .await?;
    Ok(BenchOutput::new(
        "stt",
        vec![LatencyReport::from_samples(
            "STT (last audio to final)",
            samples,
            warmup,
        )?],
    ))
}

// ---- LLM ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    /// `1000 / mean_gap_ms`.
    pub tokens_per_second: f64,
    pub mean_gap_ms: f64,
    pub gaps: usize,
    /// Text deltas per measured iteration.
    pub tokens_per_iteration: Vec<usize>,
}

pub const DEFAULT_LLM_PROMPT: &str = "Hi, I'd like to book an appointment with Dr. Smith.";

/// TTFT per request, plus inter-token gaps and throughput over the
/// measured iterations.
pub async fn bench_llm(config: &LlmConfig, prompt: &str, opts: &BenchOptions) -> Result<BenchOutput, BenchError> {
    let clock = Clock::new();
    let client = LlmClient::new(config.clone(), clock).map_err(|e| endpoint("llm")(e.to_string()))?;
    let messages = [Message::user(prompt)];
    // extras: (text deltas, inter-token gaps) per iteration
    let (samples, warmup, gaps) = sample_series(opts, |_| {
        let client = &client;
        let messages = &messages;
        async move {
            let mut stream = with_retries(opts.retries, || async {
                client.chat_stream(messages, &[]).await.map_err(|e| e.to_string())
            })
            .await
            .map_err(endpoint("llm"))?;
            let mut stamps = Vec::new();
            while let Some(d) = stream.next_delta().await {
                let d = d.map_err(|e| endpoint("llm")(e.to_string()))?;
                if matches!(d.kind, DeltaKind::Text(_)) {
                    stamps.push(d.at_ms);
                }
            }
            let gaps: Vec<f64> = stamps.windows(2).map(|w| w[1] - w[0]).collect();
            let ttft = stream
                .ttft_ms()
                .ok_or_else(|| endpoint("llm")("stream produced no content".into()))?;
            Ok((ttft, (stamps.len(), gaps)))
        }
    })
    .await?;
    let measured = &gaps[opts.warmup..];
    let pooled: Vec<f64> = measured.iter().flat_map(|g| g.1.iter().copied()).collect();
    let mut out = BenchOutput::new("llm", vec![LatencyReport::from_samples("LLM TTFT", samples, warmup)?]);
    if !pooled.is_empty() {
        let mean_gap_ms = pooled.iter().sum::<f64>() / pooled.len() as f64;
        out.throughput = Some(Throughput {
            tokens_per_second: 1000.0 / mean_gap_ms,
            mean_gap_ms,
            gaps: pooled.len(),
            tokens_per_iteration: measured.iter().map(|g| g.0).collect(),
        });
        let warm_gaps: Vec<f64> = gaps[..opts.warmup].iter().flat_map(|g| g.1.iter().copied()).collect();
        out.reports
            .push(LatencyReport::from_samples("LLM inter-token gap", pooled, warm_gaps)?);
    }
    Ok(out)
}

// ---- TTS ----

pub const DEFAULT_TTS_TEXT: &str = "Thanks for calling. How can I help you today?";

pub async fn bench_tts(config: &TtsConfig, text: &str, opts: &BenchOptions) -> Result<BenchOutput, BenchError> {
    let clock = Clock::new();
    let client = TtsClient::new(config.clone(), clock);
    let request = config.request(text);
    let (samples, warmup, rtfs) = sample_series(opts, |_| {
        let client = &client;
        let request = &request;
        async move {
            let stream = with_retries(opts.retries, || async {
                client.synthesize_stream(request).await.map_err(|e| e.to_string())
            })
            .await
            .map_err(endpoint("tts"))?;
            let (_, stats) = stream.collect().await.map_err(|e| endpoint("tts")(e.to_string()))?;
            Ok((stats.ttfb_ms, stats.rtf))
        }
    })
    .await?;
    let mut out = BenchOutput::new("tts", vec![LatencyReport::from_samples("TTS TTFB", samples, warmup)?]);
    let measured = &rtfs[opts.warmup..];
    out.tts_rtf = Some(measured.iter().sum::<f64>() / measured.len() as f64);
    Ok(out)
}

// ---- pipeline ----

/// One turn as seen by the client and reported by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRow {
    pub iteration: usize,
    pub warmup: bool,
    pub user_text: String,
    /// Final transcript received to first audio frame received, client clock.
    pub ttfa_ms: f64,
    pub stt_ms: f64,
    pub llm_ttft_ms: f64,
    pub sentence_detect_ms: f64,
    pub tts_ttfb_ms: f64,
    pub llm_total_ms: f64,
    pub audio_frames: usize,
    pub audio_ms: f64,
    pub timeline: TurnTimeline,
}

impl TurnRow {
    fn from_timeline(iteration: usize, warmup: bool, user_text: String, ttfa_ms: f64, t: TurnTimeline) -> Option<Self> {
        let gap = |a: Option<f64>, b: Option<f64>| Some(b? - a?);
        Some(Self {
            iteration,
            warmup,
            user_text,
            ttfa_ms,
            stt_ms: gap(t.utterance_end_ms, t.stt_final_ms)?,
            llm_ttft_ms: gap(t.stt_final_ms, t.llm_first_delta_ms)?,
            sentence_detect_ms: gap(t.llm_first_delta_ms, t.first_sentence_ms)?,
            tts_ttfb_ms: gap(t.first_sentence_ms, t.tts_first_byte_ms)?,
            llm_total_ms: gap(t.stt_final_ms, t.llm_done_ms)?,
            audio_frames: t.frames_sent as usize,
            audio_ms: t.audio_ms_sent,
            timeline: t,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub turns: Vec<TurnRow>,
    /// STT + LLM TTFT + TTS TTFB from the component P50s.
    pub sequential_estimate_ms: f64,
    /// STT + LLM time to first sentence + TTS TTFB.
    pub streaming_estimate_ms: f64,
    /// STT + full LLM generation + TTS TTFB: what a pipeline that waits
    /// for the complete reply would need at best.
    pub turn_based_estimate_ms: f64,
    /// P50 of per-turn STT + measured TTFA, comparable with the estimates.
    pub measured_with_stt_p50_ms: f64,
}

impl PipelineSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:>4} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7}  {}\n",
            "turn", "TTFA", "STT", "TTFT", "sentence", "TTS TTFB", "LLM all", "frames", "user"
        );
        for r in &self.turns {
            out.push_str(&format!(
                "{:>4} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>7}  {}{}\n",
                r.iteration,
                r.ttfa_ms,
                r.stt_ms,
                r.llm_ttft_ms,
                r.sentence_detect_ms,
                r.tts_ttfb_ms,
                r.llm_total_ms,
                r.audio_frames,
                r.user_text,
                if r.warmup { " (warmup)" } else { "" }
            ));
        }
        out.push_str(&format!(
            "\n{:<52} {:>8.1} ms\n{:<52} {:>8.1} ms\n{:<52} {:>8.1} ms\n{:<52} {:>8.1} ms\n",
            "measured STT + TTFA (P50)",
            self.measured_with_stt_p50_ms,
            "streaming estimate (STT + first sentence + TTS TTFB)",
            self.streaming_estimate_ms,
            "sequential estimate (STT + TTFT + TTS TTFB)",
            self.sequential_estimate_ms,
            "turn-based estimate (STT + full LLM + TTS TTFB)",
            self.turn_based_estimate_ms
        ));
        out
    }
}

/// Drive scripted turns through a gateway over one WebSocket connection.
/// Turn `i` sends `scenario.turn(i).utterance_audio_ms` of audio and waits for
/// `agent_done`.
pub async fn bench_pipeline(ws_url: &str, scenario: &Scenario, opts: &BenchOptions) -> Result<BenchOutput, BenchError> {
    opts.validate()?;
    let mut client = with_retries(opts.retries, || async {
        GatewayClient::connect(ws_url).await.map_err(|e| e.to_string())
    })
    .await
    .map_err(endpoint("pipeline"))?;
    let fail = endpoint("pipeline");
    let mut rows = Vec::new();
    for i in 0..opts.warmup + opts.iterations {
        let turn = scenario.turn(i);
        let ms = turn.utterance_audio_ms.max(20.0).ceil() as u32;
        client
            .send_tone(ms, SPEECH_AMPLITUDE, false)
            .await
            .map_err(|e| fail(e.to_string()))?;
        let items = client.recv_turn(TURN_TIMEOUT).await.map_err(|e| fail(e.to_string()))?;
        let mut final_at = None;
        let mut first_audio = None;
        let mut user_text = String::new();
        let mut timeline = None;
        for item in &items {
            match &item.payload {
                ServerPayload::Control(ControlMessage::Transcript { text, is_final: true }) => {
                    final_at.get_or_insert(item.at);
                    user_text = text.clone();
                }
                ServerPayload::Audio(_) => {
                    first_audio.get_or_insert(item.at);
                }
                ServerPayload::Control(ControlMessage::AgentDone { timeline: t, .. }) => timeline = t.clone(),
                ServerPayload::Control(ControlMessage::Error { message }) => {
                    return Err(fail(format!("turn {i}: {message}")))
                }
                _ => {}
            }
        }
        let (Some(final_at), Some(first_audio), Some(timeline)) = (final_at, first_audio, timeline) else {
            return Err(fail(format!("turn {i} ended without transcript, audio or timeline")));
        };
        let ttfa = first_audio.duration_since(final_at).as_secs_f64() * 1000.0;
        let row = TurnRow::from_timeline(i, i < opts.warmup, user_text, ttfa, timeline)
            .ok_or_else(|| fail(format!("turn {i} timeline is incomplete")))?;
        rows.push(row);
    }
    client.close().await;
    summarize_pipeline(rows)
}

fn summarize_pipeline(rows: Vec<TurnRow>) -> Result<BenchOutput, BenchError> {
    let split = |f: fn(&TurnRow) -> f64| -> (Vec<f64>, Vec<f64>) {
        let measured = rows.iter().filter(|r| !r.warmup).map(f).collect();
        let warm = rows.iter().filter(|r| r.warmup).map(f).collect();
        (measured, warm)
    };
    let report = |name: &str, f: fn(&TurnRow) -> f64| {
        let (m, w) = split(f);
        LatencyReport::from_samples(name, m, w)
    };
    let ttfa = report("TTFA (measured)", |r| r.ttfa_ms)?;
    let stt = report("STT (utterance end to final)", |r| r.stt_ms)?;
    let ttft = report("LLM TTFT", |r| r.llm_ttft_ms)?;
    let sentence = report("Sentence detection", |r| r.sentence_detect_ms)?;
    let tts = report("TTS TTFB", |r| r.tts_ttfb_ms)?;
    let llm_total = report("LLM total", |r| r.llm_total_ms)?;
    let with_stt = report("STT + TTFA", |r| r.stt_ms + r.ttfa_ms)?;

    let first_sentence = ttft.p50_ms + sentence.p50_ms;
    let summary = PipelineSummary {
        sequential_estimate_ms: LatencyModel::streaming(stt.p50_ms, ttft.p50_ms, tts.p50_ms)
            .estimate_ttfa(TtfaMode::Streaming)?,
        streaming_estimate_ms: LatencyModel::streaming(stt.p50_ms, first_sentence, tts.p50_ms)
            .estimate_ttfa(TtfaMode::Streaming)?,
        turn_based_estimate_ms: LatencyModel::turn_based(stt.p50_ms, llm_total.p50_ms, tts.p50_ms)
            .estimate_ttfa(TtfaMode::TurnBased)?,
        measured_with_stt_p50_ms: with_stt.p50_ms,
        turns: rows,
    };
    let mut out = BenchOutput::new("pipeline", vec![ttfa, stt, ttft, sentence, tts, llm_total]);
    out.pipeline = Some(summary);
    Ok(out)
}

// ---- analytic ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub model: LatencyModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_based_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streaming_ms: Option<f64>,
}

impl Estimate {
    /// Evaluates whichever modes have all their terms set.
    pub fn from_model(model: LatencyModel) -> Result<Self, BenchError> {
        let eval = |mode| match model.estimate_ttfa(mode) {
            Ok(v) => Ok(Some(v)),
            Err(StatsError::InvalidArgument(m)) if m.contains("is required") => Ok(None),
            Err(e) => Err(BenchError::from(e)),
        };
        let e = Self {
            model,
            turn_based_ms: eval(TtfaMode::TurnBased)?,
            streaming_ms: eval(TtfaMode::Streaming)?,
        };
        if e.turn_based_ms.is_none() && e.streaming_ms.is_none() {
            return Err(BenchError::InvalidArgument(
                "give --stt with --llm and --tts (turn-based) and/or --first-sentence and --tts-ttfb (streaming)"
                    .into(),
            ));
        }
        Ok(e)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("analytic TTFA estimate (not a measurement)\n");
        if let Some(v) = self.turn_based_ms {
            out.push_str(&format!("  turn-based: {v} ms\n"));
        }
        if let Some(v) = self.streaming_ms {
            out.push_str(&format!("  streaming:  {v} ms\n"));
        }
        out
    }
}

pub fn estimate(model: LatencyModel) -> Result<BenchOutput, BenchError> {
    let mut out = BenchOutput::new("estimate", Vec::new());
    out.estimate = Some(Estimate::from_model(model)?);
    Ok(out)
}
