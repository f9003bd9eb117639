//! Voice activity detection and the turn-taking state machine.
//!
//! ```text
//! IDLE --speech--> LISTENING --silence--> PROCESSING --agent audio--> SPEAKING --done--> IDLE
//!                                                                      |
//!                      LISTENING <--next step-- INTERRUPTED <--user speech
//! ```
//!
//! The machine only sees per-frame speech probabilities, so any detector
//! implementing [`SpeechDetector`] can drive it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioFrame, MIC_SAMPLE_RATE_HZ};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VadError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("protocol error: {signal:?} is not valid in state {state:?}")]
    Protocol { state: TurnState, signal: AgentSignal },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TurnState {
    Idle,
    Listening,
    Processing,
    Speaking,
    Interrupted,
}

impl TurnState {
    pub const ALL: [TurnState; 5] = [
        TurnState::Idle,
        TurnState::Listening,
        TurnState::Processing,
        TurnState::Speaking,
        TurnState::Interrupted,
    ];
}

/// Signals from the agent side of the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentSignal {
    AgentAudioStarted,
    AgentDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TurnEventKind {
    SpeechStarted,
    UtteranceEnded,
    Interruption,
    AgentDoneAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub kind: TurnEventKind,
    pub at_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadConfig {
    pub frame_ms: u32,
    pub speech_threshold: f32,
    pub silence_ms_to_end_turn: u32,
    /// Consecutive speech needed to open a turn or barge in.
    pub min_speech_ms: u32,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 32,
            speech_threshold: 0.5,
            silence_ms_to_end_turn: 700,
            min_speech_ms: 96,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<(), VadError> {
        if !(self.speech_threshold > 0.0 && self.speech_threshold < 1.0) {
            return Err(VadError::InvalidArgument(format!(
                "speech_threshold {} outside (0, 1)",
                self.speech_threshold
            )));
        }
        if self.frame_ms == 0 || self.silence_ms_to_end_turn == 0 {
            return Err(VadError::InvalidArgument(
                "frame_ms and silence_ms_to_end_turn must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Samples in one detector frame at 16 kHz (512 for 32 ms).
    pub fn frame_samples(&self) -> usize {
        (MIC_SAMPLE_RATE_HZ as usize) * self.frame_ms as usize / 1000
    }
}

pub trait SpeechDetector: Send {
    /// Probability in `[0, 1]` that `frame` contains speech.
    fn speech_probability(&mut self, frame: &AudioFrame) -> Result<f32, VadError>;
}

/// RMS energy detector: `clamp(rms / calibration_rms, 0, 1)`.
#[derive(Debug, Clone)]
pub struct EnergyDetector {
    pub calibration_rms: f64,
    pub frame_samples: usize,
}

impl EnergyDetector {
    pub const DEFAULT_CALIBRATION_RMS: f64 = 8000.0;

    pub fn new(config: &VadConfig) -> Self {
        Self {
            calibration_rms: Self::DEFAULT_CALIBRATION_RMS,
            frame_samples: config.frame_samples(),
        }
    }

    pub fn rms(samples: &[i16]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
        (sum / samples.len() as f64).sqrt()
    }
}

impl SpeechDetector for EnergyDetector {
    fn speech_probability(&mut self, frame: &AudioFrame) -> Result<f32, VadError> {
        if frame.sample_rate_hz != MIC_SAMPLE_RATE_HZ {
            return Err(VadError::InvalidArgument(format!(
                "detector expects {MIC_SAMPLE_RATE_HZ} Hz, got {}",
                frame.sample_rate_hz
            )));
        }
        if frame.samples.len() != self.frame_samples {
            return Err(VadError::InvalidArgument(format!(
                "detector expects {} samples per frame, got {}",
                self.frame_samples,
                frame.samples.len()
            )));
        }
        let p = Self::rms(&frame.samples) / self.calibration_rms;
        Ok(p.clamp(0.0, 1.0) as f32)
    }
}

/// The five-state turn machine. Durations are accumulated in units of
/// `config.frame_ms` per probability step.
#[derive(Debug, Clone)]
pub struct TurnDetector {
    config: VadConfig,
    state: TurnState,
    speech_run_ms: u32,
    silence_run_ms: u32,
}

impl TurnDetector {
    pub fn new(config: VadConfig) -> Result<Self, VadError> {
        Self::in_state(config, TurnState::Idle)
    }

    /// Start in an arbitrary state with cleared counters.
    pub fn in_state(config: VadConfig, state: TurnState) -> Result<Self, VadError> {
        config.validate()?;
        Ok(Self {
            config,
            state,
            speech_run_ms: 0,
            silence_run_ms: 0,
        })
    }

    pub fn state(&self) -> TurnState {
        self.state
    }

    pub fn config(&self) -> &VadConfig {
        &self.config
    }

    fn enter(&mut self, state: TurnState) {
        self.state = state;
        self.speech_run_ms = 0;
        self.silence_run_ms = 0;
    }

    /// Advance by one frame. An agent signal, when present, is applied
    /// before the frame; a signal that moves the machine consumes the step.
    pub fn step(
        &mut self,
        frame_prob: f32,
        agent_signal: Option<AgentSignal>,
        at_ms: f64,
    ) -> Result<(TurnState, Option<TurnEvent>), VadError> {
        let event = |kind| Some(TurnEvent { kind, at_ms });

        if self.state == TurnState::Interrupted {
            if let Some(signal) = agent_signal {
                return Err(VadError::Protocol {
                    state: self.state,
                    signal,
                });
            }
            // the user is mid-utterance; keep the speech we already heard
            self.enter(TurnState::Listening);
            return Ok((self.state, None));
        }

        if let Some(signal) = agent_signal {
            let ev = match (self.state, signal) {
                (TurnState::Processing, AgentSignal::AgentAudioStarted) => {
                    self.enter(TurnState::Speaking);
                    None
                }
                // Processing + AgentDone: the turn ended without producing audio
                (TurnState::Speaking | TurnState::Processing, AgentSignal::AgentDone) => {
                    self.enter(TurnState::Idle);
                    event(TurnEventKind::AgentDoneAck)
                }
                (state, signal) => return Err(VadError::Protocol { state, signal }),
            };
            return Ok((self.state, ev));
        }

        let is_speech = frame_prob >= self.config.speech_threshold;
        let frame_ms = self.config.frame_ms;
        let ev = match self.state {
            TurnState::Idle | TurnState::Speaking => {
                if is_speech {
                    self.speech_run_ms += frame_ms;
                } else {
                    self.speech_run_ms = 0;
                }
                if self.speech_run_ms >= self.config.min_speech_ms.max(1) {
                    if self.state == TurnState::Idle {
                        self.enter(TurnState::Listening);
                        event(TurnEventKind::SpeechStarted)
                    } else {
                        self.enter(TurnState::Interrupted);
                        event(TurnEventKind::Interruption)
                    }
                } else {
                    None
                }
            }
            TurnState::Listening => {
                if is_speech {
                    self.silence_run_ms = 0;
                    None
                } else {
                    self.silence_run_ms += frame_ms;
                    if self.silence_run_ms >= self.config.silence_ms_to_end_turn {
                        self.enter(TurnState::Processing);
                        event(TurnEventKind::UtteranceEnded)
                    } else {
                        None
                    }
                }
            }
            // the utterance already ended; barge-in is only honoured while speaking
            TurnState::Processing => None,
            TurnState::Interrupted => unreachable!(),
        };
        Ok((self.state, ev))
    }

    /// End the utterance from an external endpointer (the STT `speech_final`
    /// flag). From IDLE the missed speech start is reported first so events
    /// stay paired. No-op in the agent-owned states.
    pub fn end_utterance(&mut self, at_ms: f64) -> Vec<TurnEvent> {
        let ev = |kind| TurnEvent { kind, at_ms };
        match self.state {
            TurnState::Idle => {
                self.enter(TurnState::Processing);
                vec![ev(TurnEventKind::SpeechStarted), ev(TurnEventKind::UtteranceEnded)]
            }
            TurnState::Listening | TurnState::Interrupted => {
                self.enter(TurnState::Processing);
                vec![ev(TurnEventKind::UtteranceEnded)]
            }
            TurnState::Processing | TurnState::Speaking => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn detector() -> TurnDetector {
        TurnDetector::new(VadConfig::default()).unwrap()
    }

    fn feed(d: &mut TurnDetector, prob: f32, n: usize) -> Vec<TurnEvent> {
        (0..n)
            .filter_map(|i| d.step(prob, None, i as f64 * 32.0).unwrap().1)
            .collect()
    }

    fn frame(samples: Vec<i16>) -> AudioFrame {
        AudioFrame::new(samples, 16_000, 0.0)
    }

    #[test]
    fn energy_silence_is_zero() {
        let mut det = EnergyDetector::new(&VadConfig::default());
        assert_eq!(det.speech_probability(&frame(vec![0; 512])).unwrap(), 0.0);
    }

    #[test]
    fn energy_full_scale_square_is_one() {
        let mut det = EnergyDetector::new(&VadConfig::default());
        let sq: Vec<i16> = (0..512)
            .map(|i| if (i / 16) % 2 == 0 { i16::MAX } else { -i16::MAX })
            .collect();
        assert_eq!(det.speech_probability(&frame(sq)).unwrap(), 1.0);
    }

    #[test]
    fn energy_half_calibration() {
        let mut det = EnergyDetector::new(&VadConfig::default());
        // constant-magnitude square wave: rms == 4000 == calibration / 2
        let sq: Vec<i16> = (0..512).map(|i| if i % 2 == 0 { 4000 } else { -4000 }).collect();
        let p = det.speech_probability(&frame(sq.clone())).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!((p - 0.5).abs() < 1e-6);
        assert_eq!(p, det.speech_probability(&frame(sq)).unwrap());
    }

    #[test]
    fn energy_rejects_bad_frames() {
        let mut det = EnergyDetector::new(&VadConfig::default());
        assert!(det.speech_probability(&frame(vec![0; 320])).is_err());
        let f = AudioFrame::new(vec![0; 512], 24_000, 0.0);
        assert!(det.speech_probability(&f).is_err());
    }

    #[test]
    fn three_speech_frames_start_listening() {
        let mut d = detector();
        assert!(feed(&mut d, 0.9, 2).is_empty());
        assert_eq!(d.state(), TurnState::Idle);
        let ev = feed(&mut d, 0.9, 1);
        assert_eq!(d.state(), TurnState::Listening);
        assert_eq!(ev[0].kind, TurnEventKind::SpeechStarted);
    }

    #[test]
    fn twenty_two_silent_frames_end_utterance() {
        let mut d = TurnDetector::in_state(VadConfig::default(), TurnState::Listening).unwrap();
        assert!(feed(&mut d, 0.1, 21).is_empty());
        let ev = feed(&mut d, 0.1, 1);
        assert_eq!(d.state(), TurnState::Processing);
        assert_eq!(ev[0].kind, TurnEventKind::UtteranceEnded);
    }

    #[test]
    fn speaking_done_and_barge_in() {
        let mut d = TurnDetector::in_state(VadConfig::default(), TurnState::Speaking).unwrap();
        let (s, ev) = d.step(0.0, Some(AgentSignal::AgentDone), 0.0).unwrap();
        assert_eq!(s, TurnState::Idle);
        assert_eq!(ev.unwrap().kind, TurnEventKind::AgentDoneAck);

        let mut d = TurnDetector::in_state(VadConfig::default(), TurnState::Speaking).unwrap();
        let ev = feed(&mut d, 0.9, 3);
        assert_eq!(d.state(), TurnState::Interrupted);
        assert_eq!(ev[0].kind, TurnEventKind::Interruption);
        d.step(0.0, None, 0.0).unwrap();
        assert_eq!(d.state(), TurnState::Listening);
    }

    #[test]
    fn agent_done_in_idle_is_protocol_error() {
        let mut d = detector();
        assert!(matches!(
            d.step(0.0, Some(AgentSignal::AgentDone), 0.0),
            Err(VadError::Protocol { .. })
        ));
        assert_eq!(d.state(), TurnState::Idle);
    }

    #[test]
    fn processing_ignores_speech() {
        let mut d = TurnDetector::in_state(VadConfig::default(), TurnState::Processing).unwrap();
        assert!(feed(&mut d, 1.0, 50).is_empty());
        assert_eq!(d.state(), TurnState::Processing);
    }

    #[test]
    fn external_endpointing() {
        let mut d = detector();
        let kinds: Vec<_> = d.end_utterance(5.0).into_iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![TurnEventKind::SpeechStarted, TurnEventKind::UtteranceEnded]);
        assert_eq!(d.state(), TurnState::Processing);
        assert!(d.end_utterance(6.0).is_empty());
    }

    #[test]
    fn config_validation() {
        let c = VadConfig {
            speech_threshold: 1.0,
            ..Default::default()
        };
        assert!(TurnDetector::new(c).is_err());
        let c = VadConfig {
            frame_ms: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
