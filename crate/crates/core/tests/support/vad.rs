//! Shared by the turn-detector tests and the acceptance harness: input
//! classes, the expected transition table and a driver.
#![allow(dead_code)]

use voxline_core::{AgentSignal, TurnDetector, TurnEventKind, TurnState, VadConfig, VadError};

use TurnEventKind::*;
use TurnState::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Input {
    /// One frame above threshold.
    Speech,
    /// `min_speech_ms` worth of frames above threshold.
    SpeechRun,
    Silence,
    /// `silence_ms_to_end_turn` worth of frames below threshold.
    SilenceRun,
    AudioStarted,
    Done,
}

pub const INPUTS: [Input; 6] = [
    Input::Speech,
    Input::SpeechRun,
    Input::Silence,
    Input::SilenceRun,
    Input::AudioStarted,
    Input::Done,
];

pub type Outcome = Result<(TurnState, Vec<TurnEventKind>), ()>;

pub fn apply(state: TurnState, input: Input, config: &VadConfig) -> Outcome {
    let mut d = TurnDetector::in_state(config.clone(), state).unwrap();
    let frames = |ms: u32| ms.div_ceil(config.frame_ms) as usize;
    let (prob, signal, n) = match input {
        Input::Speech => (0.9, None, 1),
        Input::SpeechRun => (0.9, None, frames(config.min_speech_ms)),
        Input::Silence => (0.1, None, 1),
        Input::SilenceRun => (0.1, None, frames(config.silence_ms_to_end_turn)),
        Input::AudioStarted => (0.0, Some(AgentSignal::AgentAudioStarted), 1),
        Input::Done => (0.0, Some(AgentSignal::AgentDone), 1),
    };
    let mut events = Vec::new();
    for i in 0..n {
        match d.step(prob, signal, i as f64 * f64::from(config.frame_ms)) {
            Ok((_, ev)) => events.extend(ev.map(|e| e.kind)),
            Err(VadError::Protocol { .. }) => {
                assert_eq!(d.state(), state, "a rejected signal must not move the machine");
                return Err(());
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    Ok((d.state(), events))
}

pub fn expected(state: TurnState, input: Input) -> Outcome {
    use Input::*;
    Ok(match (state, input) {
        (Idle, SpeechRun) => (Listening, vec![SpeechStarted]),
        (Idle, Speech | Silence | SilenceRun) => (Idle, vec![]),
        (Listening, SilenceRun) => (Processing, vec![UtteranceEnded]),
        (Listening, Speech | SpeechRun | Silence) => (Listening, vec![]),
        (Processing, AudioStarted) => (Speaking, vec![]),
        (Processing, Done) => (Idle, vec![AgentDoneAck]),
        (Processing, Speech | SpeechRun | Silence | SilenceRun) => (Processing, vec![]),
        (Speaking, SpeechRun) => (Interrupted, vec![Interruption]),
        (Speaking, Done) => (Idle, vec![AgentDoneAck]),
        (Speaking, Speech | Silence | SilenceRun) => (Speaking, vec![]),
        // transient: the first frame moves on, the rest are ordinary listening
        (Interrupted, Speech | SpeechRun | Silence | SilenceRun) => (Listening, vec![]),
        (Idle | Listening | Interrupted, AudioStarted | Done) | (Speaking, AudioStarted) => return Err(()),
    })
}

pub fn silence_frames_to_fire(config: &VadConfig) -> usize {
    let mut d = TurnDetector::in_state(config.clone(), Listening).unwrap();
    (1..1000)
        .find(|&i| d.step(0.0, None, i as f64).unwrap().1.is_some())
        .unwrap()
}
