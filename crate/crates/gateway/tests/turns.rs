//! Turn timing, overlap and barge-in through the full gateway.

mod common;

use common::{rig, LOUD, WAIT};
use voxline_clients::llm::Role;
use voxline_core::TurnState;
use voxline_gateway::{ControlMessage, GatewayClient, Received, SessionEvent, TurnOutcome, TurnReport};
use voxline_mocks::{Scenario, ScenarioTurn};

const LONG_REPLY: &str = "Let me pull up the schedule for you right now. \
    Dr. Lee has a few openings on Tuesday morning and one in the afternoon. \
    Which of those would suit you best?";

fn slow_speaker(user: &str, reply: &str) -> ScenarioTurn {
    let mut t = ScenarioTurn::simple(user, reply);
    t.utterance_audio_ms = 200.0;
    t.llm_ttft_ms = 60.0;
    t.llm_inter_token_ms = 10.0;
    t.tts_ttfb_ms = 40.0;
    // audio streams in real time, so barge-in lands mid-playback
    t.tts_rtf = 1.0;
    t
}

fn is_done(r: &Received) -> bool {
    matches!(r.control(), Some(ControlMessage::AgentDone { .. }))
}

/// Speak over the agent once its audio has started and return what the
/// client saw from the start of the turn through `agent_done`. The 160 ms
/// of barge-in audio is five detector frames.
async fn barge_in(c: &mut GatewayClient) -> Vec<Received> {
    c.send_tone(200, LOUD, false).await.unwrap();
    let mut seen = c.recv_until(WAIT, |r| r.is_audio()).await.unwrap();
    c.send_tone(160, LOUD, false).await.unwrap();
    seen.extend(c.recv_turn(WAIT).await.unwrap());
    seen
}

#[tokio::test]
async fn three_sentence_reply_overlaps_generation_and_playback() {
    // generation spans ~40 tokens at 30 ms, far longer than twice the TTFB
    let mut turn = ScenarioTurn::simple("Is Dr. Lee free on Tuesday?", LONG_REPLY);
    turn.utterance_audio_ms = 200.0;
    turn.llm_ttft_ms = 120.0;
    turn.llm_inter_token_ms = 30.0;
    turn.tts_ttfb_ms = 80.0;
    turn.tts_rtf = 0.25;
    let mut r = rig(Scenario::new("overlap", vec![turn]), |_| {}).await;
    let mut c = r.client().await;
    c.send_tone(200, LOUD, false).await.unwrap();
    c.recv_turn(WAIT).await.unwrap();
    let (_, report, _) = r.next_report().await;
    let t = &report.timeline;

    assert_eq!(report.outcome, TurnOutcome::Completed);
    assert_eq!(report.sentences.len(), 3);
    assert!(t.is_complete() && t.is_monotone(), "{t:?}");
    let llm_total = t.llm_done_ms.unwrap() - t.stt_final_ms.unwrap();
    let s0 = &report.sentences[0];
    let tts_ttfb = s0.tts_first_byte_ms.unwrap() - s0.tts_request_ms.unwrap();
    assert!(llm_total > 2.0 * tts_ttfb);
    // first audio leaves before the LLM has finished
    assert!(t.first_audio_to_client_ms.unwrap() < t.llm_done_ms.unwrap(), "{t:?}");
    assert!(t.ttfa_ms().unwrap() < llm_total + tts_ttfb);
    // later sentences were requested before the first one finished playing
    assert!(report.sentences[1].tts_request_ms.unwrap() < s0.last_frame_ms.unwrap());
    r.shutdown().await;
}

#[tokio::test]
async fn zero_latency_mocks_give_near_zero_ttfa() {
    let mut turn = ScenarioTurn::simple("hello", "Hi there, how can I help?");
    turn.utterance_audio_ms = 200.0;
    let mut r = rig(Scenario::new("zero", vec![turn]).zero_latency(), |_| {}).await;
    let mut c = r.client().await;
    for _ in 0..3 {
        c.send_tone(200, LOUD, false).await.unwrap();
        c.recv_turn(WAIT).await.unwrap();
        let (_, report, _) = r.next_report().await;
        let t = report.timeline;
        assert!(t.is_complete() && t.is_monotone(), "{t:?}");
        assert!(t.ttfa_ms().unwrap() < 50.0, "{t:?}");
    }
    r.shutdown().await;
}

#[tokio::test]
async fn barge_in_cancels_and_the_next_turn_sees_truncated_history() {
    let turns = vec![
        slow_speaker("Is Dr. Lee free on Tuesday?", LONG_REPLY),
        ScenarioTurn {
            utterance_audio_ms: 160.0,
            ..slow_speaker("Actually, never mind.", "No problem at all.")
        },
    ];
    let mut r = rig(Scenario::new("barge-in", turns), |p| p.echo_gate_attenuation = 1.0).await;
    let mut c = r.client().await;
    let seen = barge_in(&mut c).await;

    match seen.last().unwrap().control() {
        Some(ControlMessage::AgentDone { interrupted, timeline }) => {
            assert!(interrupted);
            assert!(timeline.as_ref().unwrap().frames_after_cancel <= 1);
        }
        other => panic!("expected agent_done, got {other:?}"),
    }
    let (_, report, history) = r.next_report().await;
    assert_eq!(report.outcome, TurnOutcome::Interrupted);
    let last = history.last().unwrap();
    assert_eq!(last.role, Role::Assistant);
    assert!(last.truncated);
    assert_eq!(last.content.as_deref(), Some(report.spoken_text.trim()));
    assert!(report.timeline.audio_ms_sent < 1000.0, "{:?}", report.timeline);

    while let Ok(ev) = r.events.try_recv() {
        r.log.push(ev);
    }
    let path: Vec<_> = r
        .log
        .iter()
        .filter_map(|ev| match ev {
            SessionEvent::VadTransition { from, to, .. } => Some((*from, *to)),
            _ => None,
        })
        .collect();
    let speaking = path
        .iter()
        .position(|&p| p == (TurnState::Processing, TurnState::Speaking));
    let interrupted = path
        .iter()
        .position(|&p| p == (TurnState::Speaking, TurnState::Interrupted));
    let listening = path
        .iter()
        .position(|&p| p == (TurnState::Interrupted, TurnState::Listening));
    assert!(
        speaking < interrupted && interrupted < listening && speaking.is_some(),
        "{path:?}"
    );

    // the barge-in audio completes the next utterance, answered on the truncated history
    let next = c.recv_turn(WAIT).await.unwrap();
    assert!(next.iter().any(|r| r.control()
        == Some(&ControlMessage::Transcript {
            text: "Actually, never mind.".into(),
            is_final: true
        })));
    let (_, report, history) = r.next_report().await;
    assert_eq!(report.outcome, TurnOutcome::Completed);
    assert_eq!(report.spoken_text, "No problem at all.");
    let roles: Vec<Role> = history.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::User, Role::Assistant, Role::User, Role::Assistant]);
    assert!(history[1].truncated && !history[3].truncated);
    r.shutdown().await;
}

#[tokio::test]
async fn at_most_one_frame_after_cancel_over_twenty_trials() {
    let turns = vec![slow_speaker("Is Dr. Lee free on Tuesday?", LONG_REPLY)];
    let mut r = rig(Scenario::new("cancel", turns), |p| p.echo_gate_attenuation = 1.0).await;
    let mut worst = 0;
    for _ in 0..20 {
        let mut c = r.client().await;
        let seen = barge_in(&mut c).await;
        assert!(is_done(seen.last().unwrap()));
        let report: TurnReport = r.next_report().await.1;
        assert_eq!(report.outcome, TurnOutcome::Interrupted);
        worst = worst.max(report.timeline.frames_after_cancel);
        c.close().await;
    }
    assert!(worst <= 1, "worst case {worst} frames after cancel");
    r.shutdown().await;
}

#[tokio::test]
async fn without_attenuation_the_agent_cannot_be_interrupted() {
    let turns = vec![slow_speaker("hello", "Hi there, how can I help you today?")];
    let mut r = rig(Scenario::new("gated", turns), |p| p.echo_gate_attenuation = 0.0).await;
    let mut c = r.client().await;
    let seen = barge_in(&mut c).await;
    match seen.last().unwrap().control() {
        Some(ControlMessage::AgentDone { interrupted, .. }) => assert!(!interrupted),
        other => panic!("expected agent_done, got {other:?}"),
    }
    assert_eq!(r.next_report().await.1.outcome, TurnOutcome::Completed);
    r.shutdown().await;
}
