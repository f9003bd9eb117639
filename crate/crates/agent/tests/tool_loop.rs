use std::sync::Arc;

use proptest::prelude::*;
use serde_json::{json, Value};
use voxline_agent::agent::DEFAULT_FALLBACK;
use voxline_agent::{check_history, seed_store, Agent, AgentConfig, AppointmentStatus, HospitalStore};
use voxline_clients::llm::{LlmConfig, Message, Role};
use voxline_core::Clock;
use voxline_mocks::{run_mock_llm, MockLlm, MockLlmOptions, Scenario, ScenarioTurn, ScriptStep};

async fn mock(steps: Vec<ScriptStep>) -> MockLlm {
    let mut turn = ScenarioTurn::simple("hello", "unused.");
    turn.llm_script = steps;
    let scenario = Scenario::new("agent-test", vec![turn]);
    scenario.validate().unwrap();
    run_mock_llm(
        Arc::new(scenario),
        "127.0.0.1:0".parse().unwrap(),
        MockLlmOptions::default(),
    )
    .await
    .unwrap()
}

fn agent(llm: &MockLlm, store: HospitalStore, max_depth: u32) -> Agent {
    let mut config = AgentConfig::new(LlmConfig::new(llm.url(), "test-key", "mock-model"));
    config.max_tool_depth = max_depth;
    Agent::hospital(config, store, Clock::new()).unwrap()
}

fn tool_results(history: &[Message]) -> Vec<Value> {
    history
        .iter()
        .filter(|m| m.role == Role::Tool)
        .map(|m| serde_json::from_str(m.content.as_deref().unwrap()).unwrap())
        .collect()
}

#[tokio::test]
async fn availability_then_answer() {
    let store = seed_store(42);
    let (date, slots) = store.doctors["Smith"]
        .schedule
        .iter()
        .min_by_key(|(_, s)| s.len())
        .map(|(d, s)| (d.clone(), s.clone()))
        .unwrap();
    let reply = "Dr. Smith has openings at 9 AM and 2 PM.";
    let llm = mock(vec![
        ScriptStep::tool_call("check_availability", json!({"doctor": "Smith", "date": date})),
        ScriptStep::text(reply),
    ])
    .await;
    let mut agent = agent(&llm, store, 5);
    let mut history = Vec::new();
    let (text, summary) = agent.respond(&mut history, "When can I see Dr. Smith?").await.unwrap();

    assert_eq!(text, reply);
    assert_eq!(summary.rounds, 2);
    assert_eq!(summary.tools_executed, ["check_availability"]);
    let roles: Vec<Role> = history.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::User, Role::Assistant, Role::Tool, Role::Assistant]);
    assert_eq!(tool_results(&history)[0]["slots"], json!(slots));
    check_history(&history).unwrap();
}

#[tokio::test]
async fn direct_answer_is_one_round() {
    let llm = mock(vec![ScriptStep::text("Hello, how can I help you today?")]).await;
    let mut agent = agent(&llm, seed_store(42), 5);
    let mut history = Vec::new();
    let (text, summary) = agent.respond(&mut history, "Hi there").await.unwrap();
    assert_eq!(text, "Hello, how can I help you today?");
    assert_eq!(summary.rounds, 1);
    assert_eq!(history.len(), 2);
    assert_eq!(llm.requests(), 1);
}

#[tokio::test]
async fn patient_lookup_then_booking_chain() {
    let store = seed_store(42);
    let doctor = store.patients["P003"].primary_doctor.clone();
    let (date, time) = store.doctors[&doctor]
        .schedule
        .iter()
        .find_map(|(d, s)| s.first().map(|t| (d.clone(), t.clone())))
        .unwrap();
    let expected_id = format!("A{}", store.next_appointment_number);
    let llm = mock(vec![
        ScriptStep::tool_call("get_patient_info", json!({"patient_id": "P003"})),
        ScriptStep::tool_call(
            "schedule_appointment",
            json!({"patient_id": "P003", "doctor": doctor, "date": date, "time": time}),
        ),
        ScriptStep::text("You're booked. See you then!"),
    ])
    .await;
    let mut agent = agent(&llm, store, 5);
    let mut history = Vec::new();
    let (_, summary) = agent
        .respond(&mut history, "Book me with my usual doctor, patient P003.")
        .await
        .unwrap();

    assert_eq!(summary.tools_executed, ["get_patient_info", "schedule_appointment"]);
    let results = tool_results(&history);
    assert_eq!(results[0]["primary_doctor"], json!(doctor));
    assert_eq!(results[1]["appointment_id"], json!(expected_id));
    let appt = &agent.store().appointments[&expected_id];
    assert_eq!(
        (appt.patient_id.as_str(), appt.status),
        ("P003", AppointmentStatus::Booked)
    );
    assert!(!agent.store().open_slots(&doctor, &date).unwrap().contains(&time));
    check_history(&history).unwrap();
    agent.store().check_invariants().unwrap();
}

#[tokio::test]
async fn schedule_then_cancel_restores_availability() {
    let store = seed_store(9);
    let (date, time) = {
        let s = &store.doctors["Garcia"].schedule;
        let (d, slots) = s.iter().next().unwrap();
        (d.clone(), slots[0].clone())
    };
    let before = store.doctors["Garcia"].schedule.clone();
    let id = format!("A{}", store.next_appointment_number);
    let llm = mock(vec![
        ScriptStep::tool_call(
            "schedule_appointment",
            json!({"patient_id": "P001", "doctor": "Dr. Garcia", "date": date, "time": time}),
        ),
        ScriptStep::tool_call("cancel_appointment", json!({"appointment_id": id})),
        ScriptStep::text("Done, that appointment is cancelled."),
    ])
    .await;
    let mut agent = agent(&llm, store, 5);
    let mut history = Vec::new();
    agent.respond(&mut history, "Book and then cancel it.").await.unwrap();

    assert_eq!(agent.store().doctors["Garcia"].schedule, before);
    assert_eq!(agent.store().appointments[&id].status, AppointmentStatus::Cancelled);
    check_history(&history).unwrap();
}

#[tokio::test]
async fn depth_bound_with_always_tool_model() {
    let llm = mock(vec![ScriptStep::tool_call("get_doctor_info", json!({"doctor": "Lee"}))]).await;
    let mut agent = agent(&llm, seed_store(42), 5);
    let mut history = Vec::new();
    let (text, summary) = agent.respond(&mut history, "Tell me about Dr. Lee").await.unwrap();

    assert!(summary.depth_exceeded);
    assert_eq!(summary.rounds, 5);
    assert_eq!(llm.requests(), 5);
    assert_eq!(summary.tools_executed.len(), 4);
    assert_eq!(text, DEFAULT_FALLBACK);
    assert_eq!(history.last().unwrap().content.as_deref(), Some(DEFAULT_FALLBACK));
    check_history(&history).unwrap();
}

#[tokio::test]
async fn unknown_tool_is_reported_to_the_model() {
    let llm = mock(vec![
        ScriptStep::tool_call("transfer_call", json!({"to": "billing"})),
        ScriptStep::text("Sorry, I can't transfer calls."),
    ])
    .await;
    let mut agent = agent(&llm, seed_store(42), 5);
    let mut history = Vec::new();
    let (text, summary) = agent.respond(&mut history, "Transfer me").await.unwrap();
    assert_eq!(tool_results(&history)[0]["error"], "unknown tool");
    assert_eq!(text, "Sorry, I can't transfer calls.");
    assert_eq!(summary.rounds, 2);
    check_history(&history).unwrap();
}

#[tokio::test]
async fn history_carries_across_turns() {
    let llm = mock(vec![ScriptStep::text("Sure thing.")]).await;
    let mut agent = agent(&llm, seed_store(42), 5);
    let mut history = Vec::new();
    agent.respond(&mut history, "first").await.unwrap();
    agent.respond(&mut history, "second").await.unwrap();
    assert_eq!(history.len(), 4);
    assert!(agent.respond(&mut history, "  ").await.is_err());
}

#[test]
fn seed_fixture_matches() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/hospital_seed_42.json");
    let fixture = std::fs::read_to_string(path).unwrap();
    assert_eq!(fixture.trim_end(), seed_store(42).to_json());
    assert_eq!(HospitalStore::from_json(&fixture).unwrap(), seed_store(42));
}

fn step_strategy() -> impl Strategy<Value = ScriptStep> {
    prop_oneof![
        Just(ScriptStep::text("All set.")),
        Just(ScriptStep::tool_call("get_doctor_info", json!({"doctor": "Patel"}))),
        Just(ScriptStep::tool_call("get_patient_info", json!({"patient_id": "P004"}))),
        Just(ScriptStep::tool_call("check_availability", json!({"doctor": "Lee"}))),
        Just(ScriptStep::tool_call("no_such_tool", json!({}))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loop_terminates_with_well_formed_history(
        steps in prop::collection::vec(step_strategy(), 1..8),
        max_depth in 1u32..6,
    ) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        let (summary, history) = rt.block_on(async {
            let llm = mock(steps).await;
            let mut agent = agent(&llm, seed_store(1), max_depth);
            let mut history = Vec::new();
            let (_, summary) = agent.respond(&mut history, "hello").await.unwrap();
            agent.store().check_invariants().unwrap();
            (summary, history)
        });
        prop_assert!(summary.rounds <= max_depth);
        prop_assert!(check_history(&history).is_ok(), "{:?}", check_history(&history));
        prop_assert_eq!(history.last().unwrap().role, Role::Assistant);
    }
}
