//! Mock OpenAI-compatible chat completions with SSE streaming.
//!
//! The turn is the number of user messages in the request minus one; the
//! round within the turn is the number of assistant messages after the last
//! user message. Both come from the request itself, so the mock keeps no
//! conversation state.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tokio::time::{sleep_until, Duration, Instant};
use tokio_util::sync::CancellationToken;

use crate::scenario::{Scenario, ScriptStep};
use crate::server::{spawn, MockServer};

#[derive(Debug, Clone, Default)]
pub struct MockLlmOptions {
    /// When set, requests must carry `Authorization: Bearer <key>`.
    pub expected_api_key: Option<String>,
}

struct LlmState {
    scenario: Arc<Scenario>,
    options: MockLlmOptions,
    cold: AtomicBool,
    requests: AtomicUsize,
}

pub struct MockLlm {
    server: MockServer,
    state: Arc<LlmState>,
}

impl MockLlm {
    pub fn server(&self) -> &MockServer {
        &self.server
    }

    /// Base URL for an OpenAI-compatible client.
    pub fn url(&self) -> String {
        self.server.http_url()
    }

    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    pub async fn shutdown(self) {
        self.server.shutdown().await
    }

    pub async fn wait(self) {
        self.server.wait().await
    }
}

pub async fn run_mock_llm(
    scenario: Arc<Scenario>,
    bind: SocketAddr,
    options: MockLlmOptions,
) -> std::io::Result<MockLlm> {
    let state = Arc::new(LlmState {
        cold: AtomicBool::new(scenario.llm_cold_start_ms > 0.0),
        scenario,
        options,
        requests: AtomicUsize::new(0),
    });
    let router = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(state.clone());
    let server = spawn(router, bind, CancellationToken::new()).await?;
    Ok(MockLlm { server, state })
}

/// (turn, round) addressed by a request's message list.
pub fn script_position(messages: &[Value]) -> (usize, usize) {
    let role = |m: &Value| m.get("role").and_then(Value::as_str).unwrap_or_default().to_string();
    let users = messages.iter().filter(|m| role(m) == "user").count();
    let last_user = messages.iter().rposition(|m| role(m) == "user");
    let round = match last_user {
        Some(i) => messages[i + 1..].iter().filter(|m| role(m) == "assistant").count(),
        None => 0,
    };
    (users.saturating_sub(1), round)
}

fn chunk(model: &str, delta: Value, finish: Option<&str>) -> String {
    let payload = json!({
        "id": "chatcmpl-mock",
        "object": "chat.completion.chunk",
        "created": 0,
        "model": model,
        "choices": [{ "index": 0, "delta": delta, "finish_reason": finish }],
    });
    format!("data: {payload}\n\n")
}

/// The content chunks of one step and its finish reason.
fn step_chunks(step: &ScriptStep, model: &str, round: usize) -> (Vec<String>, &'static str) {
    match step {
        ScriptStep::Text { tokens } => {
            let chunks = tokens
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let delta = if k == 0 {
                        json!({ "role": "assistant", "content": t })
                    } else {
                        json!({ "content": t })
                    };
                    chunk(model, delta, None)
                })
                .collect();
            (chunks, "stop")
        }
        ScriptStep::ToolCalls { calls } => {
            let mut chunks = Vec::new();
            for (i, call) in calls.iter().enumerate() {
                let id = call.id.clone().unwrap_or_else(|| format!("call_{round}_{i}"));
                chunks.push(chunk(
                    model,
                    json!({ "role": "assistant", "tool_calls": [{
                        "index": i, "id": id, "type": "function",
                        "function": { "name": call.name, "arguments": "" },
                    }]}),
                    None,
                ));
                let args = call.arguments.to_string();
                let mut mid = args.len() / 2;
                while !args.is_char_boundary(mid) {
                    mid += 1;
                }
                for part in [&args[..mid], &args[mid..]] {
                    chunks.push(chunk(
                        model,
                        json!({ "tool_calls": [{ "index": i, "function": { "arguments": part } }] }),
                        None,
                    ));
                }
            }
            (chunks, "tool_calls")
        }
    }
}

async fn completions(State(state): State<Arc<LlmState>>, headers: HeaderMap, body: Bytes) -> Response {
    let start = Instant::now();
    state.requests.fetch_add(1, Ordering::SeqCst);
    if let Some(key) = &state.options.expected_api_key {
        let ok = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == format!("Bearer {key}"));
        if !ok {
            return (StatusCode::UNAUTHORIZED, r#"{"error":{"message":"invalid api key"}}"#).into_response();
        }
    }
    let req: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")).into_response(),
    };
    if req.get("stream").and_then(Value::as_bool) != Some(true) {
        return (StatusCode::BAD_REQUEST, "only stream=true is supported").into_response();
    }
    let Some(messages) = req.get("messages").and_then(Value::as_array) else {
        return (StatusCode::BAD_REQUEST, "missing messages").into_response();
    };
    let model = req.get("model").and_then(Value::as_str).unwrap_or("mock").to_string();
    let (turn_index, round) = script_position(messages);
    let turn = state.scenario.turn(turn_index).clone();
    let (chunks, finish) = step_chunks(turn.step(round), &model, round);

    let mut ttft = turn.llm_ttft_ms;
    if state.cold.swap(false, Ordering::SeqCst) {
        ttft += state.scenario.llm_cold_start_ms;
    }
    let (tx, rx) = mpsc::channel::<Bytes>(64);
    tokio::spawn(async move {
        if turn.inject_empty_choices {
            let empty = format!("data: {}\n\n", json!({ "id": "chatcmpl-mock", "choices": [] }));
            if tx.send(empty.into()).await.is_err() {
                return;
            }
        }
        let last = chunks.len().saturating_sub(1);
        for (k, c) in chunks.into_iter().enumerate() {
            // absolute deadlines so pacing error does not accumulate
            let due = ttft + k as f64 * turn.llm_inter_token_ms;
            sleep_until(start + Duration::from_secs_f64(due / 1000.0)).await;
            let mut out = c;
            if k == last {
                out.push_str(&chunk(&model, json!({}), Some(finish)));
                out.push_str("data: [DONE]\n\n");
            }
            if tx.send(out.into()).await.is_err() {
                return;
            }
        }
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|b| (Ok::<_, Infallible>(b), rx))
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "text/event-stream")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(stream))
        .expect("static response parts")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_from_messages() {
        let msgs: Vec<Value> = serde_json::from_str(
            r#"[{"role":"system"},{"role":"user"},{"role":"assistant"},{"role":"user"},
                {"role":"assistant"},{"role":"tool"},{"role":"assistant"},{"role":"tool"}]"#,
        )
        .unwrap();
        assert_eq!(script_position(&msgs), (1, 2));
        assert_eq!(script_position(&msgs[..2]), (0, 0));
    }

    #[test]
    fn tool_call_chunks_split_arguments() {
        let step = ScriptStep::tool_call("check_availability", json!({"doctor": "Smith", "date": "2025-03-10"}));
        let (chunks, finish) = step_chunks(&step, "m", 0);
        assert_eq!(finish, "tool_calls");
        assert_eq!(chunks.len(), 3);
        let args: String = chunks[1..]
            .iter()
            .map(|c| {
                let v: Value = serde_json::from_str(c.trim_start_matches("data: ").trim()).unwrap();
                v["choices"][0]["delta"]["tool_calls"][0]["function"]["arguments"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(serde_json::from_str::<Value>(&args).unwrap()["doctor"], "Smith");
    }
}
