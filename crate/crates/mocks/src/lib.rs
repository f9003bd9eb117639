//! Wire-compatible stand-ins for the STT, LLM and TTS services, driven by a
//! [`Scenario`]. Each mock can run embedded in a test or as its own process.

pub mod llm;
pub mod scenario;
mod server;
pub mod stt;
pub mod tts;

use std::net::SocketAddr;
use std::sync::Arc;

pub use llm::{run_mock_llm, MockLlm, MockLlmOptions};
pub use scenario::{Scenario, ScenarioError, ScenarioTurn, ScriptStep, ScriptedCall};
pub use server::MockServer;
pub use stt::{run_mock_stt, MockStt, MockSttOptions, SttStats};
pub use tts::{run_mock_tts, MockTts, MockTtsOptions};

/// All three mocks on ephemeral localhost ports.
pub struct MockSet {
    pub stt: MockStt,
    pub llm: MockLlm,
    pub tts: MockTts,
}

impl MockSet {
    pub async fn spawn(scenario: Scenario) -> std::io::Result<Self> {
        Self::spawn_at(scenario, "127.0.0.1:0".parse().expect("valid address")).await
    }

    /// Binds every mock to `bind`'s address; a non-zero port is used by STT
    /// and the next two ports by LLM and TTS.
    pub async fn spawn_at(scenario: Scenario, bind: SocketAddr) -> std::io::Result<Self> {
        let scenario = Arc::new(scenario);
        let at = |offset: u16| {
            let mut a = bind;
            if a.port() != 0 {
                a.set_port(a.port() + offset);
            }
            a
        };
        Ok(Self {
            stt: run_mock_stt(scenario.clone(), at(0), MockSttOptions::default()).await?,
            llm: run_mock_llm(scenario.clone(), at(1), MockLlmOptions::default()).await?,
            tts: run_mock_tts(scenario, at(2), MockTtsOptions::default()).await?,
        })
    }

    pub async fn shutdown(self) {
        self.stt.shutdown().await;
        self.llm.shutdown().await;
        self.tts.shutdown().await;
    }
}
