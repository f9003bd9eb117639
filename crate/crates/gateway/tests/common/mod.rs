#![allow(dead_code)]

use std::time::Duration;

use tokio::sync::mpsc;
use voxline_clients::llm::LlmConfig;
use voxline_clients::stt::SttSessionConfig;
use voxline_clients::tts::TtsConfig;
use voxline_gateway::{serve, Gateway, GatewayClient, GatewayConfig, PipelineConfig, SessionEvent, TurnReport};
use voxline_mocks::{MockSet, Scenario};

pub const WAIT: Duration = Duration::from_secs(10);
pub const LOUD: i16 = 12_000;

pub struct Rig {
    pub mocks: MockSet,
    pub gateway: Gateway,
    pub events: mpsc::UnboundedReceiver<SessionEvent>,
    /// Every event consumed so far, in arrival order.
    pub log: Vec<SessionEvent>,
}

pub fn pipeline_for(mocks: &MockSet) -> PipelineConfig {
    PipelineConfig::new(
        SttSessionConfig::new(mocks.stt.url()),
        LlmConfig::new(mocks.llm.url(), "test-key", "mock-model"),
        TtsConfig::new(mocks.tts.url()),
    )
}

pub async fn rig(scenario: Scenario, tweak: impl FnOnce(&mut PipelineConfig)) -> Rig {
    let mocks = MockSet::spawn(scenario).await.unwrap();
    let mut pipeline = pipeline_for(&mocks);
    tweak(&mut pipeline);
    let (tx, events) = mpsc::unbounded_channel();
    let mut config = GatewayConfig::new("127.0.0.1:0".parse().unwrap(), pipeline);
    config.observer = Some(tx);
    let gateway = serve(config).await.unwrap();
    Rig {
        mocks,
        gateway,
        events,
        log: Vec::new(),
    }
}

impl Rig {
    pub async fn client(&self) -> GatewayClient {
        GatewayClient::connect(&self.gateway.ws_url()).await.unwrap()
    }

    /// Next finished turn reported by any session.
    pub async fn next_report(&mut self) -> (u64, TurnReport, Vec<voxline_clients::llm::Message>) {
        loop {
            let ev = tokio::time::timeout(WAIT, self.events.recv())
                .await
                .expect("turn report")
                .unwrap();
            self.log.push(ev.clone());
            if let SessionEvent::TurnFinished {
                session,
                report,
                history,
            } = ev
            {
                return (session, *report, history);
            }
        }
    }

    pub async fn shutdown(self) {
        self.gateway.shutdown().await;
        self.mocks.shutdown().await;
    }
}
