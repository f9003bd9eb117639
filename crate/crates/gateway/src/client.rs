//! A minimal programmatic client for the `/ws` protocol, used by the
//! benchmark harness and the tests in place of a browser.

use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async_with_config, MaybeTlsStream, WebSocketStream};
use voxline_core::audio::CLIENT_CHUNK_MS;
use voxline_core::AudioFrame;

use crate::protocol::ControlMessage;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("server sent a text payload that is not a control message: {0}")]
    BadControl(String),
    #[error("server sent an odd-length binary payload ({0} bytes)")]
    OddBinary(usize),
    #[error("timed out waiting for the server")]
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerPayload {
    Control(ControlMessage),
    /// 24 kHz int16 LE PCM.
    Audio(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub payload: ServerPayload,
    pub at: Instant,
}

impl Received {
    pub fn control(&self) -> Option<&ControlMessage> {
        match &self.payload {
            ServerPayload::Control(c) => Some(c),
            ServerPayload::Audio(_) => None,
        }
    }

    pub fn is_audio(&self) -> bool {
        matches!(self.payload, ServerPayload::Audio(_))
    }
}

pub struct GatewayClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl GatewayClient {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = connect_async_with_config(url, None, true).await?;
        Ok(Self { ws })
    }

    pub async fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), ClientError> {
        Ok(self.ws.send(Message::Binary(bytes.into())).await?)
    }

    pub async fn send_frame(&mut self, frame: &AudioFrame) -> Result<(), ClientError> {
        self.send_raw(frame.to_le_bytes()).await
    }

    /// Send `ms` of mic audio as 20 ms frames of a constant-amplitude square
    /// wave (amplitude 0 gives silence). With `paced`, frames leave at real
    /// time; otherwise back to back.
    pub async fn send_tone(&mut self, ms: u32, amplitude: i16, paced: bool) -> Result<(), ClientError> {
        let frames = ms.div_ceil(CLIENT_CHUNK_MS);
        let start = tokio::time::Instant::now();
        for k in 0..frames {
            if paced {
                tokio::time::sleep_until(start + Duration::from_millis(u64::from(k * CLIENT_CHUNK_MS))).await;
            }
            self.send_frame(&mic_frame(amplitude, f64::from(k * CLIENT_CHUNK_MS)))
                .await?;
        }
        Ok(())
    }

    /// Next server payload; `None` once the server closed the connection.
    pub async fn recv(&mut self, timeout: Duration) -> Result<Option<Received>, ClientError> {
        loop {
            let msg = match tokio::time::timeout(timeout, self.ws.next()).await {
                Err(_) => return Err(ClientError::Timeout),
                Ok(None) => return Ok(None),
                Ok(Some(m)) => m?,
            };
            let at = Instant::now();
            let payload = match msg {
                Message::Text(t) => ServerPayload::Control(
                    ControlMessage::parse(t.as_str()).map_err(|_| ClientError::BadControl(t.to_string()))?,
                ),
                Message::Binary(b) if b.len() % 2 != 0 => return Err(ClientError::OddBinary(b.len())),
                Message::Binary(b) => ServerPayload::Audio(b.to_vec()),
                Message::Close(_) => return Ok(None),
                _ => continue,
            };
            return Ok(Some(Received { payload, at }));
        }
    }

    /// Receive until `stop` matches a payload (inclusive).
    pub async fn recv_until(
        &mut self,
        timeout: Duration,
        mut stop: impl FnMut(&Received) -> bool,
    ) -> Result<Vec<Received>, ClientError> {
        let mut out = Vec::new();
        while let Some(r) = self.recv(timeout).await? {
            let done = stop(&r);
            out.push(r);
            if done {
                return Ok(out);
            }
        }
        Ok(out)
    }

    /// Receive through the next `agent_done`.
    pub async fn recv_turn(&mut self, timeout: Duration) -> Result<Vec<Received>, ClientError> {
        self.recv_until(timeout, |r| {
            matches!(r.control(), Some(ControlMessage::AgentDone { .. }))
        })
        .await
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// One 20 ms, 16 kHz mic frame of a square wave at `amplitude`.
pub fn mic_frame(amplitude: i16, timestamp_ms: f64) -> AudioFrame {
    let samples = (0..320)
        .map(|i| if (i / 16) % 2 == 0 { amplitude } else { -amplitude })
        .collect();
    AudioFrame::new(samples, voxline_core::audio::MIC_SAMPLE_RATE_HZ, timestamp_ms)
}
