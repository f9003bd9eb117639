//! The browser wire protocol.
//!
//! Client to server: binary frames of 16 kHz mono PCM int16 LE, 20 ms each
//! (640 bytes). Server to client: binary frames of 24 kHz mono PCM int16 LE
//! of variable size, and JSON text frames carrying a [`ControlMessage`].

use serde::{Deserialize, Serialize};
use voxline_core::audio::CLIENT_CHUNK_BYTES;

use crate::pipeline::TurnTimeline;

/// Exact size of a client audio frame.
pub const CLIENT_FRAME_BYTES: usize = CLIENT_CHUNK_BYTES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMessage {
    Transcript {
        text: String,
        is_final: bool,
    },
    /// Precedes the first audio frame of a turn.
    AgentSpeaking,
    /// Follows the last audio frame of a turn, including interrupted and
    /// failed turns.
    AgentDone {
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        interrupted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeline: Option<TurnTimeline>,
    },
    /// Diagnostic for a rejected client frame or a failed turn. The
    /// connection stays open.
    Error {
        message: String,
    },
}

impl ControlMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("control messages serialize")
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Transcript { .. } => "transcript",
            Self::AgentSpeaking => "agent_speaking",
            Self::AgentDone { .. } => "agent_done",
            Self::Error { .. } => "error",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        let t = ControlMessage::Transcript {
            text: "book an".into(),
            is_final: false,
        };
        assert_eq!(
            t.to_json(),
            r#"{"type":"transcript","text":"book an","is_final":false}"#
        );
        assert_eq!(ControlMessage::AgentSpeaking.to_json(), r#"{"type":"agent_speaking"}"#);
        let done = ControlMessage::AgentDone {
            interrupted: false,
            timeline: None,
        };
        assert_eq!(done.to_json(), r#"{"type":"agent_done"}"#);
        assert_eq!(ControlMessage::parse(r#"{"type":"agent_done"}"#).unwrap(), done);
        assert!(ControlMessage::parse(r#"{"type":"agent_talking"}"#).is_err());
    }

    use proptest::prelude::*;

    fn message() -> impl Strategy<Value = ControlMessage> {
        prop_oneof![
            (".{0,40}", any::<bool>()).prop_map(|(text, is_final)| ControlMessage::Transcript { text, is_final }),
            Just(ControlMessage::AgentSpeaking),
            any::<bool>().prop_map(|interrupted| ControlMessage::AgentDone {
                interrupted,
                timeline: None
            }),
            ".{0,40}".prop_map(|message| ControlMessage::Error { message }),
        ]
    }

    proptest! {
        #[test]
        fn every_text_payload_parses_back(m in message()) {
            let json = m.to_json();
            let v: serde_json::Value = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(v["type"].as_str(), Some(m.kind()));
            prop_assert_eq!(ControlMessage::parse(&json).unwrap(), m);
        }
    }
}
