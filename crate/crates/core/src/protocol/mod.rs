//! Agent attachment: message schema, environment-side channels, and the
//! agent-side client.

pub mod channel;
pub mod client;
pub mod replay;
pub mod server;

pub use channel::{in_process, AgentChannel, ChannelError, ExternChannel, LineChannel, WsChannel};
pub use client::{AgentTransport, ClientError, LineTransport, PolicyClient, Stepped};

use crate::api::{ApiGroup, ErrorInfo, FnSpec, Value, REGISTRY};
use crate::context::Exemplar;
use crate::eval::EpisodeResult;
use crate::log::{EndReason, StepRecord};
use crate::network::MapConfig;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Default wall-clock wait for the next agent message.
pub const DEFAULT_PATIENCE: std::time::Duration = std::time::Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub group: ApiGroup,
    pub params: Vec<ParamEntry>,
    pub returns: String,
}

impl From<&FnSpec> for RegistryEntry {
    fn from(s: &FnSpec) -> Self {
        Self {
            name: s.name.to_string(),
            group: s.group,
            params: s
                .params
                .iter()
                .map(|p| ParamEntry { name: p.name.to_string(), kind: p.kind.to_string(), default: p.default })
                .collect(),
            returns: s.returns.to_string(),
        }
    }
}

pub fn registry_entries() -> Vec<RegistryEntry> {
    REGISTRY.iter().map(RegistryEntry::from).collect()
}

/// Call outcome as carried by a `result` message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResultBody {
    Value { value: Value },
    Error { error: ErrorInfo },
}

/// Environment to agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EnvMessage {
    Hello {
        protocol_version: u32,
        scenario_id: String,
        registry: Vec<RegistryEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        map: Option<MapConfig>,
    },
    Prompt {
        api_docs: String,
        context: String,
        instruction: String,
        exemplars: Vec<Exemplar>,
    },
    Result {
        id: u64,
        #[serde(flatten)]
        body: ResultBody,
    },
    Stepped {
        /// Refreshed scene description.
        new_context_digest: String,
        state_digest: String,
        time: f64,
        done: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snapshot: Option<StepRecord>,
    },
    EpisodeEnd {
        reason: EndReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<EpisodeResult>,
    },
}

/// Agent to environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentMessage {
    Call {
        id: u64,
        #[serde(rename = "fn")]
        function: String,
        #[serde(default)]
        args: Vec<Value>,
    },
    YieldStep,
    Finish,
    /// The agent failed; the environment switches to autopilot with this
    /// reason.
    Error { reason: String },
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LaneId;

    #[test]
    fn call_wire_shape() {
        let m = AgentMessage::Call { id: 3, function: "set_target_lane".into(), args: vec![Value::Lane(LaneId(2))] };
        let text = encode(&m);
        assert_eq!(text, r#"{"type":"call","id":3,"fn":"set_target_lane","args":[{"lane":2}]}"#);
        assert_eq!(serde_json::from_str::<AgentMessage>(&text).unwrap(), m);
        let y: AgentMessage = serde_json::from_str(r#"{"type":"yield_step"}"#).unwrap();
        assert_eq!(y, AgentMessage::YieldStep);
        let c: AgentMessage = serde_json::from_str(r#"{"type":"call","id":1,"fn":"get_ego_vehicle"}"#).unwrap();
        assert!(matches!(c, AgentMessage::Call { args, .. } if args.is_empty()));
    }

    #[test]
    fn result_wire_shape() {
        let ok = EnvMessage::Result { id: 1, body: ResultBody::Value { value: Value::Number(25.0) } };
        assert_eq!(encode(&ok), r#"{"type":"result","id":1,"value":25.0}"#);
        let err = EnvMessage::Result {
            id: 2,
            body: ResultBody::Error { error: ErrorInfo { kind: "unknown-fn".into(), message: "x".into() } },
        };
        let text = encode(&err);
        assert_eq!(serde_json::from_str::<EnvMessage>(&text).unwrap(), err);
        let null = EnvMessage::Result { id: 4, body: ResultBody::Value { value: Value::Null } };
        assert_eq!(serde_json::from_str::<EnvMessage>(&encode(&null)).unwrap(), null);
    }

    #[test]
    fn registry_round_trips() {
        let entries = registry_entries();
        assert_eq!(entries.len(), 23);
        let text = serde_json::to_string(&entries).unwrap();
        assert_eq!(serde_json::from_str::<Vec<RegistryEntry>>(&text).unwrap(), entries);
    }
}
