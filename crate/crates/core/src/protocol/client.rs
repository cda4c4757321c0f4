//! Agent-side protocol client.

use super::{encode, AgentMessage, EnvMessage, RegistryEntry, ResultBody};
use crate::api::{ErrorInfo, Value};
use crate::context::Exemplar;
use crate::eval::EpisodeResult;
use crate::log::EndReason;
use crate::network::{LaneId, MapConfig};
use crate::world::VehicleId;
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("environment disconnected")]
    Disconnected,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("the episode is over")]
    EpisodeOver,
    #[error("{}: {}", .0.kind, .0.message)]
    Api(ErrorInfo),
    #[error("unexpected return value from `{0}`")]
    Unexpected(String),
}

pub trait AgentTransport {
    fn send(&mut self, msg: &AgentMessage) -> Result<(), ClientError>;
    fn recv(&mut self) -> Result<EnvMessage, ClientError>;
}

impl<T: AgentTransport + ?Sized> AgentTransport for Box<T> {
    fn send(&mut self, msg: &AgentMessage) -> Result<(), ClientError> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<EnvMessage, ClientError> {
        (**self).recv()
    }
}

/// Line-delimited JSON over a reader/writer pair (stdio, TCP).
pub struct LineTransport<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead, W: Write> LineTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }
}

impl<R: BufRead, W: Write> AgentTransport for LineTransport<R, W> {
    fn send(&mut self, msg: &AgentMessage) -> Result<(), ClientError> {
        let mut line = encode(msg);
        line.push('\n');
        self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush()).map_err(|_| ClientError::Disconnected)
    }

    fn recv(&mut self) -> Result<EnvMessage, ClientError> {
        loop {
            let mut line = String::new();
            match self.reader.read_line(&mut line) {
                Ok(0) | Err(_) => return Err(ClientError::Disconnected),
                Ok(_) if line.trim().is_empty() => continue,
                Ok(_) => return serde_json::from_str(&line).map_err(|e| ClientError::Protocol(e.to_string())),
            }
        }
    }
}

/// Outcome of one `yield_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stepped {
    pub context: String,
    pub state_digest: String,
    pub time: f64,
    pub done: bool,
}

/// Blocking client used by policies: performs the handshake, numbers calls,
/// and tracks the end of the episode.
pub struct PolicyClient<T> {
    transport: T,
    next_id: u64,
    pub scenario_id: String,
    pub registry: Vec<RegistryEntry>,
    pub map: Option<MapConfig>,
    pub api_docs: String,
    pub context: String,
    pub instruction: String,
    pub exemplars: Vec<Exemplar>,
    end: Option<(EndReason, Option<EpisodeResult>)>,
}

impl<T: AgentTransport> PolicyClient<T> {
    /// Reads `hello` and `prompt`.
    pub fn connect(mut transport: T) -> Result<Self, ClientError> {
        let (scenario_id, registry, map) = match transport.recv()? {
            EnvMessage::Hello { scenario_id, registry, map, .. } => (scenario_id, registry, map),
            other => return Err(ClientError::Protocol(format!("expected hello, got {other:?}"))),
        };
        let (api_docs, context, instruction, exemplars) = match transport.recv()? {
            EnvMessage::Prompt { api_docs, context, instruction, exemplars } => (api_docs, context, instruction, exemplars),
            other => return Err(ClientError::Protocol(format!("expected prompt, got {other:?}"))),
        };
        Ok(Self {
            transport,
            next_id: 1,
            scenario_id,
            registry,
            map,
            api_docs,
            context,
            instruction,
            exemplars,
            end: None,
        })
    }

    pub fn ended(&self) -> Option<&(EndReason, Option<EpisodeResult>)> {
        self.end.as_ref()
    }

    fn check_live(&self) -> Result<(), ClientError> {
        if self.end.is_some() {
            return Err(ClientError::EpisodeOver);
        }
        Ok(())
    }

    /// Sends a call with an explicit id.
    pub fn call_with_id(&mut self, id: u64, name: &str, args: Vec<Value>) -> Result<Result<Value, ErrorInfo>, ClientError> {
        self.check_live()?;
        self.next_id = self.next_id.max(id + 1);
        self.transport.send(&AgentMessage::Call { id, function: name.to_string(), args })?;
        match self.transport.recv()? {
            EnvMessage::Result { id: rid, body } if rid == id => Ok(match body {
                ResultBody::Value { value } => Ok(value),
                ResultBody::Error { error } => Err(error),
            }),
            EnvMessage::EpisodeEnd { reason, result } => {
                self.end = Some((reason, result));
                Err(ClientError::EpisodeOver)
            }
            other => Err(ClientError::Protocol(format!("expected result {id}, got {other:?}"))),
        }
    }

    pub fn call(&mut self, name: &str, args: Vec<Value>) -> Result<Result<Value, ErrorInfo>, ClientError> {
        let id = self.next_id;
        self.call_with_id(id, name, args)
    }

    /// Like [`PolicyClient::call`] with primitive errors lifted into
    /// [`ClientError::Api`].
    pub fn call_ok(&mut self, name: &str, args: Vec<Value>) -> Result<Value, ClientError> {
        self.call(name, args)?.map_err(ClientError::Api)
    }

    pub fn number(&mut self, name: &str, args: Vec<Value>) -> Result<f64, ClientError> {
        self.call_ok(name, args)?.as_f64().ok_or_else(|| ClientError::Unexpected(name.to_string()))
    }

    pub fn lane(&mut self, name: &str, args: Vec<Value>) -> Result<Option<LaneId>, ClientError> {
        match self.call_ok(name, args)? {
            Value::Null => Ok(None),
            v => v.as_lane().map(Some).ok_or_else(|| ClientError::Unexpected(name.to_string())),
        }
    }

    pub fn vehicle(&mut self, name: &str, args: Vec<Value>) -> Result<Option<VehicleId>, ClientError> {
        match self.call_ok(name, args)? {
            Value::Null => Ok(None),
            v => v.as_vehicle().map(Some).ok_or_else(|| ClientError::Unexpected(name.to_string())),
        }
    }

    /// Lets one decision period elapse under the current actuation state.
    pub fn yield_step(&mut self) -> Result<Stepped, ClientError> {
        self.check_live()?;
        self.transport.send(&AgentMessage::YieldStep)?;
        match self.transport.recv()? {
            EnvMessage::Stepped { new_context_digest, state_digest, time, done, .. } => {
                self.context = new_context_digest.clone();
                if done {
                    self.wait_end()?;
                }
                Ok(Stepped { context: new_context_digest, state_digest, time, done })
            }
            EnvMessage::EpisodeEnd { reason, result } => {
                self.end = Some((reason, result));
                Err(ClientError::EpisodeOver)
            }
            other => Err(ClientError::Protocol(format!("expected stepped, got {other:?}"))),
        }
    }

    /// Hands the rest of the episode to the autopilot.
    pub fn finish(&mut self) -> Result<(), ClientError> {
        self.check_live()?;
        self.transport.send(&AgentMessage::Finish)
    }

    /// Reports a policy failure; the environment engages the fallback.
    pub fn fail(&mut self, reason: &str) -> Result<(), ClientError> {
        self.check_live()?;
        self.transport.send(&AgentMessage::Error { reason: reason.to_string() })
    }

    pub fn send_raw(&mut self, msg: &AgentMessage) -> Result<(), ClientError> {
        self.transport.send(msg)
    }

    pub fn recv_raw(&mut self) -> Result<EnvMessage, ClientError> {
        self.transport.recv()
    }

    /// Blocks until `episode_end`.
    pub fn wait_end(&mut self) -> Result<(EndReason, Option<EpisodeResult>), ClientError> {
        if let Some(end) = &self.end {
            return Ok(end.clone());
        }
        loop {
            if let EnvMessage::EpisodeEnd { reason, result } = self.transport.recv()? {
                self.end = Some((reason, result.clone()));
                return Ok((reason, result));
            }
        }
    }
}
