//! Trajectory logs: one JSON record per simulation step.

use crate::api::{ErrorInfo, Value};
use crate::network::LaneId;
use crate::world::{VehicleId, WorldState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Value(Value),
    Error(ErrorInfo),
}

/// What produced the ego command for the next decision period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Yield,
    Finished,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Completed,
    Collision,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    EpisodeStart {
        scenario_id: String,
        seed: u64,
    },
    Collision {
        ids: [VehicleId; 2],
    },
    Say {
        text: String,
    },
    Call {
        id: u64,
        #[serde(rename = "fn")]
        function: String,
        args: Vec<Value>,
        result: CallOutcome,
    },
    /// The ego begins lateral motion toward `lane`.
    LaneChange {
        lane: LaneId,
    },
    Decision {
        source: DecisionSource,
    },
    Finish,
    Completion {
        verdict: bool,
        t_complete: Option<f64>,
    },
    FallbackEngaged {
        reason: String,
    },
    EpisodeEnd {
        reason: EndReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub lane: LaneId,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub time: f64,
    pub vehicles: Vec<VehicleRecord>,
    #[serde(default)]
    pub events: Vec<Event>,
}

#[derive(Serialize)]
struct StateView<'a> {
    step: u64,
    time: f64,
    vehicles: &'a [VehicleRecord],
}

impl StepRecord {
    pub fn from_world(world: &WorldState) -> Self {
        let vehicles = world
            .vehicles
            .iter()
            .map(|v| VehicleRecord {
                id: v.id,
                x: v.position.x,
                y: v.position.y,
                heading: v.heading,
                speed: v.speed,
                lane: v.current_lane,
                accel: v.accel,
            })
            .collect();
        Self { step: world.step_count(), time: world.time(), vehicles, events: Vec::new() }
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleRecord> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn ego(&self) -> Option<&VehicleRecord> {
        self.vehicle(crate::world::EGO_ID)
    }

    /// Hash of the physical state only; events are excluded so the digest
    /// is fixed at the moment the step completes.
    pub fn state_digest(&self) -> String {
        let view = StateView { step: self.step, time: self.time, vehicles: &self.vehicles };
        let bytes = serde_json::to_vec(&view).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn collided(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::Collision { .. }))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("log is empty")]
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, LogError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(LogError::Empty);
        }
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self, LogError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write(&self, path: &Path) -> Result<(), LogError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// SHA-256 of the serialized log.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn events(&self) -> impl Iterator<Item = (&StepRecord, &Event)> {
        self.records.iter().flat_map(|r| r.events.iter().map(move |e| (r, e)))
    }

    pub fn scenario_id(&self) -> Option<&str> {
        self.events().find_map(|(_, e)| match e {
            Event::EpisodeStart { scenario_id, .. } => Some(scenario_id.as_str()),
            _ => None,
        })
    }
}
