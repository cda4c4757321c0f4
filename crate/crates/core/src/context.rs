//! Natural-language scene descriptions and prompt assembly.

use crate::api::lane_offset;
use crate::network::{LaneId, LaneKind, LaneRole, Movement, RegulatoryKind, SignalPhase, TopologyKind};
use crate::world::{VehicleState, WorldState, EGO_ID};
use serde::{Deserialize, Serialize};
use std::fmt::Write;

const API_DOCS: &str = include_str!("../resources/api_docs.py");
const EXEMPLARS: &str = include_str!("../resources/exemplars.json");

/// Range within which vehicles and road features are described.
const DESCRIBE_RANGE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub instruction: String,
    pub context: String,
    pub program: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContextError {
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("exemplars: {0}")]
    Exemplars(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub api_docs: String,
    pub context: String,
    pub instruction: String,
    pub exemplars: Vec<Exemplar>,
}

impl PromptBundle {
    pub fn new(context: String, instruction: String, exemplars: Vec<Exemplar>) -> Result<Self, ContextError> {
        if instruction.trim().is_empty() {
            return Err(ContextError::EmptyInstruction);
        }
        Ok(Self { api_docs: render_api_docs().to_string(), context, instruction, exemplars })
    }
}

/// The primitive documentation shown to policy writers.
pub fn render_api_docs() -> &'static str {
    API_DOCS
}

/// The bundled few-shot exemplars.
pub fn default_exemplars() -> Vec<Exemplar> {
    serde_json::from_str(EXEMPLARS).expect("bundled exemplars parse")
}

pub fn load_exemplars(text: &str) -> Result<Vec<Exemplar>, ContextError> {
    serde_json::from_str(text).map_err(|e| ContextError::Exemplars(e.to_string()))
}

pub fn assemble_prompt(bundle: &PromptBundle) -> String {
    let mut out = String::new();
    out.push_str("# API\n");
    out.push_str(bundle.api_docs.trim_end());
    out.push_str("\n\n");
    if !bundle.exemplars.is_empty() {
        out.push_str("# EXAMPLES\n");
        for (i, e) in bundle.exemplars.iter().enumerate() {
            let _ = write!(
                out,
                "## Example {}\nInstruction: {}\nContext:\n{}\nProgram:\n```python\n{}\n```\n\n",
                i + 1,
                e.instruction.trim(),
                e.context.trim_end(),
                e.program.trim_end()
            );
        }
    }
    out.push_str("# CONTEXT\n");
    out.push_str(bundle.context.trim_end());
    out.push_str("\n\n# INSTRUCTION\n");
    out.push_str(bundle.instruction.trim());
    out.push('\n');
    out
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

fn lanes_phrase(n: usize) -> String {
    if n == 1 {
        "1 lane".to_string()
    } else {
        format!("{n} lanes")
    }
}

/// Narrative description of the ego's surroundings. Pure: equal states give
/// byte-identical text.
pub fn describe_state(world: &WorldState) -> String {
    let Some(ego) = world.ego() else {
        return String::new();
    };
    let net = &world.network;
    let lane = net.lane_ref(ego.current_lane);
    let mut lines = vec![format!("My current speed is {:.1} m/s.", ego.speed)];

    let parallel = net.parallel_lanes(ego.current_lane);
    let count = lanes_phrase(parallel.len());
    match (net.topology_kind, lane.role) {
        (TopologyKind::Highway, _) => lines.push(format!("I am driving on a highway with {count} in my direction.")),
        (_, LaneRole::Incoming { .. }) => lines.push(format!(
            "I am driving on a road with {count} in my direction, approaching a four-way intersection."
        )),
        (_, LaneRole::Outgoing { .. }) => lines.push(format!(
            "I am driving on a road with {count} in my direction, leaving a four-way intersection."
        )),
        _ => lines.push("I am crossing a four-way intersection.".to_string()),
    }
    if !matches!(lane.role, LaneRole::Connector { .. }) {
        let pos = parallel.iter().position(|l| *l == ego.current_lane).unwrap_or(0);
        lines.push(format!("I am in the {} lane from the right.", ordinal(pos + 1)));
        if parallel.first().is_some_and(|l| net.lane_ref(*l).kind == LaneKind::Emergency) {
            lines.push("The right-most lane is an emergency lane.".to_string());
        }
    }

    let sides: [(&str, Option<LaneId>); 3] =
        [("my lane", Some(ego.current_lane)), ("the lane to my left", lane.left_neighbor), ("the lane to my right", lane.right_neighbor)];
    for (name, l) in sides {
        let Some(l) = l else { continue };
        if let Some((v, d)) = front_vehicle(world, ego, l) {
            lines.push(format!("There is a car in front of me in {name},"));
            lines.push(format!("at a distance of {:.1} m, with a speed of {:.1} m/s.", d, v.speed));
        }
    }

    if let Some(reg) = net.regulatory_for(ego.current_lane) {
        let d = lane.length() - lane.centerline.project(ego.position).s;
        if (0.0..=DESCRIBE_RANGE).contains(&d) {
            match reg.kind {
                RegulatoryKind::StopSign if ego.stopped_at_sign => lines.push("I am stopped at a stop sign.".to_string()),
                RegulatoryKind::StopSign => lines.push(format!("There is a stop sign ahead, at a distance of {d:.1} m.")),
                RegulatoryKind::TrafficLight => {
                    let phase = match world.light_for(ego.current_lane) {
                        Some(SignalPhase::Green) => "green",
                        _ => "red",
                    };
                    lines.push(format!("There is a traffic light ahead, at a distance of {d:.1} m, currently {phase}."));
                }
            }
        }
    }

    if matches!(lane.role, LaneRole::Incoming { .. }) {
        let movement = ego.route.iter().find_map(|l| match net.lane_ref(*l).role {
            LaneRole::Connector { movement, .. } => Some(movement),
            _ => None,
        });
        let phrase = match movement.unwrap_or(Movement::Straight) {
            Movement::Left => "turns left",
            Movement::Right => "turns right",
            Movement::Straight => "goes straight",
        };
        lines.push(format!("My planned route {phrase} at the intersection."));
    }

    let mut out = lines.join("\n");
    out.push('\n');
    out
}

fn front_vehicle<'a>(world: &'a WorldState, ego: &VehicleState, lane: LaneId) -> Option<(&'a VehicleState, f64)> {
    world
        .vehicles
        .iter()
        .filter(|v| v.id != EGO_ID)
        .filter_map(|v| lane_offset(&world.network, lane, ego.position, &ego.route, v).map(|d| (v, d)))
        .filter(|(_, d)| *d > 0.0 && *d <= DESCRIBE_RANGE)
        .min_by(|a, b| a.1.total_cmp(&b.1))
}
