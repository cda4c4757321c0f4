//! Vehicle state, the world snapshot, and the fixed-step transition model.

use crate::geometry::{wrap_angle, OrientedBox, Position};
use crate::network::{LaneId, RegulatoryKind, RoadNetwork, SignalPhase};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

pub type VehicleId = u32;

pub const EGO_ID: VehicleId = 0;
pub const WHEELBASE: f64 = 2.5;
pub const DEFAULT_LENGTH: f64 = 5.0;
pub const DEFAULT_WIDTH: f64 = 2.0;
pub const MAX_STEERING: f64 = 0.6;
/// Below this speed a vehicle counts as standing still.
pub const STANDSTILL_SPEED: f64 = 0.2;
/// A vehicle standing within this distance of a stop line (center to line)
/// has completed its stop.
pub const STOP_LINE_REACH: f64 = 8.0;

fn default_length() -> f64 {
    DEFAULT_LENGTH
}

fn default_width() -> f64 {
    DEFAULT_WIDTH
}

fn default_headway() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub position: Position,
    pub heading: f64,
    pub speed: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    pub current_lane: LaneId,
    pub target_speed: f64,
    #[serde(default = "default_headway")]
    pub desired_time_headway: f64,
    pub target_lane: LaneId,
    #[serde(default)]
    pub route: Vec<LaneId>,
    #[serde(default)]
    pub stopped_at_sign: bool,
    /// Set once a stop at the current lane's sign has been released.
    #[serde(default)]
    pub stop_released: bool,
    /// Holding at an intersection for conflicting traffic.
    #[serde(default)]
    pub yielding: bool,
    /// Acceleration applied during the last step.
    #[serde(default)]
    pub accel: f64,
    /// Adjacent lane the vehicle is signaling to move into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<LaneId>,
}

impl VehicleState {
    pub fn new(id: VehicleId, position: Position, heading: f64, speed: f64, lane: LaneId) -> Self {
        Self {
            id,
            position,
            heading,
            speed,
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
            current_lane: lane,
            target_speed: speed,
            desired_time_headway: default_headway(),
            target_lane: lane,
            route: vec![lane],
            stopped_at_sign: false,
            stop_released: false,
            yielding: false,
            accel: 0.0,
            signal: None,
        }
    }

    pub fn footprint(&self) -> OrientedBox {
        OrientedBox { center: self.position, heading: self.heading, length: self.length, width: self.width }
    }

    pub fn velocity(&self) -> Position {
        Position::from_heading(self.heading) * self.speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub acceleration: f64,
    pub steering: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub decision_period: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.1, decision_period: 1.0, seed: 0 }
    }
}

impl SimConfig {
    /// Physics steps per decision period.
    pub fn steps_per_decision(&self) -> Result<u64, SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::InvalidConfig("dt must be positive".into()));
        }
        if self.decision_period < self.dt {
            return Err(SimError::InvalidConfig("decision_period must be at least dt".into()));
        }
        let ratio = self.decision_period / self.dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(SimError::InvalidConfig("decision_period must be an integer multiple of dt".into()));
        }
        Ok(k as u64)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("no control supplied for vehicle {0}")]
    MissingControl(VehicleId),
    #[error("dt must be positive, got {0}")]
    InvalidStep(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
}

/// Serializable part of a world: everything except the road network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    #[serde(default)]
    pub seed: u64,
}

/// Full simulation state. Cheap to clone: the network is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    base_time: f64,
    steps: u64,
    step_dt: f64,
    pub vehicles: Vec<VehicleState>,
    /// One entry per regulatory element of the network; `None` for signs.
    pub signal_phases: Vec<Option<SignalPhase>>,
    /// Seed of the per-episode random stream.
    pub seed: u64,
    pub network: Arc<RoadNetwork>,
}

impl WorldState {
    pub fn new(network: Arc<RoadNetwork>, vehicles: Vec<VehicleState>, seed: u64) -> Self {
        let mut w = Self {
            base_time: 0.0,
            steps: 0,
            step_dt: 0.0,
            vehicles,
            signal_phases: Vec::new(),
            seed,
            network,
        };
        w.refresh_signals();
        w
    }

    /// Validates a snapshot against `network`, naming the offending field.
    pub fn from_snapshot(snapshot: &WorldSnapshot, network: Arc<RoadNetwork>) -> Result<Self, SimError> {
        let violation = |path: String, reason: &str| SimError::SchemaViolation { path, reason: reason.to_string() };
        if !snapshot.time.is_finite() || snapshot.time < 0.0 {
            return Err(violation("initial.time".into(), "must be finite and non-negative"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, v) in snapshot.vehicles.iter().enumerate() {
            let at = |field: &str| format!("initial.vehicles[{i}].{field}");
            if !seen.insert(v.id) {
                return Err(violation(at("id"), "duplicate vehicle id"));
            }
            if !v.position.is_finite() {
                return Err(violation(at("position"), "must be finite"));
            }
            if !v.heading.is_finite() {
                return Err(violation(at("heading"), "must be finite"));
            }
            if !(v.speed >= 0.0) || !v.speed.is_finite() {
                return Err(violation(at("speed"), "must be finite and non-negative"));
            }
            if !(v.length > 0.0 && v.width > 0.0) {
                return Err(violation(at("length"), "footprint must be positive"));
            }
            if !network.contains(v.current_lane) {
                return Err(violation(at("current_lane"), "unknown lane id"));
            }
            if !network.contains(v.target_lane) {
                return Err(violation(at("target_lane"), "unknown lane id"));
            }
            if let Some(j) = v.route.iter().position(|l| !network.contains(*l)) {
                return Err(violation(format!("initial.vehicles[{i}].route[{j}]"), "unknown lane id"));
            }
            if !(v.desired_time_headway > 0.0) || !(v.target_speed >= 0.0) {
                return Err(violation(at("target_speed"), "IDM parameters must be positive"));
            }
        }
        if !seen.contains(&EGO_ID) {
            return Err(violation("initial.vehicles".into(), "ego vehicle (id 0) missing"));
        }
        let mut w = Self::new(network, snapshot.vehicles.clone(), snapshot.seed);
        w.base_time = snapshot.time;
        w.refresh_signals();
        Ok(w)
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot { time: self.time(), vehicles: self.vehicles.clone(), seed: self.seed }
    }

    /// Simulated time. Accumulated as an integer step count so `N` steps of
    /// `dt` give exactly `N * dt`.
    pub fn time(&self) -> f64 {
        self.base_time + self.steps as f64 * self.step_dt
    }

    /// Steps taken since the last change of `dt` (or since the start).
    pub fn step_count(&self) -> u64 {
        self.steps
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn vehicle_mut(&mut self, id: VehicleId) -> Option<&mut VehicleState> {
        self.vehicles.iter_mut().find(|v| v.id == id)
    }

    pub fn ego(&self) -> Option<&VehicleState> {
        self.vehicle(EGO_ID)
    }

    fn refresh_signals(&mut self) {
        let t = self.time();
        self.signal_phases = self.network.regulatory.iter().map(|r| self.network.signal_phase(r, t)).collect();
    }

    /// Phase of the light controlling `lane`, if any.
    pub fn light_for(&self, lane: LaneId) -> Option<SignalPhase> {
        self.network
            .regulatory
            .iter()
            .position(|r| r.controlled_lane == lane && r.kind == RegulatoryKind::TrafficLight)
            .and_then(|i| self.signal_phases.get(i).copied().flatten())
    }
}

/// Advances every vehicle by one kinematic-bicycle step.
pub fn step(state: &WorldState, controls: &BTreeMap<VehicleId, Control>, dt: f64) -> Result<WorldState, SimError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidStep(dt));
    }
    if let Some(v) = state.vehicles.iter().find(|v| !controls.contains_key(&v.id)) {
        return Err(SimError::MissingControl(v.id));
    }
    let mut next = state.clone();
    if next.step_dt != dt {
        next.base_time = state.time();
        next.steps = 0;
        next.step_dt = dt;
    }
    next.steps += 1;
    let network = Arc::clone(&state.network);
    for v in &mut next.vehicles {
        let control = controls[&v.id];
        integrate(v, control, dt);
        let previous = v.current_lane;
        v.current_lane = nearest_lane(&network, v);
        if v.current_lane != previous {
            if v.target_lane == previous {
                v.target_lane = v.current_lane;
            }
            v.stop_released = false;
            v.stopped_at_sign = false;
        }
        update_stop_flag(&network, v);
    }
    next.refresh_signals();
    Ok(next)
}

fn integrate(v: &mut VehicleState, control: Control, dt: f64) {
    let steering = control.steering.clamp(-MAX_STEERING, MAX_STEERING);
    let accel = control.acceleration;
    // exact constant-acceleration travel, stopping at zero speed
    let (travel, new_speed) = if accel < 0.0 && v.speed + accel * dt < 0.0 {
        let t_stop = v.speed / -accel;
        (v.speed * t_stop * 0.5, 0.0)
    } else {
        (v.speed * dt + 0.5 * accel * dt * dt, (v.speed + accel * dt).max(0.0))
    };
    let rear_to_center = WHEELBASE * 0.5;
    let slip = (0.5 * steering.tan()).atan();
    let yaw = travel / rear_to_center * slip.sin();
    let mid_heading = v.heading + 0.5 * yaw + slip;
    v.position = v.position + Position::from_heading(mid_heading) * travel;
    v.heading = wrap_angle(v.heading + yaw);
    v.speed = new_speed;
    v.accel = accel;
}

/// Nearest lane among the current lane, its neighbors, and its successors.
/// Ties prefer route lanes, then the current lane.
pub fn nearest_lane(network: &RoadNetwork, v: &VehicleState) -> LaneId {
    let Ok(current) = network.lane(v.current_lane) else {
        return v.current_lane;
    };
    let mut candidates: Vec<LaneId> = vec![current.id];
    candidates.extend(current.left_neighbor);
    candidates.extend(current.right_neighbor);
    let route_successors: Vec<LaneId> =
        current.successors.iter().copied().filter(|s| v.route.contains(s)).collect();
    if route_successors.is_empty() {
        candidates.extend(current.successors.iter().copied());
    } else {
        candidates.extend(route_successors);
    }
    let rank = |id: LaneId| {
        let d = network.lane_ref(id).centerline.project(v.position).distance;
        // quantize so float noise cannot break ties
        let dq = (d * 1e6).round() as i64;
        (dq, !v.route.contains(&id), id != current.id, id)
    };
    candidates.into_iter().min_by_key(|id| rank(*id)).expect("non-empty")
}

fn update_stop_flag(network: &RoadNetwork, v: &mut VehicleState) {
    if v.stop_released || v.stopped_at_sign || v.speed >= STANDSTILL_SPEED {
        return;
    }
    let Some(sign) = network.regulatory_for(v.current_lane) else {
        return;
    };
    if sign.kind != RegulatoryKind::StopSign {
        return;
    }
    let lane = network.lane_ref(v.current_lane);
    let to_line = lane.length() - lane.centerline.project(v.position).s;
    if (0.0..=STOP_LINE_REACH).contains(&to_line) {
        v.stopped_at_sign = true;
    }
}

/// Every pair of vehicles whose footprints overlap, as `(lower id, higher id)`
/// in ascending order.
pub fn detect_collisions(state: &WorldState) -> Vec<(VehicleId, VehicleId)> {
    let mut pairs = Vec::new();
    let boxes: Vec<(VehicleId, OrientedBox)> = state.vehicles.iter().map(|v| (v.id, v.footprint())).collect();
    for (i, (id_a, a)) in boxes.iter().enumerate() {
        for (id_b, b) in &boxes[i + 1..] {
            let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
            if a.center.distance(b.center) >= reach {
                continue;
            }
            if a.overlaps(b) {
                pairs.push(((*id_a).min(*id_b), (*id_a).max(*id_b)));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}
