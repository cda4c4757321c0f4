//! The driving primitives agents act through: registry, value encoding, and
//! the per-episode session that executes calls against the world.

use crate::behavior::{self, IdmParams};
use crate::geometry::Position;
use crate::log::Event;
use crate::network::{LaneId, LaneKind, LaneRole, Movement, NetworkError, RegulatoryKind, RoadNetwork, SignalPhase};
use crate::world::{Control, VehicleId, VehicleState, WorldState, EGO_ID, STANDSTILL_SPEED};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PERCEPTION_RANGE: f64 = 100.0;
pub const DEFAULT_SAFE_DECEL: f64 = 5.0;
pub const DEFAULT_MAX_SPEED: f64 = 40.0;

/// A primitive argument or return value. Vehicles and lanes travel as
/// `{"vehicle": id}` / `{"lane": id}` so they never collide with numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "serde_json::Value", try_from = "serde_json::Value")]
pub enum Value {
    Null,
    Bool(bool),
    Number(f64),
    Text(String),
    Vehicle(VehicleId),
    Lane(LaneId),
    List(Vec<Value>),
}

impl From<Value> for serde_json::Value {
    fn from(v: Value) -> Self {
        use serde_json::json;
        match v {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => json!(b),
            Value::Number(n) => json!(n),
            Value::Text(s) => json!(s),
            Value::Vehicle(id) => json!({ "vehicle": id }),
            Value::Lane(id) => json!({ "lane": id.0 }),
            Value::List(items) => serde_json::Value::Array(items.into_iter().map(Into::into).collect()),
        }
    }
}

impl TryFrom<serde_json::Value> for Value {
    type Error = String;

    fn try_from(v: serde_json::Value) -> Result<Self, String> {
        use serde_json::Value as J;
        Ok(match v {
            J::Null => Value::Null,
            J::Bool(b) => Value::Bool(b),
            J::Number(n) => Value::Number(n.as_f64().ok_or("number out of range")?),
            J::String(s) => Value::Text(s),
            J::Array(items) => Value::List(items.into_iter().map(Value::try_from).collect::<Result<_, _>>()?),
            J::Object(map) => {
                let id = |v: &J| v.as_u64().and_then(|n| u32::try_from(n).ok()).ok_or("id must be a u32");
                match (map.len(), map.get("vehicle"), map.get("lane")) {
                    (1, Some(v), None) => Value::Vehicle(id(v)?),
                    (1, None, Some(l)) => Value::Lane(LaneId(id(l)?)),
                    _ => return Err("objects must be {\"vehicle\": id} or {\"lane\": id}".into()),
                }
            }
        })
    }
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Null => "none",
            Value::Bool(_) => "bool",
            Value::Number(_) => "number",
            Value::Text(_) => "string",
            Value::Vehicle(_) => "vehicle",
            Value::Lane(_) => "lane",
            Value::List(_) => "list",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_lane(&self) -> Option<LaneId> {
        match self {
            Value::Lane(l) => Some(*l),
            _ => None,
        }
    }

    pub fn as_vehicle(&self) -> Option<VehicleId> {
        match self {
            Value::Vehicle(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiGroup {
    Ego,
    Control,
    Perception,
    Planning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FnSpec {
    pub name: &'static str,
    pub group: ApiGroup,
    pub params: &'static [ParamSpec],
    pub returns: &'static str,
}

impl FnSpec {
    pub fn required_arity(&self) -> usize {
        self.params.iter().filter(|p| p.default.is_none()).count()
    }
}

const fn p(name: &'static str, kind: &'static str) -> ParamSpec {
    ParamSpec { name, kind, default: None }
}

const fn opt(name: &'static str, kind: &'static str, default: f64) -> ParamSpec {
    ParamSpec { name, kind, default: Some(default) }
}

const fn f(name: &'static str, group: ApiGroup, params: &'static [ParamSpec], returns: &'static str) -> FnSpec {
    FnSpec { name, group, params, returns }
}

use ApiGroup::{Control as Ctl, Ego, Perception as Per, Planning as Plan};

/// Every primitive an agent may call.
pub static REGISTRY: [FnSpec; 23] = [
    f("get_ego_vehicle", Ego, &[], "vehicle"),
    f("get_desired_time_headway", Ego, &[], "number"),
    f("get_target_speed", Ego, &[], "number"),
    f("say", Ego, &[p("text", "string")], "none"),
    f("set_desired_time_headway", Ctl, &[p("desired_time_headway", "number")], "none"),
    f("set_target_speed", Ctl, &[p("target_speed", "number")], "none"),
    f("set_target_lane", Ctl, &[p("target_lane", "lane")], "none"),
    f("autopilot", Ctl, &[], "list[number]"),
    f("recover_from_stop", Ctl, &[], "none"),
    f("get_speed_of", Per, &[p("veh", "vehicle")], "number"),
    f("get_lane_of", Per, &[p("veh", "vehicle")], "lane"),
    f("detect_front_vehicle_in", Per, &[p("lane", "lane"), opt("distance", "number", DEFAULT_PERCEPTION_RANGE)], "vehicle?"),
    f("detect_rear_vehicle_in", Per, &[p("lane", "lane"), opt("distance", "number", DEFAULT_PERCEPTION_RANGE)], "vehicle?"),
    f("get_distance_between_vehicles", Per, &[p("veh1", "vehicle"), p("veh2", "vehicle")], "number"),
    f("get_left_lane", Per, &[p("veh", "vehicle")], "lane?"),
    f("get_right_lane", Per, &[p("veh", "vehicle")], "lane?"),
    f("get_left_to_right_cross_traffic_lanes", Per, &[], "list[lane]"),
    f("get_right_to_left_cross_traffic_lanes", Per, &[], "list[lane]"),
    f("detect_stop_sign_ahead", Per, &[], "number"),
    f("is_safe_enter", Plan, &[p("lane", "lane"), opt("safe_decel", "number", DEFAULT_SAFE_DECEL)], "bool"),
    f("turn_left_at_next_intersection", Plan, &[], "none"),
    f("turn_right_at_next_intersection", Plan, &[], "none"),
    f("go_straight_at_next_intersection", Plan, &[], "none"),
];

pub fn lookup(name: &str) -> Option<&'static FnSpec> {
    REGISTRY.iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApiError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` takes {min}..={max} arguments, got {got}")]
    ArityMismatch { name: String, min: usize, max: usize, got: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("{0}")]
    NotStopped(String),
    #[error("the light is red")]
    RedLight,
    #[error("no intersection ahead")]
    NoIntersection,
    #[error("no route: {0}")]
    NoRoute(String),
}

impl ApiError {
    pub fn kind(&self) -> &'static str {
        match self {
            ApiError::UnknownFunction(_) => "unknown-fn",
            ApiError::ArityMismatch { .. } => "arity-mismatch",
            ApiError::InvalidArgument(_) => "invalid-argument",
            ApiError::UnknownLane(_) => "unknown-lane",
            ApiError::UnknownVehicle(_) => "unknown-vehicle",
            ApiError::NotStopped(_) => "not-stopped",
            ApiError::RedLight => "red-light",
            ApiError::NoIntersection => "no-intersection",
            ApiError::NoRoute(_) => "no-route",
        }
    }

    pub fn info(&self) -> ErrorInfo {
        ErrorInfo { kind: self.kind().to_string(), message: self.to_string() }
    }
}

impl From<NetworkError> for ApiError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::UnknownLane(l) => ApiError::UnknownLane(l),
            NetworkError::NoIntersection => ApiError::NoIntersection,
            other => ApiError::NoRoute(other.to_string()),
        }
    }
}

/// Serializable form of an [`ApiError`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteDirective {
    #[default]
    None,
    Left,
    Right,
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoActuationState {
    pub target_speed: f64,
    pub desired_time_headway: f64,
    pub target_lane: LaneId,
    pub pending_lane_request: Option<LaneId>,
    pub route_directive: RouteDirective,
    pub fallback_active: bool,
    pub fallback_reason: Option<String>,
}

/// One agent's view of one episode. Calls mutate only the ego's actuation
/// state; perception calls are read-only.
#[derive(Debug, Clone)]
pub struct Session {
    pub world: WorldState,
    pub actuation: EgoActuationState,
    pub idm: IdmParams,
    pub max_speed: f64,
    events: Vec<Event>,
}

impl Session {
    pub fn new(world: WorldState, idm: IdmParams) -> Result<Self, ApiError> {
        let ego = world.ego().ok_or(ApiError::UnknownVehicle(EGO_ID))?;
        let actuation = EgoActuationState {
            target_speed: ego.target_speed,
            desired_time_headway: ego.desired_time_headway,
            target_lane: ego.target_lane,
            pending_lane_request: None,
            route_directive: RouteDirective::None,
            fallback_active: false,
            fallback_reason: None,
        };
        Ok(Self { world, actuation, idm, max_speed: DEFAULT_MAX_SPEED, events: Vec::new() })
    }

    pub fn ego(&self) -> &VehicleState {
        self.world.ego().expect("ego checked at construction")
    }

    fn ego_mut(&mut self) -> &mut VehicleState {
        self.world.vehicle_mut(EGO_ID).expect("ego checked at construction")
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.world.network
    }

    /// Events produced by calls since the last drain (currently `say`).
    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Dispatches a registry call with arity and argument-kind checks.
    pub fn call(&mut self, name: &str, args: &[Value]) -> Result<Value, ApiError> {
        let spec = lookup(name).ok_or_else(|| ApiError::UnknownFunction(name.to_string()))?;
        if args.len() < spec.required_arity() || args.len() > spec.params.len() {
            return Err(ApiError::ArityMismatch {
                name: name.to_string(),
                min: spec.required_arity(),
                max: spec.params.len(),
                got: args.len(),
            });
        }
        for (arg, param) in args.iter().zip(spec.params) {
            if arg.kind_name() != param.kind {
                return Err(ApiError::InvalidArgument(format!(
                    "`{}` expects {} for `{}`, got {}",
                    name,
                    param.kind,
                    param.name,
                    arg.kind_name()
                )));
            }
        }
        let num = |i: usize| args.get(i).and_then(Value::as_f64).or(spec.params[i].default).unwrap_or(f64::NAN);
        let lane = |i: usize| args[i].as_lane().expect("kind checked");
        let veh = |i: usize| args[i].as_vehicle().expect("kind checked");
        match name {
            "get_ego_vehicle" => Ok(Value::Vehicle(EGO_ID)),
            "get_desired_time_headway" => Ok(Value::Number(self.actuation.desired_time_headway)),
            "get_target_speed" => Ok(Value::Number(self.actuation.target_speed)),
            "say" => {
                let Value::Text(text) = &args[0] else { unreachable!("kind checked") };
                self.events.push(Event::Say { text: text.clone() });
                Ok(Value::Null)
            }
            "set_desired_time_headway" => self.set_desired_time_headway(num(0)).map(|_| Value::Null),
            "set_target_speed" => self.set_target_speed(num(0)).map(|_| Value::Null),
            "set_target_lane" => self.set_target_lane(lane(0)).map(|_| Value::Null),
            "autopilot" => {
                let c = self.autopilot();
                Ok(Value::List(vec![Value::Number(c.acceleration), Value::Number(c.steering)]))
            }
            "recover_from_stop" => self.recover_from_stop().map(|_| Value::Null),
            "get_speed_of" => Ok(Value::Number(self.vehicle(veh(0))?.speed)),
            "get_lane_of" => Ok(Value::Lane(self.vehicle(veh(0))?.current_lane)),
            "detect_front_vehicle_in" => Ok(opt_vehicle(self.detect_vehicle_in(lane(0), num(1), true)?)),
            "detect_rear_vehicle_in" => Ok(opt_vehicle(self.detect_vehicle_in(lane(0), num(1), false)?)),
            "get_distance_between_vehicles" => Ok(Value::Number(self.distance_between(veh(0), veh(1))?)),
            "get_left_lane" => Ok(opt_lane(self.network().lane_ref(self.vehicle(veh(0))?.current_lane).left_neighbor)),
            "get_right_lane" => Ok(opt_lane(self.network().lane_ref(self.vehicle(veh(0))?.current_lane).right_neighbor)),
            "get_left_to_right_cross_traffic_lanes" => Ok(lane_list(self.cross_traffic(true))),
            "get_right_to_left_cross_traffic_lanes" => Ok(lane_list(self.cross_traffic(false))),
            "detect_stop_sign_ahead" => Ok(Value::Number(self.detect_stop_sign_ahead())),
            "is_safe_enter" => self.is_safe_enter(lane(0), num(1)).map(Value::Bool),
            "turn_left_at_next_intersection" => self.route_to(Movement::Left).map(|_| Value::Null),
            "turn_right_at_next_intersection" => self.route_to(Movement::Right).map(|_| Value::Null),
            "go_straight_at_next_intersection" => self.route_to(Movement::Straight).map(|_| Value::Null),
            _ => unreachable!("registry and dispatch agree"),
        }
    }

    fn vehicle(&self, id: VehicleId) -> Result<&VehicleState, ApiError> {
        self.world.vehicle(id).ok_or(ApiError::UnknownVehicle(id))
    }

    fn check_lane(&self, lane: LaneId) -> Result<(), ApiError> {
        self.network().lane(lane).map(|_| ()).map_err(ApiError::from)
    }

    pub fn set_desired_time_headway(&mut self, headway: f64) -> Result<(), ApiError> {
        if !headway.is_finite() || headway < 0.0 {
            return Err(ApiError::InvalidArgument(format!("headway must be a non-negative number, got {headway}")));
        }
        self.actuation.desired_time_headway = headway;
        self.ego_mut().desired_time_headway = headway;
        Ok(())
    }

    pub fn set_target_speed(&mut self, speed: f64) -> Result<(), ApiError> {
        if !speed.is_finite() {
            return Err(ApiError::InvalidArgument(format!("target speed must be finite, got {speed}")));
        }
        let speed = speed.clamp(0.0, self.max_speed);
        self.actuation.target_speed = speed;
        self.ego_mut().target_speed = speed;
        Ok(())
    }

    /// Records a lane request; lateral motion waits for a safe decision
    /// boundary (see [`Session::begin_pending_lane_change`]).
    pub fn set_target_lane(&mut self, lane: LaneId) -> Result<(), ApiError> {
        self.check_lane(lane)?;
        let ego = self.ego();
        if lane == ego.current_lane || lane == ego.target_lane {
            return Ok(());
        }
        if !self.network().are_adjacent(ego.current_lane, lane) {
            return Err(ApiError::InvalidArgument(format!("lane {lane} is not adjacent to lane {}", ego.current_lane)));
        }
        self.actuation.pending_lane_request = Some(lane);
        Ok(())
    }

    pub fn autopilot(&self) -> Control {
        behavior::autopilot_control(self.ego(), &self.world, &self.idm)
    }

    pub fn recover_from_stop(&mut self) -> Result<(), ApiError> {
        let ego = self.ego();
        let reg = self.network().regulatory_for(ego.current_lane).map(|r| r.kind);
        if ego.stopped_at_sign && reg == Some(RegulatoryKind::StopSign) {
            let ego = self.ego_mut();
            ego.stopped_at_sign = false;
            ego.stop_released = true;
            return Ok(());
        }
        if ego.speed >= STANDSTILL_SPEED {
            return Err(ApiError::NotStopped(format!("ego is moving at {:.1} m/s", ego.speed)));
        }
        if reg == Some(RegulatoryKind::TrafficLight) && self.world.light_for(ego.current_lane) == Some(SignalPhase::Red) {
            return Err(ApiError::RedLight);
        }
        Ok(())
    }

    /// Nearest vehicle in `lane` ahead of (or behind) the ego within
    /// `range`, inclusive, measured along the lane.
    pub fn detect_vehicle_in(&self, lane: LaneId, range: f64, front: bool) -> Result<Option<VehicleId>, ApiError> {
        self.check_lane(lane)?;
        if !(range >= 0.0) {
            return Err(ApiError::InvalidArgument(format!("distance must be non-negative, got {range}")));
        }
        let ego = self.ego();
        let mut best: Option<(VehicleId, f64)> = None;
        for v in self.world.vehicles.iter().filter(|v| v.id != EGO_ID) {
            let Some(off) = lane_offset(self.network(), lane, ego.position, &ego.route, v) else {
                continue;
            };
            let d = if front { off } else { -off };
            if d > 0.0 && d <= range && best.is_none_or(|(_, b)| d < b) {
                best = Some((v.id, d));
            }
        }
        Ok(best.map(|(id, _)| id))
    }

    /// Signed distance from `b` to `a` along `b`'s lane, positive when `a`
    /// is ahead. Falls back to the Euclidean distance signed by `b`'s
    /// heading when the two are not on a common lane chain.
    pub fn distance_between(&self, a: VehicleId, b: VehicleId) -> Result<f64, ApiError> {
        let va = self.vehicle(a)?;
        let vb = self.vehicle(b)?;
        if a == b {
            return Ok(0.0);
        }
        Ok(signed_distance(self.network(), va, vb))
    }

    fn cross_traffic(&self, left_to_right: bool) -> Vec<LaneId> {
        match self.network().approach_arm(self.ego().current_lane) {
            Some(arm) => self.network().cross_traffic_lanes(arm, left_to_right),
            None => Vec::new(),
        }
    }

    /// Distance from the ego to the stop sign on its lane, or -1.
    pub fn detect_stop_sign_ahead(&self) -> f64 {
        let ego = self.ego();
        let net = self.network();
        match net.regulatory_for(ego.current_lane) {
            Some(r) if r.kind == RegulatoryKind::StopSign => {
                let lane = net.lane_ref(ego.current_lane);
                let d = lane.length() - lane.centerline.project(ego.position).s;
                if (0.0..=DEFAULT_PERCEPTION_RANGE).contains(&d) {
                    d
                } else {
                    -1.0
                }
            }
            _ => -1.0,
        }
    }

    /// Whether the ego could move into the adjacent `lane` now without
    /// forcing itself or the new follower to brake harder than `safe_decel`.
    pub fn is_safe_enter(&self, lane: LaneId, safe_decel: f64) -> Result<bool, ApiError> {
        self.check_lane(lane)?;
        if !(safe_decel > 0.0) {
            return Err(ApiError::InvalidArgument(format!("safe_decel must be positive, got {safe_decel}")));
        }
        let ego = self.ego();
        if !self.network().are_adjacent(ego.current_lane, lane) {
            return Ok(false);
        }
        Ok(behavior::is_safe_to_enter(&self.world, ego, lane, safe_decel, &self.idm))
    }

    pub fn route_to(&mut self, movement: Movement) -> Result<(), ApiError> {
        let ego = self.ego();
        let route = self.network().plan_route(ego.current_lane, movement)?;
        self.ego_mut().route = route;
        self.actuation.route_directive = match movement {
            Movement::Left => RouteDirective::Left,
            Movement::Right => RouteDirective::Right,
            Movement::Straight => RouteDirective::Straight,
        };
        Ok(())
    }

    /// Queues the lateral hop the planned route needs next, if any.
    pub fn queue_route_hop(&mut self) {
        let ego = self.ego();
        if self.actuation.pending_lane_request.is_some() || ego.target_lane != ego.current_lane {
            return;
        }
        let Some(pos) = ego.route.iter().position(|l| *l == ego.current_lane) else {
            return;
        };
        if let Some(next) = ego.route.get(pos + 1).copied() {
            if self.network().are_adjacent(ego.current_lane, next) {
                self.actuation.pending_lane_request = Some(next);
            }
        }
    }

    /// Safety gate run at decision boundaries: starts the pending lane
    /// change only when entering the lane is safe now. Returns the lane
    /// when lateral motion begins.
    pub fn begin_pending_lane_change(&mut self) -> Option<LaneId> {
        let lane = self.actuation.pending_lane_request?;
        let ego = self.ego();
        if lane == ego.current_lane || !self.network().are_adjacent(ego.current_lane, lane) {
            self.actuation.pending_lane_request = None;
            return None;
        }
        if ego.target_lane != ego.current_lane {
            return None;
        }
        if !behavior::is_safe_to_enter(&self.world, ego, lane, DEFAULT_SAFE_DECEL, &self.idm) {
            return None;
        }
        let route_lane = self.network().lane_ref(lane);
        let on_route = ego.route.contains(&lane);
        let highway = matches!(route_lane.role, LaneRole::Highway { .. });
        let replan = match self.actuation.route_directive {
            RouteDirective::Left => Some(Movement::Left),
            RouteDirective::Right => Some(Movement::Right),
            RouteDirective::Straight => Some(Movement::Straight),
            RouteDirective::None => None,
        };
        let new_route = if on_route {
            None
        } else if highway {
            Some(vec![lane])
        } else {
            Some(
                replan
                    .and_then(|m| self.network().plan_route(lane, m).ok())
                    .unwrap_or_else(|| vec![lane]),
            )
        };
        self.actuation.pending_lane_request = None;
        self.actuation.target_lane = lane;
        let ego = self.ego_mut();
        ego.target_lane = lane;
        if let Some(r) = new_route {
            ego.route = r;
        }
        Some(lane)
    }

    /// Switches the remaining episode to autopilot. Returns false when the
    /// fallback was already active.
    pub fn engage_fallback(&mut self, reason: &str) -> bool {
        if self.actuation.fallback_active {
            return false;
        }
        self.actuation.fallback_active = true;
        self.actuation.fallback_reason = Some(reason.to_string());
        true
    }

    /// Keeps the actuation mirror in sync after the world advanced.
    pub fn sync_from_world(&mut self) {
        let ego = self.ego();
        self.actuation.target_lane = ego.target_lane;
    }
}

fn opt_vehicle(v: Option<VehicleId>) -> Value {
    v.map_or(Value::Null, Value::Vehicle)
}

fn opt_lane(l: Option<LaneId>) -> Value {
    l.map_or(Value::Null, Value::Lane)
}

fn lane_list(lanes: Vec<LaneId>) -> Value {
    Value::List(lanes.into_iter().map(Value::Lane).collect())
}

fn route_next(net: &RoadNetwork, lane: LaneId, route: &[LaneId]) -> Option<LaneId> {
    let l = net.lane_ref(lane);
    l.successors
        .iter()
        .copied()
        .find(|s| route.contains(s))
        .or_else(|| {
            l.successors
                .iter()
                .copied()
                .find(|s| matches!(net.lane_ref(*s).role, LaneRole::Connector { movement: Movement::Straight, .. }))
        })
        .or_else(|| l.successors.first().copied())
}

fn route_prev(net: &RoadNetwork, lane: LaneId, route: &[LaneId]) -> Option<LaneId> {
    let preds: Vec<LaneId> = net.predecessors(lane).map(|l| l.id).collect();
    preds.iter().copied().find(|p| route.contains(p)).or_else(|| preds.first().copied())
}

/// Offset of `v` from `at` along `lane` and its successor/predecessor chain,
/// when `v` is on that chain.
pub fn lane_offset(net: &RoadNetwork, lane: LaneId, at: Position, route: &[LaneId], v: &VehicleState) -> Option<f64> {
    let s_at = behavior::lane_s(net, lane, at);
    if v.current_lane == lane {
        return Some(behavior::lane_s(net, lane, v.position) - s_at);
    }
    let mut offset = net.lane_ref(lane).length() - s_at;
    let mut cur = lane;
    for _ in 0..4 {
        let Some(next) = route_next(net, cur, route) else { break };
        if v.current_lane == next {
            return Some(offset + behavior::lane_s(net, next, v.position));
        }
        offset += net.lane_ref(next).length();
        cur = next;
        if offset > 2.0 * DEFAULT_PERCEPTION_RANGE {
            break;
        }
    }
    let mut offset = -s_at;
    let mut cur = lane;
    for _ in 0..4 {
        let Some(prev) = route_prev(net, cur, route) else { break };
        let len = net.lane_ref(prev).length();
        if v.current_lane == prev {
            return Some(offset - len + behavior::lane_s(net, prev, v.position));
        }
        offset -= len;
        cur = prev;
        if offset < -2.0 * DEFAULT_PERCEPTION_RANGE {
            break;
        }
    }
    None
}

/// Signed center distance from `b` to `a`, positive when `a` is ahead.
pub fn signed_distance(net: &RoadNetwork, a: &VehicleState, b: &VehicleState) -> f64 {
    if let Some(d) = lane_offset(net, b.current_lane, b.position, &b.route, a) {
        return d;
    }
    let delta = a.position - b.position;
    let d = delta.norm();
    if delta.dot(Position::from_heading(b.heading)) < 0.0 {
        -d
    } else {
        d
    }
}

/// Whether `lane` is the emergency lane.
pub fn is_emergency(net: &RoadNetwork, lane: LaneId) -> bool {
    net.lane(lane).map(|l| l.kind == LaneKind::Emergency).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_highway, build_intersection, IntersectionControl};
    use std::sync::Arc;

    fn car(id: u32, x: f64, lane: u32, speed: f64) -> VehicleState {
        VehicleState::new(id, Position::new(x, lane as f64 * 4.0), 0.0, speed, LaneId(lane))
    }

    fn highway_session(vehicles: Vec<VehicleState>) -> Session {
        let net = Arc::new(build_highway(3, 2000.0, false).unwrap());
        Session::new(WorldState::new(net, vehicles, 0), IdmParams::default()).unwrap()
    }

    #[test]
    fn value_wire_forms() {
        let v = Value::List(vec![Value::Lane(LaneId(3)), Value::Vehicle(2), Value::Null, Value::Number(1.5)]);
        let j = serde_json::to_value(&v).unwrap();
        assert_eq!(j, serde_json::json!([{"lane": 3}, {"vehicle": 2}, null, 1.5]));
        assert_eq!(serde_json::from_value::<Value>(j).unwrap(), v);
        assert!(serde_json::from_value::<Value>(serde_json::json!({"car": 1})).is_err());
        assert_eq!(serde_json::from_value::<Value>(serde_json::json!(7)).unwrap(), Value::Number(7.0));
    }

    #[test]
    fn registry_is_closed_and_unique() {
        assert_eq!(REGISTRY.len(), 23);
        let mut names: Vec<_> = REGISTRY.iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 23);
        let mut s = highway_session(vec![car(0, 100.0, 1, 20.0)]);
        assert_eq!(s.call("fly", &[]).unwrap_err().kind(), "unknown-fn");
        assert_eq!(s.call("get_speed_of", &[]).unwrap_err().kind(), "arity-mismatch");
        assert_eq!(s.call("get_speed_of", &[Value::Number(0.0)]).unwrap_err().kind(), "invalid-argument");
    }

    #[test]
    fn ego_queries() {
        let mut ego = car(0, 100.0, 1, 20.0);
        ego.target_speed = 25.0;
        let mut s = highway_session(vec![ego]);
        assert_eq!(s.call("get_target_speed", &[]).unwrap(), Value::Number(25.0));
        assert_eq!(s.call("get_desired_time_headway", &[]).unwrap(), Value::Number(1.5));
        assert_eq!(s.call("get_ego_vehicle", &[]).unwrap(), Value::Vehicle(0));
        s.call("set_target_speed", &[Value::Number(20.0)]).unwrap();
        assert_eq!(s.call("get_target_speed", &[]).unwrap(), Value::Number(20.0));
        s.call("set_target_speed", &[Value::Number(99.0)]).unwrap();
        assert_eq!(s.call("get_target_speed", &[]).unwrap(), Value::Number(DEFAULT_MAX_SPEED));
        assert_eq!(s.call("set_desired_time_headway", &[Value::Number(-1.0)]).unwrap_err().kind(), "invalid-argument");
    }

    #[test]
    fn say_events_keep_order() {
        let mut s = highway_session(vec![car(0, 100.0, 1, 20.0)]);
        s.call("say", &[Value::Text("one".into())]).unwrap();
        s.call("say", &[Value::Text(String::new())]).unwrap();
        let e = s.take_events();
        assert_eq!(e, vec![Event::Say { text: "one".into() }, Event::Say { text: String::new() }]);
        assert!(s.take_events().is_empty());
    }

    #[test]
    fn perception_range_is_inclusive() {
        let s = highway_session(vec![car(0, 100.0, 1, 20.0), car(1, 130.0, 1, 20.0), car(2, 160.0, 1, 20.0)]);
        assert_eq!(s.detect_vehicle_in(LaneId(1), 100.0, true).unwrap(), Some(1));
        let s = highway_session(vec![car(0, 100.0, 1, 20.0), car(1, 200.0, 1, 20.0)]);
        assert_eq!(s.detect_vehicle_in(LaneId(1), 100.0, true).unwrap(), Some(1));
        let s = highway_session(vec![car(0, 100.0, 1, 20.0), car(1, 220.0, 1, 20.0), car(2, 40.0, 1, 20.0)]);
        assert_eq!(s.detect_vehicle_in(LaneId(1), 100.0, true).unwrap(), None);
        assert_eq!(s.detect_vehicle_in(LaneId(1), 100.0, false).unwrap(), Some(2));
        assert!(matches!(s.detect_vehicle_in(LaneId(9), 100.0, true), Err(ApiError::UnknownLane(_))));
    }

    #[test]
    fn signed_distances() {
        let s = highway_session(vec![car(0, 100.0, 1, 20.0), car(1, 125.0, 1, 20.0)]);
        assert_eq!(s.distance_between(1, 0).unwrap(), 25.0);
        assert_eq!(s.distance_between(0, 1).unwrap(), -25.0);
        assert_eq!(s.distance_between(0, 0).unwrap(), 0.0);
        assert!(matches!(s.distance_between(0, 7), Err(ApiError::UnknownVehicle(7))));
    }

    #[test]
    fn lane_topology_queries() {
        let mut s = highway_session(vec![car(0, 100.0, 0, 20.0)]);
        assert_eq!(s.call("get_right_lane", &[Value::Vehicle(0)]).unwrap(), Value::Null);
        assert_eq!(s.call("get_left_lane", &[Value::Vehicle(0)]).unwrap(), Value::Lane(LaneId(1)));
        assert_eq!(s.call("get_left_to_right_cross_traffic_lanes", &[]).unwrap(), Value::List(vec![]));
        assert_eq!(s.call("detect_stop_sign_ahead", &[]).unwrap(), Value::Number(-1.0));
        assert_eq!(s.call("turn_left_at_next_intersection", &[]).unwrap_err().kind(), "no-intersection");
    }

    #[test]
    fn lane_requests_wait_for_safety() {
        let mut s = highway_session(vec![car(0, 100.0, 1, 20.0), car(1, 92.0, 2, 28.0)]);
        assert_eq!(s.call("set_target_lane", &[Value::Lane(LaneId(1))]).unwrap(), Value::Null);
        assert_eq!(s.actuation.pending_lane_request, None);
        assert!(s.set_target_lane(LaneId(5)).is_err());
        s.set_target_lane(LaneId(2)).unwrap();
        assert!(!s.is_safe_enter(LaneId(2), 5.0).unwrap());
        assert_eq!(s.begin_pending_lane_change(), None);
        assert_eq!(s.actuation.pending_lane_request, Some(LaneId(2)));
        assert_eq!(s.call("is_safe_enter", &[Value::Lane(LaneId(0))]).unwrap(), Value::Bool(true));
        assert_eq!(
            s.call("is_safe_enter", &[Value::Lane(LaneId(0))]).unwrap(),
            s.call("is_safe_enter", &[Value::Lane(LaneId(0)), Value::Number(5.0)]).unwrap()
        );
        s.set_target_lane(LaneId(0)).unwrap();
        assert_eq!(s.begin_pending_lane_change(), Some(LaneId(0)));
        assert_eq!(s.ego().target_lane, LaneId(0));
    }

    #[test]
    fn recover_requires_a_stop() {
        let mut s = highway_session(vec![car(0, 100.0, 1, 20.0)]);
        assert_eq!(s.call("recover_from_stop", &[]).unwrap_err().kind(), "not-stopped");
    }

    #[test]
    fn stop_sign_distance_and_routes() {
        let net = Arc::new(build_intersection(1, IntersectionControl::StopSign, 0).unwrap());
        let incoming = net
            .lanes
            .iter()
            .find(|l| matches!(l.role, LaneRole::Incoming { arm: crate::network::Arm::South, .. }))
            .unwrap();
        let line = incoming.centerline.end();
        let pos = Position::new(line.x, line.y - 40.0);
        let ego = VehicleState::new(0, pos, std::f64::consts::FRAC_PI_2, 10.0, incoming.id);
        let mut s = Session::new(WorldState::new(net.clone(), vec![ego], 0), IdmParams::default()).unwrap();
        assert!((s.detect_stop_sign_ahead() - 40.0).abs() < 0.1);
        s.call("turn_left_at_next_intersection", &[]).unwrap();
        let route = &s.ego().route;
        assert!(route.iter().any(|l| matches!(net.lane_ref(*l).role, LaneRole::Connector { movement: Movement::Left, .. })));
        let ltr = s.call("get_left_to_right_cross_traffic_lanes", &[]).unwrap();
        assert!(matches!(ltr, Value::List(ref v) if !v.is_empty()));
    }
}
