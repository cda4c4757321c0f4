//! Procedural instruction/scene pairs with bound goals.

use crate::behavior::{IdmParams, MobilParams};
use crate::goal::{Category, GoalSpec};
use crate::network::{
    IntersectionControl, LaneId, LaneKind, LaneRole, MapConfig, Movement, RoadNetwork, HIGHWAY_SPEED_LIMIT, LANE_WIDTH,
    URBAN_SPEED_LIMIT,
};
use crate::world::{SimError, VehicleId, VehicleState, WorldSnapshot, WorldState, EGO_ID};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

const TEMPLATES: &str = include_str!("../resources/instructions.json");

/// Arc length of generated highways; long enough that nobody reaches the end
/// within an episode.
const HIGHWAY_LENGTH: f64 = 6000.0;
const EGO_START_X: f64 = 300.0;
const TRAFFIC_SPAN: (f64, f64) = (20.0, 1400.0);
const FOLLOW_S0: f64 = 2.0;
const FOLLOW_HEADWAY: f64 = 1.5;

/// Share of each category in a generated suite, in percent.
pub const CATEGORY_MIX: [(Category, f64); 6] = [
    (Category::Distance, 24.5),
    (Category::Speed, 24.5),
    (Category::PullOver, 4.1),
    (Category::Routing, 30.2),
    (Category::LaneChange, 8.2),
    (Category::Overtake, 8.2),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Low,
    Medium,
    High,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::Low, Density::Medium, Density::High];

    /// Background vehicles per km per lane.
    pub fn per_km(self) -> f64 {
        match self {
            Density::Low => 5.0,
            Density::Medium => 15.0,
            Density::High => 30.0,
        }
    }
}

impl std::str::FromStr for Density {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "low" => Ok(Density::Low),
            "medium" => Ok(Density::Medium),
            "high" => Ok(Density::High),
            _ => Err(format!("unknown density `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Highway,
    Intersection,
}

impl std::str::FromStr for MapKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "highway" => Ok(MapKind::Highway),
            "intersection" => Ok(MapKind::Intersection),
            _ => Err(format!("unknown map kind `{s}`")),
        }
    }
}

/// A scripted background lane change, attempted from `time` on until it is
/// safe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maneuver {
    pub vehicle: VehicleId,
    pub time: f64,
    pub target_lane: LaneId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub instruction: String,
    pub initial: WorldSnapshot,
    pub goal: GoalSpec,
    pub map: MapConfig,
    pub density: Density,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maneuvers: Vec<Maneuver>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idm: Option<IdmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobil: Option<MobilParams>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("category {0:?} cannot be generated on a {1:?} map")]
    Incompatible(Category, MapKind),
    #[error("suite needs at least 50 scenarios, got {0}")]
    SuiteTooSmall(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("map: {0}")]
    Map(#[from] crate::network::NetworkError),
    #[error("scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("scenario file {path}: {reason}")]
    File { path: String, reason: String },
}

impl Scenario {
    pub fn category(&self) -> Category {
        self.goal.category()
    }

    pub fn map_kind(&self) -> MapKind {
        match self.map {
            MapConfig::Highway { .. } => MapKind::Highway,
            MapConfig::Intersection { .. } => MapKind::Intersection,
        }
    }

    pub fn network(&self) -> Result<Arc<RoadNetwork>, ScenarioError> {
        Ok(Arc::new(RoadNetwork::from_config(&self.map)?))
    }

    /// Checks referenced ids and the category/map pairing.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |reason: String| ScenarioError::Invalid { id: self.id.clone(), reason };
        if self.instruction.trim().is_empty() {
            return Err(invalid("empty instruction".into()));
        }
        if self.category().needs_intersection() != (self.map_kind() == MapKind::Intersection) {
            return Err(ScenarioError::Incompatible(self.category(), self.map_kind()));
        }
        let net = self.network()?;
        WorldState::from_snapshot(&self.initial, net.clone())?;
        let lane_ok = |l: &LaneId| net.contains(*l);
        let ok = match &self.goal {
            GoalSpec::PullOver { lane, .. } => lane_ok(lane),
            GoalSpec::Routing { route, destination, .. } => route.iter().all(lane_ok) && destination.iter().all(lane_ok),
            GoalSpec::LaneChange { target_lane } => lane_ok(target_lane),
            GoalSpec::Overtake { target_vehicle } => self.initial.vehicles.iter().any(|v| v.id == *target_vehicle),
            GoalSpec::Distance { .. } | GoalSpec::Speed { .. } => true,
        };
        if !ok {
            return Err(invalid("goal references an unknown lane or vehicle".into()));
        }
        for m in &self.maneuvers {
            if !net.contains(m.target_lane) || !self.initial.vehicles.iter().any(|v| v.id == m.vehicle) {
                return Err(invalid("maneuver references an unknown lane or vehicle".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::File { path: "<memory>".into(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let file_err = |reason: String| ScenarioError::File { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
    }
}

/// The world at time zero described by the scenario.
pub fn instantiate(scenario: &Scenario) -> Result<WorldState, ScenarioError> {
    Ok(WorldState::from_snapshot(&scenario.initial, scenario.network()?)?)
}

fn templates() -> BTreeMap<String, Vec<String>> {
    serde_json::from_str(TEMPLATES).expect("bundled templates parse")
}

fn pick_template(rng: &mut ChaCha8Rng, key: &str, fill: &[(&str, String)]) -> String {
    let pool = templates();
    let choices = pool.get(key).unwrap_or_else(|| panic!("template pool `{key}`"));
    let mut text = choices.choose(rng).expect("non-empty pool").clone();
    for (name, value) in fill {
        text = text.replace(&format!("{{{name}}}"), value);
    }
    text
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.1}")
    }
}

/// Initial speed that respects the IDM equilibrium gap to the vehicle ahead.
fn gap_limited_speed(desired: f64, center_gap: Option<f64>) -> f64 {
    match center_gap {
        Some(d) => desired.min(((d - 5.0 - FOLLOW_S0) / FOLLOW_HEADWAY).max(0.0)),
        None => desired,
    }
}

/// Jittered positions along `[from, to]` at the given density, skipping
/// the excluded intervals.
fn traffic_positions(rng: &mut ChaCha8Rng, density: Density, from: f64, to: f64, exclude: &[(f64, f64)]) -> Vec<f64> {
    let spacing = 1000.0 / density.per_km();
    let mut out = Vec::new();
    let mut x = from + rng.gen_range(0.0..spacing);
    while x <= to {
        if !exclude.iter().any(|(a, b)| x >= *a && x <= *b) {
            out.push(x);
        }
        x += (spacing * rng.gen_range(0.6..1.4)).max(10.0);
    }
    out
}

struct Builder {
    vehicles: Vec<VehicleState>,
}

impl Builder {
    fn next_id(&self) -> VehicleId {
        self.vehicles.len() as VehicleId
    }
}

/// Generates one scenario deterministically from its arguments.
pub fn generate_scenario(category: Category, map_kind: MapKind, density: Density, seed: u64) -> Result<Scenario, ScenarioError> {
    match (category.needs_intersection(), map_kind) {
        (true, MapKind::Intersection) => Ok(intersection_scenario(density, seed)),
        (false, MapKind::Highway) => Ok(highway_scenario(category, density, seed)),
        _ => Err(ScenarioError::Incompatible(category, map_kind)),
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn highway_scenario(category: Category, density: Density, seed: u64) -> Scenario {
    let mut rng = rng_for(seed, category as u64 + 1);
    let drivable: u32 = rng.gen_range(3..=5);
    let emergency = category == Category::PullOver || rng.gen_bool(0.3);
    let lane_count = drivable + emergency as u32;
    let first = emergency as u32;
    let top = lane_count - 1;
    let lane_y = |l: u32| l as f64 * LANE_WIDTH;

    let ego_lane = match category {
        Category::PullOver => first + rng.gen_range(0..2),
        Category::Overtake => rng.gen_range(first..top),
        _ => rng.gen_range(first..=top),
    };
    let x0 = EGO_START_X;
    let mut ego_speed: f64 = rng.gen_range(20..=27) as f64;

    // per-lane intervals kept free of generated traffic
    let mut exclude: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    exclude.entry(ego_lane).or_default().push((x0 - 20.0, x0 + 20.0));
    let mut planted: Vec<(u32, f64, f64)> = Vec::new();
    let mut goal_vehicle: Option<usize> = None;

    let mut lane_change_target = None;
    match category {
        Category::Distance | Category::Overtake => {
            let d0: f64 = if category == Category::Distance { rng.gen_range(25.0..45.0) } else { rng.gen_range(30.0..50.0) };
            let lead_speed: f64 =
                if category == Category::Distance { rng.gen_range(18.0..24.0) } else { rng.gen_range(14.0..19.0) };
            exclude.entry(ego_lane).or_default().push((x0, x0 + d0 + 80.0));
            goal_vehicle = Some(planted.len());
            planted.push((ego_lane, x0 + d0, lead_speed));
            ego_speed = if category == Category::Overtake {
                lead_speed + rng.gen_range(0.0..3.0)
            } else {
                gap_limited_speed(ego_speed, Some(d0)).max(lead_speed - 2.0)
            };
            if category == Category::Overtake {
                exclude.entry(ego_lane + 1).or_default().push((x0 - 80.0, x0 + 300.0));
            }
        }
        Category::Speed => {
            exclude.entry(ego_lane).or_default().push((x0, x0 + 350.0));
        }
        Category::PullOver => {
            for l in first..ego_lane {
                exclude.entry(l).or_default().push((x0 - 60.0, x0 + 150.0));
            }
        }
        Category::LaneChange => {
            let mut options = Vec::new();
            if ego_lane > first {
                options.push(("right", ego_lane - 1));
            }
            if ego_lane < top {
                options.push(("left", ego_lane + 1));
            }
            let (dir, target) = *options.choose(&mut rng).expect("at least two drivable lanes");
            exclude.entry(target).or_default().push((x0 - 50.0, x0 + 70.0));
            lane_change_target = Some((dir, target));
        }
        Category::Routing => unreachable!("routing uses intersections"),
    }

    let mut b = Builder { vehicles: Vec::new() };
    let mut ego = VehicleState::new(EGO_ID, crate::geometry::Position::new(x0, lane_y(ego_lane)), 0.0, ego_speed, LaneId(ego_lane));
    ego.target_speed = ego_speed;
    b.vehicles.push(ego);

    // lane -> (x, desired speed, id)
    let mut lanes: BTreeMap<u32, Vec<(f64, f64, VehicleId)>> = BTreeMap::new();
    let mut goal_id = None;
    for (i, (lane, x, v)) in planted.iter().enumerate() {
        let id = b.next_id();
        if goal_vehicle == Some(i) {
            goal_id = Some(id);
        }
        let mut veh = VehicleState::new(id, crate::geometry::Position::new(*x, lane_y(*lane)), 0.0, *v, LaneId(*lane));
        veh.target_speed = *v;
        b.vehicles.push(veh);
        lanes.entry(*lane).or_default().push((*x, *v, id));
    }
    for lane in first..=top {
        let ex = exclude.get(&lane).cloned().unwrap_or_default();
        for x in traffic_positions(&mut rng, density, TRAFFIC_SPAN.0, TRAFFIC_SPAN.1, &ex) {
            let desired = HIGHWAY_SPEED_LIMIT * rng.gen_range(0.8..1.2);
            let id = b.next_id();
            let mut veh = VehicleState::new(id, crate::geometry::Position::new(x, lane_y(lane)), 0.0, desired, LaneId(lane));
            veh.target_speed = desired;
            b.vehicles.push(veh);
            lanes.entry(lane).or_default().push((x, desired, id));
        }
    }
    lanes.entry(ego_lane).or_default().push((x0, ego_speed, EGO_ID));
    // initial speeds consistent with the gap to the vehicle ahead
    for entries in lanes.values_mut() {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        for k in 0..entries.len() {
            let gap = entries.get(k + 1).map(|n| n.0 - entries[k].0);
            let id = entries[k].2;
            let v = &mut b.vehicles[id as usize];
            v.speed = gap_limited_speed(v.speed, gap);
        }
    }
    let ego_v = b.vehicles[0].speed;

    let (goal, instruction) = match category {
        Category::Distance => {
            let lead = &b.vehicles[goal_id.expect("leader planted") as usize];
            let d0 = lead.position.x - x0;
            match rng.gen_range(0..3) {
                0 => {
                    let mut desired: f64;
                    loop {
                        desired = rng.gen_range(15..=60) as f64;
                        if (desired - d0).abs() >= 6.0 {
                            break;
                        }
                    }
                    let text = pick_template(&mut rng, "distance_absolute", &[("distance", fmt_num(desired))]);
                    (GoalSpec::Distance { desired, relative: None }, text)
                }
                1 => {
                    let delta = *[5.0, 10.0, 15.0, 20.0].choose(&mut rng).expect("non-empty");
                    let text = pick_template(&mut rng, "distance_increase", &[("delta", fmt_num(delta))]);
                    (GoalSpec::Distance { desired: d0 + delta, relative: Some(delta) }, text)
                }
                _ => {
                    let delta = if d0 - 10.0 >= 15.0 { *[5.0, 10.0].choose(&mut rng).expect("non-empty") } else { 5.0 };
                    let text = pick_template(&mut rng, "distance_decrease", &[("delta", fmt_num(delta))]);
                    (GoalSpec::Distance { desired: d0 - delta, relative: Some(-delta) }, text)
                }
            }
        }
        Category::Speed => match rng.gen_range(0..3) {
            0 => {
                let mut desired: f64;
                loop {
                    desired = rng.gen_range(15..=35) as f64;
                    if (desired - ego_v).abs() >= 3.0 {
                        break;
                    }
                }
                let text = pick_template(&mut rng, "speed_absolute", &[("speed", fmt_num(desired))]);
                (GoalSpec::Speed { desired, relative: None }, text)
            }
            1 => {
                let delta = *[3.0, 5.0, 8.0, 10.0].choose(&mut rng).expect("non-empty");
                let text = pick_template(&mut rng, "speed_increase", &[("delta", fmt_num(delta))]);
                (GoalSpec::Speed { desired: ego_v + delta, relative: Some(delta) }, text)
            }
            _ => {
                let delta = *[3.0, 5.0, 8.0, 10.0].choose(&mut rng).expect("non-empty");
                let text = pick_template(&mut rng, "speed_decrease", &[("delta", fmt_num(delta))]);
                (GoalSpec::Speed { desired: ego_v - delta, relative: Some(-delta) }, text)
            }
        },
        Category::PullOver => {
            let text = pick_template(&mut rng, "pull_over", &[]);
            (
                GoalSpec::PullOver {
                    lane: LaneId(0),
                    zone_start: x0 + 30.0,
                    zone_end: HIGHWAY_LENGTH,
                    max_speed: 0.5,
                    max_lateral: 1.0,
                },
                text,
            )
        }
        Category::LaneChange => {
            let (dir, target) = lane_change_target.expect("chosen above");
            let text = pick_template(&mut rng, "lane_change", &[("direction", dir.to_string())]);
            (GoalSpec::LaneChange { target_lane: LaneId(target) }, text)
        }
        Category::Overtake => {
            let text = pick_template(&mut rng, "overtake", &[]);
            (GoalSpec::Overtake { target_vehicle: goal_id.expect("target planted") }, text)
        }
        Category::Routing => unreachable!(),
    };

    Scenario {
        id: format!("{}-{density:?}-{seed}", category.as_str()).to_lowercase(),
        instruction,
        initial: WorldSnapshot { time: 0.0, vehicles: b.vehicles, seed },
        goal,
        map: MapConfig::Highway { lane_count, length: HIGHWAY_LENGTH, emergency_lane: emergency },
        density,
        seed,
        maneuvers: Vec::new(),
        idm: None,
        mobil: None,
    }
}

fn intersection_scenario(density: Density, seed: u64) -> Scenario {
    use crate::network::Arm;
    let mut rng = rng_for(seed, 101);
    let n: u32 = rng.gen_range(1..=2);
    let control = *[IntersectionControl::StopSign, IntersectionControl::TrafficLight, IntersectionControl::Uncontrolled]
        .choose(&mut rng)
        .expect("non-empty");
    let map = MapConfig::Intersection { approach_lanes: n, control, seed: rng.gen_range(0..1000) };
    let net = RoadNetwork::from_config(&map).expect("valid intersection");
    let incoming = |arm: Arm| -> Vec<LaneId> {
        let mut v: Vec<(u32, LaneId)> = net
            .lanes
            .iter()
            .filter_map(|l| match l.role {
                LaneRole::Incoming { arm: a, index } if a == arm => Some((index, l.id)),
                _ => None,
            })
            .collect();
        v.sort();
        v.into_iter().map(|(_, id)| id).collect()
    };

    let ego_arm = *Arm::ALL.choose(&mut rng).expect("four arms");
    let ego_lanes = incoming(ego_arm);
    let ego_lane = *ego_lanes.choose(&mut rng).expect("approach lanes");
    let lane_len = net.lane_ref(ego_lane).length();
    let ego_to_line: f64 = rng.gen_range(50.0..90.0);
    let movement = match rng.gen_range(0..20) {
        0..=6 => Movement::Left,
        7..=12 => Movement::Right,
        _ => Movement::Straight,
    };

    let mut b = Builder { vehicles: Vec::new() };
    let place = |lane: LaneId, s: f64, speed: f64, id: VehicleId| {
        let l = net.lane_ref(lane);
        let mut v = VehicleState::new(id, l.centerline.point_at(s), l.centerline.heading_at(s), speed, lane);
        v.target_speed = speed;
        v
    };
    let stoppable = |to_line: f64| (2.0 * 2.0 * (to_line - 6.0).max(0.0)).sqrt();
    let ego_speed = rng.gen_range(8.0..12.0f64).min(stoppable(ego_to_line));
    let mut ego = place(ego_lane, lane_len - ego_to_line, ego_speed, EGO_ID);
    ego.target_speed = 12.0;
    ego.route = net.plan_route(ego_lane, Movement::Straight).expect("straight connector exists");
    b.vehicles.push(ego);

    // background approaches, including the ego's own arm outside a window
    // around the ego
    let active = 100.0;
    for arm in Arm::ALL {
        for (j, lane) in incoming(arm).into_iter().enumerate() {
            let exclude = if arm == ego_arm { vec![(ego_to_line - 20.0, ego_to_line + 20.0)] } else { Vec::new() };
            let mut spots = traffic_positions(&mut rng, density, 10.0, active, &exclude);
            spots.sort_by(|a, b| a.total_cmp(b));
            let mut ahead: Option<f64> = None;
            for to_line in spots {
                let options: Vec<Movement> = [Movement::Right, Movement::Straight, Movement::Left]
                    .into_iter()
                    .filter(|m| match m {
                        Movement::Right => j == 0,
                        Movement::Left => j as u32 == n - 1,
                        Movement::Straight => true,
                    })
                    .collect();
                let m = *options.choose(&mut rng).expect("straight always allowed");
                let desired = URBAN_SPEED_LIMIT * rng.gen_range(0.8..1.2);
                let mut speed = desired.min(stoppable(to_line));
                let leader_gap = match (ahead, arm == ego_arm && lane == ego_lane && to_line > ego_to_line) {
                    (_, true) if ahead.is_none_or(|a| a < ego_to_line) => Some(to_line - ego_to_line),
                    (Some(a), _) => Some(to_line - a),
                    (None, _) => None,
                };
                speed = gap_limited_speed(speed, leader_gap);
                let id = b.next_id();
                let mut v = place(lane, lane_len - to_line, speed, id);
                v.target_speed = desired;
                v.route = net.plan_route(lane, m).expect("direct connector exists");
                b.vehicles.push(v);
                ahead = Some(to_line);
            }
        }
    }
    // the ego keeps a safe speed behind whatever is in front of it
    let ego_leader = b
        .vehicles
        .iter()
        .skip(1)
        .filter(|v| v.current_lane == ego_lane)
        .map(|v| lane_len - net.lane_ref(ego_lane).centerline.project(v.position).s)
        .filter(|to_line| *to_line < ego_to_line)
        .map(|to_line| ego_to_line - to_line)
        .reduce(f64::min);
    let ev = gap_limited_speed(b.vehicles[0].speed, ego_leader);
    b.vehicles[0].speed = ev;

    let exit_arm = ego_arm.exit_for(movement);
    let mut route: Vec<LaneId> = ego_lanes.clone();
    let mut destination = Vec::new();
    for l in &net.lanes {
        match l.role {
            LaneRole::Connector { from, movement: m, .. } if from == ego_arm && m == movement => route.push(l.id),
            LaneRole::Outgoing { arm, .. } if arm == exit_arm => {
                route.push(l.id);
                destination.push(l.id);
            }
            _ => {}
        }
    }
    let key = match movement {
        Movement::Left => "routing_left",
        Movement::Right => "routing_right",
        Movement::Straight => "routing_straight",
    };
    let instruction = pick_template(&mut rng, key, &[]);
    Scenario {
        id: format!("routing-{density:?}-{seed}").to_lowercase(),
        instruction,
        initial: WorldSnapshot { time: 0.0, vehicles: b.vehicles, seed },
        goal: GoalSpec::Routing { route, destination, destination_s: 30.0 },
        map,
        density,
        seed,
        maneuvers: Vec::new(),
        idm: None,
        mobil: None,
    }
}

/// Lane-change scenario with a background car scheduled to cut into the
/// ego's target lane shortly after the episode starts, and a fast car
/// closing in that lane from behind.
pub fn generate_adversarial_lane_change(seed: u64) -> Scenario {
    let mut rng = rng_for(seed, 977);
    let density = *Density::ALL.choose(&mut rng).expect("non-empty");
    let lane_y = |l: u32| l as f64 * LANE_WIDTH;
    let (ego_lane, target, cut_from, dir) = if rng.gen_bool(0.5) { (1, 2, 3, "left") } else { (2, 1, 0, "right") };
    let x0 = EGO_START_X;
    let ego_speed: f64 = rng.gen_range(20.0..26.0);
    let mut vehicles = Vec::new();
    let mut ego = VehicleState::new(EGO_ID, crate::geometry::Position::new(x0, lane_y(ego_lane)), 0.0, ego_speed, LaneId(ego_lane));
    ego.target_speed = ego_speed;
    vehicles.push(ego);

    let mut add = |lane: u32, x: f64, speed: f64, desired: f64| -> VehicleId {
        let id = vehicles.len() as VehicleId;
        let mut v = VehicleState::new(id, crate::geometry::Position::new(x, lane_y(lane)), 0.0, speed, LaneId(lane));
        v.target_speed = desired;
        vehicles.push(v);
        id
    };
    // the cutter runs roughly alongside the ego one lane over
    let cut_speed = ego_speed + rng.gen_range(-1.0..2.0);
    let cutter = add(cut_from, x0 + rng.gen_range(-8.0..15.0), cut_speed, cut_speed);
    // a fast car closing from behind in the target lane
    let chaser_speed = ego_speed + rng.gen_range(4.0..8.0);
    add(target, x0 - rng.gen_range(25.0..45.0), chaser_speed, chaser_speed);
    // light traffic elsewhere
    for lane in 0..4u32 {
        let ex = [(x0 - 80.0, x0 + 120.0)];
        for x in traffic_positions(&mut rng, Density::Low, TRAFFIC_SPAN.0, TRAFFIC_SPAN.1, &ex) {
            let desired = HIGHWAY_SPEED_LIMIT * rng.gen_range(0.8..1.2);
            add(lane, x, desired, desired);
        }
    }
    let text = pick_template(&mut rng, "lane_change", &[("direction", dir.to_string())]);
    Scenario {
        id: format!("lane_change-adversarial-{seed}"),
        instruction: text,
        initial: WorldSnapshot { time: 0.0, vehicles, seed },
        goal: GoalSpec::LaneChange { target_lane: LaneId(target) },
        map: MapConfig::Highway { lane_count: 4, length: HIGHWAY_LENGTH, emergency_lane: false },
        density,
        seed,
        maneuvers: vec![Maneuver { vehicle: cutter, time: rng.gen_range(0.5..3.0), target_lane: LaneId(target) }],
        idm: None,
        mobil: None,
    }
}

/// Category counts for a suite of `total`, by largest-remainder rounding of
/// the category mix.
pub fn suite_counts(total: usize) -> Vec<(Category, usize)> {
    let pct_sum: f64 = CATEGORY_MIX.iter().map(|(_, p)| p).sum();
    let raw: Vec<f64> = CATEGORY_MIX.iter().map(|(_, p)| total as f64 * p / pct_sum).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|a, b| (raw[*b] - raw[*b].floor()).total_cmp(&(raw[*a] - raw[*a].floor())).then(a.cmp(b)));
    let short = total - counts.iter().sum::<usize>();
    for i in order.into_iter().take(short) {
        counts[i] += 1;
    }
    CATEGORY_MIX.iter().map(|(c, _)| *c).zip(counts).collect()
}

fn scenario_seed(suite_seed: u64, index: usize) -> u64 {
    // splitmix64 step
    let mut z = suite_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) % 1_000_000_007
}

pub fn generate_suite(total: usize, seed: u64) -> Result<Vec<Scenario>, ScenarioError> {
    if total < 50 {
        return Err(ScenarioError::SuiteTooSmall(total));
    }
    let mut rng = rng_for(seed, 7);
    let mut out = Vec::with_capacity(total);
    for (category, count) in suite_counts(total) {
        for _ in 0..count {
            let index = out.len();
            let density = *Density::ALL.choose(&mut rng).expect("non-empty");
            let map = if category.needs_intersection() { MapKind::Intersection } else { MapKind::Highway };
            let mut s = generate_scenario(category, map, density, scenario_seed(seed, index))?;
            s.id = format!("{index:04}-{}", s.id);
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: Category,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: Option<u64>,
    pub scenarios: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_suite(dir: &Path, scenarios: &[Scenario], seed: Option<u64>) -> Result<(), ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::File { path: dir.display().to_string(), reason: e.to_string() };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut entries = Vec::new();
    for s in scenarios {
        let file = format!("{}.json", s.id);
        std::fs::write(dir.join(&file), s.to_json()).map_err(io)?;
        entries.push(ManifestEntry { id: s.id.clone(), category: s.category(), file });
    }
    let manifest = Manifest { seed, scenarios: entries };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(io)?;
    Ok(())
}

pub fn read_suite(dir: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ScenarioError::File { path: path.display().to_string(), reason: e.to_string() })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| ScenarioError::File { path: path.display().to_string(), reason: e.to_string() })?;
    manifest.scenarios.iter().map(|e| Scenario::load(&dir.join(&e.file))).collect()
}

/// Whether the emergency lane exists and is the scenario's pull-over lane.
pub fn has_emergency_lane(net: &RoadNetwork) -> bool {
    net.lanes.iter().any(|l| l.kind == LaneKind::Emergency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::detect_collisions;

    #[test]
    fn suite_counts_follow_mix() {
        let c: Vec<usize> = suite_counts(490).into_iter().map(|(_, n)| n).collect();
        let expected = [120, 120, 20, 148, 40, 40];
        assert_eq!(c.iter().sum::<usize>(), 490);
        for (got, want) in c.iter().zip(expected) {
            assert!((*got as i64 - want as i64).abs() <= 1, "{c:?}");
        }
        let c100: Vec<usize> = suite_counts(100).into_iter().map(|(_, n)| n).collect();
        assert_eq!(c100.iter().sum::<usize>(), 100);
    }

    #[test]
    fn generation_is_deterministic() {
        for cat in Category::ALL {
            let map = if cat.needs_intersection() { MapKind::Intersection } else { MapKind::Highway };
            let a = generate_scenario(cat, map, Density::Medium, 42).unwrap();
            let b = generate_scenario(cat, map, Density::Medium, 42).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            a.validate().unwrap();
        }
        assert!(matches!(
            generate_scenario(Category::Routing, MapKind::Highway, Density::Low, 1),
            Err(ScenarioError::Incompatible(..))
        ));
        assert!(matches!(
            generate_scenario(Category::Speed, MapKind::Intersection, Density::Low, 1),
            Err(ScenarioError::Incompatible(..))
        ));
    }

    #[test]
    fn scenario_json_round_trip_and_instantiate() {
        let s = generate_scenario(Category::LaneChange, MapKind::Highway, Density::High, 5).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let w = instantiate(&s).unwrap();
        assert_eq!(w.snapshot(), s.initial);
    }

    #[test]
    fn corrupt_lane_names_field() {
        let mut s = generate_scenario(Category::Speed, MapKind::Highway, Density::Low, 3).unwrap();
        s.initial.vehicles[1].current_lane = LaneId(99);
        match instantiate(&s) {
            Err(ScenarioError::Sim(SimError::SchemaViolation { path, .. })) => {
                assert_eq!(path, "initial.vehicles[1].current_lane")
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn lane_change_example_targets_neighbor() {
        let s = generate_scenario(Category::LaneChange, MapKind::Highway, Density::Low, 42).unwrap();
        let GoalSpec::LaneChange { target_lane } = s.goal else { panic!() };
        let ego = &s.initial.vehicles[0];
        let net = s.network().unwrap();
        let lane = net.lane(ego.current_lane).unwrap();
        let right = s.instruction.contains("right");
        assert_eq!(Some(target_lane), if right { lane.right_neighbor } else { lane.left_neighbor });
    }

    #[test]
    fn routing_goal_passes_through_turn_connector() {
        let s = generate_scenario(Category::Routing, MapKind::Intersection, Density::Medium, 7).unwrap();
        let net = s.network().unwrap();
        let GoalSpec::Routing { route, destination, .. } = &s.goal else { panic!() };
        assert!(route.iter().any(|l| matches!(net.lane_ref(*l).role, LaneRole::Connector { .. })));
        assert!(destination.iter().all(|d| matches!(net.lane_ref(*d).role, LaneRole::Outgoing { .. })));
        assert!(destination.iter().all(|d| route.contains(d)));
    }

    #[test]
    fn instructions_have_two_to_fourteen_words() {
        for s in generate_suite(60, 11).unwrap() {
            let n = s.instruction.split_whitespace().count();
            assert!((2..=14).contains(&n), "{}", s.instruction);
        }
    }

    #[test]
    fn no_initial_collisions_over_many_seeds() {
        for seed in 0..1000u64 {
            let cat = Category::ALL[(seed % 6) as usize];
            let map = if cat.needs_intersection() { MapKind::Intersection } else { MapKind::Highway };
            let density = Density::ALL[(seed / 6 % 3) as usize];
            let s = generate_scenario(cat, map, density, seed).unwrap();
            let w = instantiate(&s).unwrap();
            assert!(detect_collisions(&w).is_empty(), "seed {seed} {cat:?}");
        }
        for seed in 0..100 {
            let w = instantiate(&generate_adversarial_lane_change(seed)).unwrap();
            assert!(detect_collisions(&w).is_empty(), "adversarial seed {seed}");
        }
    }
}
