//! Road networks: straight multi-lane highways and four-way intersections.

use crate::geometry::{Polyline, Position};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::{FRAC_PI_2, PI};

pub const LANE_WIDTH: f64 = 4.0;
pub const HIGHWAY_SPEED_LIMIT: f64 = 30.0;
pub const URBAN_SPEED_LIMIT: f64 = 13.0;
const DEFAULT_ARM_LENGTH: f64 = 150.0;
/// Extra clearance between the outermost lane and the intersection box edge.
const BOX_MARGIN: f64 = 6.0;
/// Connectors closer than this anywhere along their length conflict.
const CONFLICT_DISTANCE: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

impl std::fmt::Display for LaneId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "lane#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneKind {
    Normal,
    Emergency,
    IntersectionConnector,
}

/// The side of the intersection a road arm leaves from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    South,
    East,
    North,
    West,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::South, Arm::East, Arm::North, Arm::West];

    fn index(self) -> usize {
        self as usize
    }

    fn from_index(i: usize) -> Arm {
        Self::ALL[i % 4]
    }

    /// Rotation taking the south arm template onto this arm.
    fn rotation(self) -> f64 {
        self.index() as f64 * FRAC_PI_2
    }

    /// Counter-clockwise quarter turns from `self` to `other`.
    pub fn turns_to(self, other: Arm) -> usize {
        (other.index() + 4 - self.index()) % 4
    }

    /// Exit arm reached by a vehicle approaching from `self`.
    pub fn exit_for(self, movement: Movement) -> Arm {
        match movement {
            Movement::Right => Arm::from_index(self.index() + 1),
            Movement::Straight => Arm::from_index(self.index() + 2),
            Movement::Left => Arm::from_index(self.index() + 3),
        }
    }

    pub fn signal_group(self) -> u8 {
        match self {
            Arm::South | Arm::North => 0,
            Arm::East | Arm::West => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    Left,
    Straight,
    Right,
}

impl Movement {
    pub fn as_str(self) -> &'static str {
        match self {
            Movement::Left => "left",
            Movement::Straight => "straight",
            Movement::Right => "right",
        }
    }
}

/// Where a lane sits in the network. Lane indices count from the right-most
/// lane (index 0) of the direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum LaneRole {
    Highway { index: u32 },
    Incoming { arm: Arm, index: u32 },
    Outgoing { arm: Arm, index: u32 },
    Connector { from: Arm, movement: Movement, to: Arm },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Polyline,
    pub width: f64,
    pub kind: LaneKind,
    pub left_neighbor: Option<LaneId>,
    pub right_neighbor: Option<LaneId>,
    pub successors: Vec<LaneId>,
    pub role: LaneRole,
    pub speed_limit: f64,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn is_drivable(&self) -> bool {
        self.kind != LaneKind::Emergency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegulatoryKind {
    StopSign,
    TrafficLight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatoryElement {
    pub kind: RegulatoryKind,
    pub position: Position,
    pub controlled_lane: LaneId,
    /// Lights in the same group always show the same phase.
    pub signal_group: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Highway,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionControl {
    StopSign,
    TrafficLight,
    Uncontrolled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPhase {
    Red,
    Green,
}

/// Two-group fixed-time plan: group 0 green, all red, group 1 green, all red.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub green: f64,
    pub clearance: f64,
    pub offset: f64,
}

impl SignalPlan {
    pub fn cycle(&self) -> f64 {
        2.0 * (self.green + self.clearance)
    }

    pub fn phase(&self, group: u8, time: f64) -> SignalPhase {
        let t = (time + self.offset).rem_euclid(self.cycle());
        let start = if group == 0 { 0.0 } else { self.green + self.clearance };
        if t >= start && t < start + self.green {
            SignalPhase::Green
        } else {
            SignalPhase::Red
        }
    }
}

/// Serializable recipe from which a network is rebuilt deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapConfig {
    Highway {
        lane_count: u32,
        length: f64,
        emergency_lane: bool,
    },
    Intersection {
        approach_lanes: u32,
        control: IntersectionControl,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("no intersection ahead")]
    NoIntersection,
    #[error("no route realizes a {0} movement from {1}")]
    NoRoute(&'static str, LaneId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub lanes: Vec<Lane>,
    pub regulatory: Vec<RegulatoryElement>,
    pub topology_kind: TopologyKind,
    pub signal_plan: Option<SignalPlan>,
    pub config: MapConfig,
    /// Unordered connector pairs whose paths cross or merge; stored with the
    /// smaller id first.
    conflicts: BTreeSet<(LaneId, LaneId)>,
}

impl RoadNetwork {
    pub fn from_config(config: &MapConfig) -> Result<Self, NetworkError> {
        match *config {
            MapConfig::Highway { lane_count, length, emergency_lane } => {
                build_highway(lane_count, length, emergency_lane)
            }
            MapConfig::Intersection { approach_lanes, control, seed } => {
                build_intersection(approach_lanes, control, seed)
            }
        }
    }

    pub fn lane(&self, id: LaneId) -> Result<&Lane, NetworkError> {
        self.lanes.get(id.0 as usize).ok_or(NetworkError::UnknownLane(id))
    }

    pub fn contains(&self, id: LaneId) -> bool {
        (id.0 as usize) < self.lanes.len()
    }

    /// Panicking accessor for ids already validated against this network.
    pub(crate) fn lane_ref(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0 as usize]
    }

    pub fn predecessors(&self, id: LaneId) -> impl Iterator<Item = &Lane> + '_ {
        self.lanes.iter().filter(move |l| l.successors.contains(&id))
    }

    pub fn are_adjacent(&self, a: LaneId, b: LaneId) -> bool {
        self.lane(a)
            .map(|l| l.left_neighbor == Some(b) || l.right_neighbor == Some(b))
            .unwrap_or(false)
    }

    pub fn conflicts(&self, a: LaneId, b: LaneId) -> bool {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.conflicts.contains(&key)
    }

    pub fn regulatory_for(&self, lane: LaneId) -> Option<&RegulatoryElement> {
        self.regulatory.iter().find(|r| r.controlled_lane == lane)
    }

    pub fn signal_phase(&self, element: &RegulatoryElement, time: f64) -> Option<SignalPhase> {
        match (element.kind, self.signal_plan, element.signal_group) {
            (RegulatoryKind::TrafficLight, Some(plan), Some(group)) => Some(plan.phase(group, time)),
            _ => None,
        }
    }

    /// The approach arm a lane belongs to, for lanes before or inside the box.
    pub fn approach_arm(&self, lane: LaneId) -> Option<Arm> {
        match self.lane(lane).ok()?.role {
            LaneRole::Incoming { arm, .. } => Some(arm),
            LaneRole::Connector { from, .. } => Some(from),
            _ => None,
        }
    }

    /// Lanes a vehicle on `arm` meets as cross traffic, nearest first.
    /// `left_to_right` selects traffic crossing from the vehicle's left.
    pub fn cross_traffic_lanes(&self, arm: Arm, left_to_right: bool) -> Vec<LaneId> {
        let (source, nearest_first_ascending) = if left_to_right {
            (Arm::from_index(arm.index() + 3), true)
        } else {
            (Arm::from_index(arm.index() + 1), false)
        };
        let mut lanes: Vec<(u32, LaneId)> = self
            .lanes
            .iter()
            .filter_map(|l| match l.role {
                LaneRole::Incoming { arm: a, index } if a == source => Some((index, l.id)),
                _ => None,
            })
            .collect();
        lanes.sort();
        if !nearest_first_ascending {
            lanes.reverse();
        }
        lanes.into_iter().map(|(_, id)| id).collect()
    }

    /// Shortest lane sequence (successor and lane-change edges) from `from`
    /// through the connector realizing `movement`, ending on the exit lane.
    pub fn plan_route(&self, from: LaneId, movement: Movement) -> Result<Vec<LaneId>, NetworkError> {
        let start = self.lane(from)?;
        let arm = match start.role {
            LaneRole::Incoming { arm, .. } => arm,
            _ => return Err(NetworkError::NoIntersection),
        };
        let is_goal = |l: &Lane| {
            matches!(l.role, LaneRole::Connector { from: a, movement: m, .. } if a == arm && m == movement)
        };
        let mut parent: Vec<Option<LaneId>> = vec![None; self.lanes.len()];
        let mut seen = vec![false; self.lanes.len()];
        let mut queue = VecDeque::from([from]);
        seen[from.0 as usize] = true;
        while let Some(id) = queue.pop_front() {
            let lane = self.lane_ref(id);
            if is_goal(lane) {
                let mut path = vec![id];
                let mut cur = id;
                while let Some(p) = parent[cur.0 as usize] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                path.extend(lane.successors.first().copied());
                return Ok(path);
            }
            // only explore the approach and its connectors
            if matches!(lane.role, LaneRole::Connector { .. }) {
                continue;
            }
            let mut next: Vec<LaneId> = lane
                .successors
                .iter()
                .copied()
                .chain(lane.right_neighbor)
                .chain(lane.left_neighbor)
                .collect();
            next.sort();
            for n in next {
                if !seen[n.0 as usize] {
                    seen[n.0 as usize] = true;
                    parent[n.0 as usize] = Some(id);
                    queue.push_back(n);
                }
            }
        }
        Err(NetworkError::NoRoute(movement.as_str(), from))
    }

    /// Lanes sharing the travel direction of `lane` (itself plus all lanes
    /// reachable through neighbor links), ordered right to left.
    pub fn parallel_lanes(&self, lane: LaneId) -> Vec<LaneId> {
        let Ok(mut cur) = self.lane(lane) else {
            return Vec::new();
        };
        while let Some(r) = cur.right_neighbor {
            cur = self.lane_ref(r);
        }
        let mut out = vec![cur.id];
        while let Some(l) = cur.left_neighbor {
            out.push(l);
            cur = self.lane_ref(l);
        }
        out
    }
}

/// Parallel straight lanes along `+x`, numbered right (0) to left. With an
/// emergency lane, lane 0 is the emergency lane and counts toward
/// `lane_count`.
pub fn build_highway(lane_count: u32, length: f64, with_emergency_lane: bool) -> Result<RoadNetwork, NetworkError> {
    if lane_count < 1 {
        return Err(NetworkError::InvalidArgument("lane_count must be at least 1".into()));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(NetworkError::InvalidArgument("length must be positive".into()));
    }
    let lanes = (0..lane_count)
        .map(|i| {
            let y = i as f64 * LANE_WIDTH;
            let centerline = Polyline::line(Position::new(0.0, y), Position::new(length, y))
                .expect("positive length");
            Lane {
                id: LaneId(i),
                centerline,
                width: LANE_WIDTH,
                kind: if with_emergency_lane && i == 0 { LaneKind::Emergency } else { LaneKind::Normal },
                left_neighbor: (i + 1 < lane_count).then(|| LaneId(i + 1)),
                right_neighbor: (i > 0).then(|| LaneId(i - 1)),
                successors: Vec::new(),
                role: LaneRole::Highway { index: i },
                speed_limit: HIGHWAY_SPEED_LIMIT,
            }
        })
        .collect();
    Ok(RoadNetwork {
        lanes,
        regulatory: Vec::new(),
        topology_kind: TopologyKind::Highway,
        signal_plan: None,
        config: MapConfig::Highway { lane_count, length, emergency_lane: with_emergency_lane },
        conflicts: BTreeSet::new(),
    })
}

/// Four-way intersection centered at the origin. Each arm carries
/// `approach_lanes` incoming and outgoing lanes; every approach gets a right
/// turn (from its right-most lane), a left turn (from its left-most lane),
/// and one straight connector per lane.
pub fn build_intersection(
    approach_lanes: u32,
    control: IntersectionControl,
    seed: u64,
) -> Result<RoadNetwork, NetworkError> {
    if approach_lanes < 1 {
        return Err(NetworkError::InvalidArgument("approach_lanes must be at least 1".into()));
    }
    let n = approach_lanes;
    let nf = n as f64;
    let w = LANE_WIDTH;
    let half = nf * w + BOX_MARGIN;
    let far = half + DEFAULT_ARM_LENGTH;
    // x offset of lane j (0 = right-most) of the incoming side, in the south
    // arm frame; outgoing lanes mirror it.
    let offset = |j: u32| (nf - j as f64 - 0.5) * w;

    let mut lanes: Vec<Lane> = Vec::new();
    let mut push = |centerline: Polyline, kind: LaneKind, role: LaneRole| -> LaneId {
        let id = LaneId(lanes.len() as u32);
        lanes.push(Lane {
            id,
            centerline,
            width: w,
            kind,
            left_neighbor: None,
            right_neighbor: None,
            successors: Vec::new(),
            role,
            speed_limit: URBAN_SPEED_LIMIT,
        });
        id
    };
    let place = |arm: Arm, pts: &[Position]| -> Polyline {
        let rot = arm.rotation();
        Polyline::new(pts.iter().map(|p| p.rotate(rot)).collect()).expect("valid template")
    };
    let place_poly = |arm: Arm, poly: Polyline| -> Polyline {
        let pts: Vec<Position> = poly.points().to_vec();
        place(arm, &pts)
    };

    let mut incoming: Vec<Vec<LaneId>> = Vec::new();
    for arm in Arm::ALL {
        let ids = (0..n)
            .map(|j| {
                let x = offset(j);
                let poly = place(arm, &[Position::new(x, -far), Position::new(x, -half)]);
                push(poly, LaneKind::Normal, LaneRole::Incoming { arm, index: j })
            })
            .collect();
        incoming.push(ids);
    }
    let mut outgoing: Vec<Vec<LaneId>> = Vec::new();
    for arm in Arm::ALL {
        let ids = (0..n)
            .map(|j| {
                let x = -offset(j);
                let poly = place(arm, &[Position::new(x, -half), Position::new(x, -far)]);
                push(poly, LaneKind::Normal, LaneRole::Outgoing { arm, index: j })
            })
            .collect();
        outgoing.push(ids);
    }
    let mut connectors: Vec<(LaneId, LaneId, LaneId)> = Vec::new(); // (from, conn, to)
    for arm in Arm::ALL {
        let a = arm.index();
        // right turn: clockwise quarter circle around (half, -half)
        let r_right = half - offset(0);
        let right = Polyline::arc(Position::new(half, -half), r_right, PI, -FRAC_PI_2).expect("arc");
        let to = arm.exit_for(Movement::Right);
        let id = push(
            place_poly(arm, right),
            LaneKind::IntersectionConnector,
            LaneRole::Connector { from: arm, movement: Movement::Right, to },
        );
        connectors.push((incoming[a][0], id, outgoing[to.index()][0]));
        let to = arm.exit_for(Movement::Straight);
        for j in 0..n {
            let x = offset(j);
            let id = push(
                place(arm, &[Position::new(x, -half), Position::new(x, half)]),
                LaneKind::IntersectionConnector,
                LaneRole::Connector { from: arm, movement: Movement::Straight, to },
            );
            connectors.push((incoming[a][j as usize], id, outgoing[to.index()][j as usize]));
        }
        // left turn: counter-clockwise quarter circle around (-half, -half)
        let r_left = half + offset(n - 1);
        let left = Polyline::arc(Position::new(-half, -half), r_left, 0.0, FRAC_PI_2).expect("arc");
        let to = arm.exit_for(Movement::Left);
        let id = push(
            place_poly(arm, left),
            LaneKind::IntersectionConnector,
            LaneRole::Connector { from: arm, movement: Movement::Left, to },
        );
        connectors.push((incoming[a][(n - 1) as usize], id, outgoing[to.index()][(n - 1) as usize]));
    }

    for group in incoming.iter().chain(outgoing.iter()) {
        for (j, id) in group.iter().enumerate() {
            let lane = &mut lanes[id.0 as usize];
            lane.right_neighbor = (j > 0).then(|| group[j - 1]);
            lane.left_neighbor = group.get(j + 1).copied();
        }
    }
    for &(from, conn, to) in &connectors {
        lanes[from.0 as usize].successors.push(conn);
        lanes[conn.0 as usize].successors.push(to);
    }

    let mut conflicts = BTreeSet::new();
    for (i, &(from_a, a, to_a)) in connectors.iter().enumerate() {
        for &(from_b, b, to_b) in &connectors[i + 1..] {
            if from_a == from_b {
                continue;
            }
            let close = lanes[a.0 as usize]
                .centerline
                .min_distance_to(&lanes[b.0 as usize].centerline, 0.5)
                < CONFLICT_DISTANCE;
            if to_a == to_b || close {
                conflicts.insert(if a <= b { (a, b) } else { (b, a) });
            }
        }
    }

    let regulatory = match control {
        IntersectionControl::Uncontrolled => Vec::new(),
        IntersectionControl::StopSign | IntersectionControl::TrafficLight => Arm::ALL
            .iter()
            .flat_map(|arm| incoming[arm.index()].iter().map(move |id| (*arm, *id)))
            .map(|(arm, id)| RegulatoryElement {
                kind: if control == IntersectionControl::StopSign {
                    RegulatoryKind::StopSign
                } else {
                    RegulatoryKind::TrafficLight
                },
                position: lanes[id.0 as usize].centerline.end(),
                controlled_lane: id,
                signal_group: (control == IntersectionControl::TrafficLight).then(|| arm.signal_group()),
            })
            .collect(),
    };
    let signal_plan = (control == IntersectionControl::TrafficLight).then(|| {
        let green = 15.0;
        let clearance = 4.0;
        SignalPlan { green, clearance, offset: (seed % 38) as f64 }
    });

    Ok(RoadNetwork {
        lanes,
        regulatory,
        topology_kind: TopologyKind::Intersection,
        signal_plan,
        config: MapConfig::Intersection { approach_lanes, control, seed },
        conflicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_symmetric(net: &RoadNetwork) {
        for lane in &net.lanes {
            if let Some(l) = lane.left_neighbor {
                assert_eq!(net.lane(l).unwrap().right_neighbor, Some(lane.id));
            }
            if let Some(r) = lane.right_neighbor {
                assert_eq!(net.lane(r).unwrap().left_neighbor, Some(lane.id));
            }
            for s in &lane.successors {
                assert!(net.contains(*s));
                assert!(net.lane(*s).unwrap().is_drivable());
            }
        }
    }

    #[test]
    fn five_lane_highway_with_emergency_lane() {
        let net = build_highway(5, 1000.0, true).unwrap();
        assert_eq!(net.lanes.len(), 5);
        assert_eq!(net.lanes[0].kind, LaneKind::Emergency);
        assert!(net.lanes[1..].iter().all(|l| l.kind == LaneKind::Normal));
        assert!(net.lanes[0].right_neighbor.is_none());
        assert_symmetric(&net);
    }

    #[test]
    fn single_lane_highway_has_no_neighbors() {
        let net = build_highway(1, 100.0, false).unwrap();
        assert_eq!(net.lanes.len(), 1);
        assert_eq!(net.lanes[0].kind, LaneKind::Normal);
        assert!(net.lanes[0].left_neighbor.is_none() && net.lanes[0].right_neighbor.is_none());
    }

    #[test]
    fn three_lane_middle_has_both_neighbors() {
        let net = build_highway(3, 500.0, false).unwrap();
        let mid = &net.lanes[1];
        assert_eq!(mid.left_neighbor, Some(LaneId(2)));
        assert_eq!(mid.right_neighbor, Some(LaneId(0)));
        assert_symmetric(&net);
    }

    #[test]
    fn highway_rejects_bad_arguments() {
        assert!(matches!(build_highway(0, 10.0, false), Err(NetworkError::InvalidArgument(_))));
        assert!(matches!(build_highway(2, 0.0, false), Err(NetworkError::InvalidArgument(_))));
        assert!(matches!(build_highway(2, -5.0, true), Err(NetworkError::InvalidArgument(_))));
    }

    fn connector_count(net: &RoadNetwork) -> usize {
        net.lanes.iter().filter(|l| l.kind == LaneKind::IntersectionConnector).count()
    }

    #[test]
    fn stop_sign_intersection_counts() {
        let net = build_intersection(1, IntersectionControl::StopSign, 7).unwrap();
        // 4 approaches x 3 movements
        assert_eq!(connector_count(&net), 12);
        assert_eq!(net.regulatory.len(), 4);
        assert!(net.regulatory.iter().all(|r| r.kind == RegulatoryKind::StopSign));
        let arms: BTreeSet<Arm> = net.regulatory.iter().filter_map(|r| net.approach_arm(r.controlled_lane)).collect();
        assert_eq!(arms.len(), 4);
        assert_symmetric(&net);
    }

    #[test]
    fn traffic_light_groups_share_phase() {
        let net = build_intersection(2, IntersectionControl::TrafficLight, 0).unwrap();
        assert_symmetric(&net);
        let plan = net.signal_plan.unwrap();
        let mut t = 0.0;
        let mut saw_switch = false;
        let mut last = None;
        while t < 2.0 * plan.cycle() {
            let phases: Vec<(Arm, SignalPhase)> = net
                .regulatory
                .iter()
                .map(|r| (net.approach_arm(r.controlled_lane).unwrap(), net.signal_phase(r, t).unwrap()))
                .collect();
            let phase_of = |arm: Arm| phases.iter().find(|(a, _)| *a == arm).unwrap().1;
            assert_eq!(phase_of(Arm::South), phase_of(Arm::North));
            assert_eq!(phase_of(Arm::East), phase_of(Arm::West));
            // opposing groups are never green together
            assert!(!(phase_of(Arm::South) == SignalPhase::Green && phase_of(Arm::East) == SignalPhase::Green));
            for (_, p) in &phases {
                assert!(phases.iter().filter(|(_, q)| q == p).count() >= 2);
            }
            if last.is_some() && last != Some(phase_of(Arm::South)) {
                saw_switch = true;
            }
            last = Some(phase_of(Arm::South));
            t += 0.5;
        }
        assert!(saw_switch);
        assert!(plan.green > 0.0 && plan.clearance > 0.0);
    }

    #[test]
    fn uncontrolled_has_no_regulatory_elements() {
        let net = build_intersection(1, IntersectionControl::Uncontrolled, 0).unwrap();
        assert!(net.regulatory.is_empty());
        assert!(net.signal_plan.is_none());
    }

    #[test]
    fn connectors_join_their_lanes() {
        for n in 1..=3 {
            let net = build_intersection(n, IntersectionControl::Uncontrolled, 0).unwrap();
            assert_eq!(connector_count(&net), 4 * (2 + n as usize));
            for lane in &net.lanes {
                for s in &lane.successors {
                    let next = net.lane(*s).unwrap();
                    assert!(lane.centerline.end().distance(next.centerline.start()) < 1e-6);
                    let dh = crate::geometry::wrap_angle(
                        lane.centerline.heading_at(lane.length()) - next.centerline.heading_at(0.0),
                    );
                    assert!(dh.abs() < 0.3, "heading jump {dh} at {:?}", lane.role);
                }
            }
        }
    }

    #[test]
    fn left_turn_conflicts_with_oncoming_straight() {
        let net = build_intersection(1, IntersectionControl::Uncontrolled, 0).unwrap();
        let find = |from: Arm, movement: Movement| {
            net.lanes
                .iter()
                .find(|l| matches!(l.role, LaneRole::Connector { from: f, movement: m, .. } if f == from && m == movement))
                .unwrap()
                .id
        };
        assert!(net.conflicts(find(Arm::South, Movement::Left), find(Arm::North, Movement::Straight)));
        assert!(net.conflicts(find(Arm::South, Movement::Straight), find(Arm::East, Movement::Straight)));
        assert!(!net.conflicts(find(Arm::South, Movement::Straight), find(Arm::North, Movement::Straight)));
        assert!(!net.conflicts(find(Arm::South, Movement::Right), find(Arm::North, Movement::Right)));
    }

    #[test]
    fn route_search_picks_requested_connector() {
        let net = build_intersection(2, IntersectionControl::Uncontrolled, 0).unwrap();
        let south_right_lane = net
            .lanes
            .iter()
            .find(|l| l.role == LaneRole::Incoming { arm: Arm::South, index: 0 })
            .unwrap()
            .id;
        let route = net.plan_route(south_right_lane, Movement::Left).unwrap();
        // lane change to the left-most lane, connector, exit lane
        assert_eq!(route.len(), 4);
        assert!(matches!(
            net.lane(route[2]).unwrap().role,
            LaneRole::Connector { movement: Movement::Left, from: Arm::South, to: Arm::West }
        ));
        assert!(matches!(net.lane(route[3]).unwrap().role, LaneRole::Outgoing { arm: Arm::West, .. }));
        let straight = net.plan_route(south_right_lane, Movement::Straight).unwrap();
        assert_eq!(straight.len(), 3);
        let hw = build_highway(3, 100.0, false).unwrap();
        assert_eq!(hw.plan_route(LaneId(1), Movement::Left), Err(NetworkError::NoIntersection));
    }

    #[test]
    fn cross_traffic_is_ordered_near_to_far() {
        let net = build_intersection(2, IntersectionControl::Uncontrolled, 0).unwrap();
        let stop = Position::new(0.0, -(2.0 * LANE_WIDTH + BOX_MARGIN));
        for ltr in [true, false] {
            let lanes = net.cross_traffic_lanes(Arm::South, ltr);
            assert_eq!(lanes.len(), 2);
            let d: Vec<f64> = lanes
                .iter()
                .map(|id| net.lane(*id).unwrap().centerline.project(stop).distance)
                .collect();
            assert!(d[0] < d[1]);
            let source = if ltr { Arm::West } else { Arm::East };
            for id in lanes {
                assert!(matches!(net.lane(id).unwrap().role, LaneRole::Incoming { arm, .. } if arm == source));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn neighbor_symmetry_for_random_configs(lanes in 1u32..8, len in 1.0f64..5000.0, em: bool, n in 1u32..4, ctl in 0usize..3, seed: u64) {
            assert_symmetric(&build_highway(lanes, len, em).unwrap());
            let control = [IntersectionControl::StopSign, IntersectionControl::TrafficLight, IntersectionControl::Uncontrolled][ctl];
            assert_symmetric(&build_intersection(n, control, seed).unwrap());
        }
    }
}
