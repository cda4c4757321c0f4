//! Per-category completion checkers, evaluated one log record at a time.

use crate::api::{lane_offset, signed_distance};
use crate::geometry::{wrap_angle, Position};
use crate::goal::{Category, GoalSpec};
use crate::log::{Event, StepRecord, TrajectoryLog, VehicleRecord};
use crate::network::RoadNetwork;
use crate::world::{VehicleState, EGO_ID};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriteriaParams {
    pub delta_dist: f64,
    pub delta_speed: f64,
    pub hold_duration: f64,
    pub gap_max: f64,
    pub eps_heading: f64,
    pub eps_overtake: f64,
}

impl Default for CriteriaParams {
    fn default() -> Self {
        Self { delta_dist: 2.0, delta_speed: 1.0, hold_duration: 3.0, gap_max: 50.0, eps_heading: 0.1, eps_overtake: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: bool,
    pub t_complete: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Progress {
    Pending,
    Completed(f64),
    Failed,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CriteriaError {
    #[error("goal is a {goal:?} goal, checker asked for {asked:?}")]
    CategoryMismatch { goal: Category, asked: Category },
}

/// Streaming checker. Once it reports completion or failure the outcome is
/// final.
#[derive(Debug, Clone)]
pub struct CompletionChecker {
    goal: GoalSpec,
    params: CriteriaParams,
    t_limit: f64,
    /// Start of the current compliance window; negative when not tracking.
    t_last: f64,
    on_route: bool,
    outcome: Progress,
}

fn ego_collided(record: &StepRecord) -> bool {
    record.events.iter().any(|e| matches!(e, Event::Collision { ids } if ids.contains(&EGO_ID)))
}

fn as_state(v: &VehicleRecord) -> VehicleState {
    VehicleState::new(v.id, Position::new(v.x, v.y), v.heading, v.speed, v.lane)
}

/// Nearest vehicle ahead of the ego in its lane, with center distance.
fn front_vehicle<'a>(net: &RoadNetwork, record: &'a StepRecord, ego: &VehicleRecord) -> Option<(&'a VehicleRecord, f64)> {
    let at = Position::new(ego.x, ego.y);
    record
        .vehicles
        .iter()
        .filter(|v| v.id != EGO_ID)
        .filter_map(|v| lane_offset(net, ego.lane, at, &[], &as_state(v)).map(|d| (v, d)))
        .filter(|(_, d)| *d > 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

impl CompletionChecker {
    pub fn new(goal: GoalSpec, params: CriteriaParams, t_limit: f64) -> Self {
        Self { goal, params, t_limit, t_last: -1.0, on_route: true, outcome: Progress::Pending }
    }

    pub fn for_category(category: Category, goal: GoalSpec, params: CriteriaParams, t_limit: f64) -> Result<Self, CriteriaError> {
        if goal.category() != category {
            return Err(CriteriaError::CategoryMismatch { goal: goal.category(), asked: category });
        }
        Ok(Self::new(goal, params, t_limit))
    }

    pub fn progress(&self) -> Progress {
        self.outcome
    }

    pub fn observe(&mut self, record: &StepRecord, net: &RoadNetwork) -> Progress {
        if self.outcome != Progress::Pending {
            return self.outcome;
        }
        let t = record.time;
        if t > self.t_limit {
            self.outcome = Progress::Failed;
            return self.outcome;
        }
        if ego_collided(record) {
            self.outcome = Progress::Failed;
            return self.outcome;
        }
        let Some(ego) = record.ego() else {
            return self.outcome;
        };
        let p = self.params;
        let done = match &self.goal {
            GoalSpec::Distance { desired, .. } => {
                let ok = front_vehicle(net, record, ego).is_some_and(|(_, d)| (d - desired).abs() <= p.delta_dist);
                self.hold(ok, t)
            }
            GoalSpec::Speed { desired, .. } => {
                let front_ok = match front_vehicle(net, record, ego) {
                    Some((v, d)) if d <= p.gap_max => v.speed >= desired - p.delta_speed,
                    _ => true,
                };
                let ok = (ego.speed - desired).abs() <= p.delta_speed && front_ok;
                self.hold(ok, t)
            }
            GoalSpec::PullOver { lane, zone_start, zone_end, max_speed, max_lateral } => {
                ego.lane == *lane && {
                    let proj = net.lane_ref(*lane).centerline.project(Position::new(ego.x, ego.y));
                    proj.s >= *zone_start && proj.s <= *zone_end && proj.lateral.abs() <= *max_lateral && ego.speed <= *max_speed
                }
            }
            GoalSpec::Routing { route, destination, destination_s } => {
                self.on_route &= route.contains(&ego.lane);
                let arrived = destination.contains(&ego.lane)
                    && net.lane_ref(ego.lane).centerline.project(Position::new(ego.x, ego.y)).s >= *destination_s;
                arrived && self.on_route
            }
            GoalSpec::LaneChange { target_lane } => {
                ego.lane == *target_lane && {
                    let lane = net.lane_ref(*target_lane);
                    let s = lane.centerline.project(Position::new(ego.x, ego.y)).s;
                    wrap_angle(ego.heading - lane.centerline.heading_at(s)).abs() < p.eps_heading
                }
            }
            GoalSpec::Overtake { target_vehicle } => match record.vehicle(*target_vehicle) {
                Some(target) => signed_distance(net, &as_state(ego), &as_state(target)) > p.eps_overtake,
                None => false,
            },
        };
        if done {
            self.outcome = Progress::Completed(t);
        }
        self.outcome
    }

    /// Hold-for-duration timer: compliance must last strictly longer than D.
    fn hold(&mut self, compliant: bool, t: f64) -> bool {
        if compliant {
            if self.t_last < 0.0 {
                self.t_last = t;
            }
        } else {
            self.t_last = -1.0;
        }
        self.t_last >= 0.0 && t - self.t_last > self.params.hold_duration
    }

    pub fn verdict(&self) -> Verdict {
        match self.outcome {
            Progress::Completed(t) => Verdict { verdict: true, t_complete: Some(t) },
            _ => Verdict { verdict: false, t_complete: None },
        }
    }
}

/// Whole-log check. A collision involving the ego anywhere within the time
/// limit fails the episode regardless of earlier progress.
pub fn check_completion(
    category: Category,
    goal: &GoalSpec,
    log: &TrajectoryLog,
    params: &CriteriaParams,
    net: &RoadNetwork,
    t_limit: f64,
) -> Result<Verdict, CriteriaError> {
    let mut checker = CompletionChecker::for_category(category, goal.clone(), *params, t_limit)?;
    let in_window = |r: &&StepRecord| r.time <= t_limit;
    if log.records.iter().filter(in_window).any(ego_collided) {
        return Ok(Verdict { verdict: false, t_complete: None });
    }
    for r in log.records.iter().filter(in_window) {
        if checker.observe(r, net) != Progress::Pending {
            break;
        }
    }
    Ok(checker.verdict())
}
