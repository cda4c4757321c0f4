//! Goal specifications attached to scenarios.

use crate::network::LaneId;
use crate::world::VehicleId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Distance,
    Speed,
    PullOver,
    Routing,
    LaneChange,
    Overtake,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::Distance, Category::Speed, Category::PullOver, Category::Routing, Category::LaneChange, Category::Overtake];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Distance => "distance",
            Category::Speed => "speed",
            Category::PullOver => "pull_over",
            Category::Routing => "routing",
            Category::LaneChange => "lane_change",
            Category::Overtake => "overtake",
        }
    }

    pub fn needs_intersection(self) -> bool {
        self == Category::Routing
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Category::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown category `{s}`"))
    }
}

/// Goal parameters per category. Relative instructions are resolved against
/// the initial state at generation time; `relative` keeps the requested change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum GoalSpec {
    /// Hold a center distance to the vehicle ahead in the ego lane.
    Distance {
        desired: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relative: Option<f64>,
    },
    Speed {
        desired: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relative: Option<f64>,
    },
    /// Come to rest on `lane` between `zone_start` and `zone_end` (arc length).
    PullOver {
        lane: LaneId,
        zone_start: f64,
        zone_end: f64,
        max_speed: f64,
        max_lateral: f64,
    },
    /// Reach arc length `destination_s` on one of `destination` while only
    /// ever occupying lanes in `route`.
    Routing {
        route: Vec<LaneId>,
        destination: Vec<LaneId>,
        destination_s: f64,
    },
    LaneChange {
        target_lane: LaneId,
    },
    Overtake {
        target_vehicle: VehicleId,
    },
}

impl GoalSpec {
    pub fn category(&self) -> Category {
        match self {
            GoalSpec::Distance { .. } => Category::Distance,
            GoalSpec::Speed { .. } => Category::Speed,
            GoalSpec::PullOver { .. } => Category::PullOver,
            GoalSpec::Routing { .. } => Category::Routing,
            GoalSpec::LaneChange { .. } => Category::LaneChange,
            GoalSpec::Overtake { .. } => Category::Overtake,
        }
    }
}
