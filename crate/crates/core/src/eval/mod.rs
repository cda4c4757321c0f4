//! Episode scoring and benchmark aggregation.

pub mod criteria;
pub mod metrics;
pub mod report;

pub use criteria::{check_completion, CompletionChecker, CriteriaParams, Progress, Verdict};
pub use report::{BenchmarkReport, VariantSummary};

use crate::goal::{Category, GoalSpec};
use crate::log::{Event, TrajectoryLog};
use crate::network::RoadNetwork;
use crate::world::EGO_ID;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaVariant {
    #[default]
    AsWritten,
    Corrected,
}

impl FormulaVariant {
    pub fn other(self) -> Self {
        match self {
            FormulaVariant::AsWritten => FormulaVariant::Corrected,
            FormulaVariant::Corrected => FormulaVariant::AsWritten,
        }
    }
}

impl std::str::FromStr for FormulaVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "as_written" => Ok(FormulaVariant::AsWritten),
            "corrected" => Ok(FormulaVariant::Corrected),
            _ => Err(format!("unknown variant `{s}` (expected as_written or corrected)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub w_ttc: f64,
    pub w_sv: f64,
    pub w_te: f64,
    pub sigma_comfort: f64,
    pub t_limit: f64,
    pub p_collision: f64,
    pub variant: FormulaVariant,
    pub criteria: CriteriaParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            w_ttc: 0.5,
            w_sv: 0.3,
            w_te: 0.2,
            sigma_comfort: 5.0,
            t_limit: 60.0,
            p_collision: 500.0,
            variant: FormulaVariant::AsWritten,
            criteria: CriteriaParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("weights must be non-negative and sum to 1, got {0:?}")]
    Weights([f64; 3]),
    #[error("t_limit must be positive, got {0}")]
    TimeLimit(f64),
    #[error("sigma_comfort must be positive, got {0}")]
    SigmaComfort(f64),
    #[error(transparent)]
    Criteria(#[from] criteria::CriteriaError),
}

impl EvalConfig {
    pub fn weights(&self) -> [f64; 3] {
        [self.w_ttc, self.w_sv, self.w_te]
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let w = self.weights();
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EvalError::Weights(w));
        }
        if !(self.t_limit > 0.0) {
            return Err(EvalError::TimeLimit(self.t_limit));
        }
        if !(self.sigma_comfort > 0.0) {
            return Err(EvalError::SigmaComfort(self.sigma_comfort));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub ttc_score: f64,
    pub sv_score: f64,
    pub te_score: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario_id: String,
    pub category: Category,
    pub completed: bool,
    pub collided: bool,
    pub t_complete: Option<f64>,
    pub tau_min: Option<f64>,
    pub variant: FormulaVariant,
    /// Scores under `variant`; present iff completed.
    pub ttc_score: Option<f64>,
    pub sv_score: Option<f64>,
    pub te_score: Option<f64>,
    pub score: Option<f64>,
    /// The same scores under the other formula variant.
    pub other_variant: Option<MetricScores>,
}

impl EpisodeResult {
    pub fn scores(&self, variant: FormulaVariant) -> Option<MetricScores> {
        if variant == self.variant {
            Some(MetricScores {
                ttc_score: self.ttc_score?,
                sv_score: self.sv_score?,
                te_score: self.te_score?,
                score: self.score?,
            })
        } else {
            self.other_variant
        }
    }
}

fn metric_scores(log: &TrajectoryLog, tau: Option<f64>, t: f64, config: &EvalConfig, variant: FormulaVariant) -> MetricScores {
    let ttc = metrics::ttc_score(tau);
    let sv = metrics::sv_score(log, config, variant);
    let te = metrics::te_score(t, config.t_limit, variant);
    MetricScores { ttc_score: ttc, sv_score: sv, te_score: te, score: metrics::episode_score(ttc, sv, te, config.weights()) }
}

/// Scores a finished log against its goal without simulating.
pub fn score_episode(
    scenario_id: &str,
    goal: &GoalSpec,
    log: &TrajectoryLog,
    net: &RoadNetwork,
    config: &EvalConfig,
) -> Result<EpisodeResult, EvalError> {
    config.validate()?;
    let verdict = check_completion(goal.category(), goal, log, &config.criteria, net, config.t_limit)?;
    let collided = log
        .records
        .iter()
        .filter(|r| r.time <= config.t_limit)
        .flat_map(|r| &r.events)
        .any(|e| matches!(e, Event::Collision { ids } if ids.contains(&EGO_ID)));
    let completed = verdict.verdict && !collided;
    let tau = metrics::tau_min(log);
    let (main, other) = match (completed, verdict.t_complete) {
        (true, Some(t)) => (
            Some(metric_scores(log, tau, t, config, config.variant)),
            Some(metric_scores(log, tau, t, config, config.variant.other())),
        ),
        _ => (None, None),
    };
    Ok(EpisodeResult {
        scenario_id: scenario_id.to_string(),
        category: goal.category(),
        completed,
        collided,
        t_complete: if completed { verdict.t_complete } else { None },
        tau_min: tau,
        variant: config.variant,
        ttc_score: main.map(|m| m.ttc_score),
        sv_score: main.map(|m| m.sv_score),
        te_score: main.map(|m| m.te_score),
        score: main.map(|m| m.score),
        other_variant: other,
    })
}
