//! Safety, comfort, and efficiency metrics over trajectory logs.

use super::{EvalConfig, FormulaVariant};
use crate::geometry::Position;
use crate::log::{StepRecord, TrajectoryLog, VehicleRecord};
use crate::world::EGO_ID;

/// Time at which two constant-velocity points are closest:
/// `-(dp . dv) / |dv|^2`. `None` when the relative velocity is zero.
pub fn closest_approach_time(p0: Position, v0: Position, pi: Position, vi: Position) -> Option<f64> {
    let dp = p0 - pi;
    let dv = v0 - vi;
    let denom = dv.dot(dv);
    if denom == 0.0 {
        return None;
    }
    Some(-dp.dot(dv) / denom)
}

fn velocity(v: &VehicleRecord) -> Position {
    Position::from_heading(v.heading) * v.speed
}

fn position(v: &VehicleRecord) -> Position {
    Position::new(v.x, v.y)
}

/// Smallest positive closest-approach time between the ego and any other
/// vehicle over steps 1..=T.
pub fn tau_min(log: &TrajectoryLog) -> Option<f64> {
    log.records.iter().filter(|r| r.step >= 1).filter_map(step_tau_min).reduce(f64::min)
}

fn step_tau_min(record: &StepRecord) -> Option<f64> {
    let ego = record.ego()?;
    record
        .vehicles
        .iter()
        .filter(|v| v.id != EGO_ID)
        .filter_map(|v| closest_approach_time(position(ego), velocity(ego), position(v), velocity(v)))
        .filter(|t| *t > 0.0)
        .reduce(f64::min)
}

/// 100 above the 2 s margin (or with no approach at all), `100 - 1/tau`
/// inside it.
pub fn ttc_score(tau_min: Option<f64>) -> f64 {
    match tau_min {
        Some(t) if t > 0.0 && t <= 2.0 => 100.0 - 1.0 / t,
        _ => 100.0,
    }
}

/// Population mean and standard deviation of the ego speed over steps 1..=T.
pub fn ego_speed_stats(log: &TrajectoryLog) -> Option<(f64, f64)> {
    let speeds: Vec<f64> =
        log.records.iter().filter(|r| r.step >= 1).filter_map(|r| r.ego().map(|e| e.speed)).collect();
    if speeds.is_empty() {
        return None;
    }
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    let var = speeds.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn sv_score_from_sigma(sigma: f64, sigma_comfort: f64, variant: FormulaVariant) -> f64 {
    match variant {
        FormulaVariant::AsWritten => 100.0 * sigma / sigma_comfort,
        FormulaVariant::Corrected => 100.0 * (1.0 - sigma / sigma_comfort).max(0.0),
    }
}

pub fn sv_score(log: &TrajectoryLog, config: &EvalConfig, variant: FormulaVariant) -> f64 {
    let sigma = ego_speed_stats(log).map_or(0.0, |(_, s)| s);
    sv_score_from_sigma(sigma, config.sigma_comfort, variant)
}

pub fn te_score(t_complete: f64, t_limit: f64, variant: FormulaVariant) -> f64 {
    match variant {
        FormulaVariant::AsWritten => 100.0 * t_complete / t_limit,
        FormulaVariant::Corrected => 100.0 * (1.0 - t_complete / t_limit),
    }
}

pub fn episode_score(ttc: f64, sv: f64, te: f64, weights: [f64; 3]) -> f64 {
    weights[0] * ttc + weights[1] * sv + weights[2] * te
}

/// Success-weighted mean score minus the collision penalty:
/// `(alpha / N_s) * sum(score) - beta * penalty`.
pub fn driving_score(success_scores: &[f64], n_total: usize, n_collisions: usize, penalty: f64) -> f64 {
    if n_total == 0 {
        return 0.0;
    }
    let n_s = success_scores.len();
    let alpha = n_s as f64 / n_total as f64;
    let beta = n_collisions as f64 / n_total as f64;
    let reward = if n_s == 0 { 0.0 } else { alpha / n_s as f64 * success_scores.iter().sum::<f64>() };
    reward - beta * penalty
}
