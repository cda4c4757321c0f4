//! Benchmark aggregation and rendering.

use super::{metrics, EpisodeResult, EvalConfig, FormulaVariant};
use crate::goal::Category;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: FormulaVariant,
    pub mean_ttc: Option<f64>,
    pub mean_sv: Option<f64>,
    pub mean_te: Option<f64>,
    pub mean_score: Option<f64>,
    pub driving_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub total: usize,
    pub success: usize,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub agent: String,
    pub n_total: usize,
    pub n_success: usize,
    pub n_collisions: usize,
    pub alpha: f64,
    pub beta: f64,
    pub collision_rate_pct: f64,
    pub completion_rate_pct: f64,
    pub mean_ttc: Option<f64>,
    pub mean_sv: Option<f64>,
    pub mean_te: Option<f64>,
    /// Driving score under the configured variant.
    pub driving_score: f64,
    pub variant: FormulaVariant,
    pub variants: Vec<VariantSummary>,
    pub by_category: BTreeMap<Category, CategoryCounts>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn summarize(results: &[EpisodeResult], config: &EvalConfig, variant: FormulaVariant, n_collisions: usize) -> VariantSummary {
    let scores: Vec<_> = results.iter().filter(|r| r.completed).filter_map(|r| r.scores(variant)).collect();
    let col = |f: fn(&super::MetricScores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
    let totals = col(|m| m.score);
    VariantSummary {
        variant,
        mean_ttc: mean(&col(|m| m.ttc_score)),
        mean_sv: mean(&col(|m| m.sv_score)),
        mean_te: mean(&col(|m| m.te_score)),
        mean_score: mean(&totals),
        driving_score: metrics::driving_score(&totals, results.len(), n_collisions, config.p_collision),
    }
}

impl BenchmarkReport {
    pub fn from_results(agent: &str, results: &[EpisodeResult], config: &EvalConfig) -> Self {
        let n_total = results.len();
        let n_success = results.iter().filter(|r| r.completed).count();
        let n_collisions = results.iter().filter(|r| r.collided).count();
        let frac = |k: usize| if n_total == 0 { 0.0 } else { k as f64 / n_total as f64 };
        let variants: Vec<_> = [FormulaVariant::AsWritten, FormulaVariant::Corrected]
            .into_iter()
            .map(|v| summarize(results, config, v, n_collisions))
            .collect();
        let main = variants.iter().find(|v| v.variant == config.variant).expect("both variants summarized").clone();
        let mut by_category: BTreeMap<Category, CategoryCounts> = BTreeMap::new();
        for r in results {
            let c = by_category.entry(r.category).or_insert(CategoryCounts { total: 0, success: 0, collisions: 0 });
            c.total += 1;
            c.success += r.completed as usize;
            c.collisions += r.collided as usize;
        }
        Self {
            agent: agent.to_string(),
            n_total,
            n_success,
            n_collisions,
            alpha: frac(n_success),
            beta: frac(n_collisions),
            collision_rate_pct: 100.0 * frac(n_collisions),
            completion_rate_pct: 100.0 * frac(n_success),
            mean_ttc: main.mean_ttc,
            mean_sv: main.mean_sv,
            mean_te: main.mean_te,
            driving_score: main.driving_score,
            variant: config.variant,
            variants,
            by_category,
        }
    }

    /// Plain-text table: one row per formula variant.
    pub fn render_text(&self) -> String {
        let cell = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}"));
        let mut out = String::new();
        let _ = writeln!(out, "agent: {}  episodes: {}  successes: {}  collisions: {}", self.agent, self.n_total, self.n_success, self.n_collisions);
        let _ = writeln!(
            out,
            "{:<12} {:>11} {:>12} {:>7} {:>7} {:>7} {:>14}",
            "variant", "collision %", "completion %", "TTC", "SV", "TE", "driving score"
        );
        for v in &self.variants {
            let name = match v.variant {
                FormulaVariant::AsWritten => "as_written",
                FormulaVariant::Corrected => "corrected",
            };
            let _ = writeln!(
                out,
                "{:<12} {:>11.1} {:>12.1} {:>7} {:>7} {:>7} {:>14.1}",
                name,
                self.collision_rate_pct,
                self.completion_rate_pct,
                cell(v.mean_ttc),
                cell(v.mean_sv),
                cell(v.mean_te),
                v.driving_score
            );
        }
        let _ = writeln!(out, "\n{:<12} {:>6} {:>8} {:>10}", "category", "total", "success", "collision");
        for (c, n) in &self.by_category {
            let _ = writeln!(out, "{:<12} {:>6} {:>8} {:>10}", c.as_str(), n.total, n.success, n.collisions);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(completed: bool, collided: bool, score: f64) -> EpisodeResult {
        EpisodeResult {
            scenario_id: "s".into(),
            category: Category::Speed,
            completed,
            collided,
            t_complete: completed.then_some(10.0),
            tau_min: None,
            variant: FormulaVariant::AsWritten,
            ttc_score: completed.then_some(100.0),
            sv_score: completed.then_some(0.0),
            te_score: completed.then_some(0.0),
            score: completed.then_some(score),
            other_variant: None,
        }
    }

    #[test]
    fn rates_and_driving_score() {
        let mut results = vec![result(true, false, 90.0); 8];
        results.push(result(false, true, 0.0));
        results.push(result(false, false, 0.0));
        let r = BenchmarkReport::from_results("x", &results, &EvalConfig::default());
        assert_eq!(r.alpha, 0.8);
        assert_eq!(r.beta, 0.1);
        assert!((r.driving_score - 22.0).abs() < 1e-9);
        assert_eq!(r.mean_ttc, Some(100.0));
        assert!(r.render_text().contains("22.0"));
        results.reverse();
        let again = BenchmarkReport::from_results("x", &results, &EvalConfig::default());
        assert_eq!(again.driving_score, r.driving_score);
    }
}
