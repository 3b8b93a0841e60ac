//! Scoring, Winsorization and subsampled method comparisons.

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregation::Method;
use crate::error::{Error, Result};
use crate::model::{ForecastPanel, InformationStructure, Mode};
use crate::pipeline::{self, FitConfig};
use crate::simulate::rng_for;

pub const DEFAULT_MAX_REDRAWS: usize = 1_000;
/// Common events every pair of subsampled forecasters must share.
pub const MIN_COMMON_EVENTS: usize = 2;

/// Root mean squared error; for binary outcomes the square root of the Brier score.
pub fn brier_rmse(predictions: &[f64], outcomes: &[f64]) -> Result<f64> {
    if predictions.len() != outcomes.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: outcomes.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Contract("cannot score zero events".into()));
    }
    let sse: f64 = predictions.iter().zip(outcomes).map(|(p, y)| (p - y).powi(2)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// Percentile of sorted data by linear interpolation between order
/// statistics: position (n − 1)·q, the same rule as R's type 7 and NumPy's default.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-event Winsorization: values outside the central `level` percent of
/// each event's forecasts are clamped to the bounding percentiles.
pub fn winsorize(panel: &ForecastPanel, level: f64) -> Result<ForecastPanel> {
    panel.require_mode(Mode::Continuous)?;
    if !(level > 0.0 && level < 100.0) {
        return Err(Error::Contract(format!("winsorization level {level} must lie in (0, 100)")));
    }
    let tail = (100.0 - level) / 200.0;
    let bounds: Vec<Option<(f64, f64)>> = (0..panel.n_events())
        .map(|k| {
            let mut xs: Vec<f64> = panel.grid.present_in_event(k).iter().map(|&j| panel.grid.values()[(k, j)]).collect();
            if xs.is_empty() {
                return None;
            }
            xs.sort_by(f64::total_cmp);
            Some((percentile_sorted(&xs, tail), percentile_sorted(&xs, 1.0 - tail)))
        })
        .collect();
    let grid = panel.grid.map_present(|k, _, x| {
        let (lo, hi) = bounds[k].expect("event has forecasts");
        x.clamp(lo, hi)
    })?;
    panel.with_grid(grid)
}

/// Forecaster indices sorted by ascending δ, ties kept in index order.
pub fn diversity_ordering(sigma: &InformationStructure) -> Vec<usize> {
    let delta = sigma.delta();
    let mut order: Vec<usize> = (0..sigma.n()).collect();
    order.sort_by(|&a, &b| delta[a].total_cmp(&delta[b]));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub max_redraws: usize,
}

impl ExperimentPlan {
    pub fn new(sample_sizes: Vec<usize>, replications: usize, methods: Vec<Method>, seed: u64) -> Self {
        Self {
            sample_sizes,
            replications,
            methods,
            seed,
            max_redraws: DEFAULT_MAX_REDRAWS,
        }
    }

    pub fn validate(&self, panel: &ForecastPanel) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Contract("at least one replication is required".into()));
        }
        if self.sample_sizes.is_empty() || self.methods.is_empty() {
            return Err(Error::Contract("experiment needs sample sizes and methods".into()));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n == 0 || n > panel.n_forecasters()) {
            return Err(Error::Contract(format!(
                "sample size {n} is not between 1 and the {} available forecasters",
                panel.n_forecasters()
            )));
        }
        if let Some(m) = self.methods.iter().find(|m| !m.supports(panel.mode)) {
            return Err(Error::Contract(format!("method {m} does not apply to {} panels", panel.mode)));
        }
        if self.max_redraws == 0 {
            return Err(Error::Contract("max_redraws must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationScore {
    pub method: Method,
    pub n: usize,
    pub replication: usize,
    pub rmse: f64,
    pub events_scored: usize,
    /// κ chosen for the revealed aggregator in this replication.
    pub kappa: Option<f64>,
    pub clamp_count: usize,
    /// Subsamples drawn before one met the overlap rule.
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub mean_rmse: f64,
    /// Standard error of the mean; absent with a single replication.
    pub std_error: Option<f64>,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub mode: Mode,
    pub seed: u64,
    pub percentile_rule: &'static str,
    pub rows: Vec<ReplicationScore>,
    pub summary: Vec<SummaryRow>,
}

fn pairs_overlap(mask: &nalgebra::DMatrix<bool>, chosen: &[usize]) -> bool {
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a..] {
            let common = (0..mask.nrows()).filter(|&k| mask[(k, i)] && mask[(k, j)]).count();
            if common < MIN_COMMON_EVENTS {
                return false;
            }
        }
    }
    true
}

/// Draws `n` forecasters, redrawing until every pair shares enough events.
fn draw_subsample(panel: &ForecastPanel, n: usize, plan: &ExperimentPlan, stream: u64) -> Result<(Vec<usize>, usize)> {
    let mut rng = rng_for(plan.seed, stream);
    for attempt in 1..=plan.max_redraws {
        let mut chosen = index::sample(&mut rng, panel.n_forecasters(), n).into_vec();
        chosen.sort_unstable();
        if pairs_overlap(panel.grid.mask(), &chosen) {
            return Ok((chosen, attempt));
        }
    }
    Err(Error::RedrawExhausted {
        size: n,
        attempts: plan.max_redraws,
    })
}

fn run_replication(
    panel: &ForecastPanel,
    outcomes: &[f64],
    n: usize,
    replication: usize,
    stream: u64,
    plan: &ExperimentPlan,
    config: &FitConfig,
) -> Result<Vec<ReplicationScore>> {
    let (chosen, draws) = draw_subsample(panel, n, plan, stream)?;
    let sub = panel.select_forecasters(&chosen);
    let events: Vec<usize> = (0..sub.n_events()).filter(|&k| !sub.grid.present_in_event(k).is_empty()).collect();
    let sub = sub.select_events(&events);
    let truth: Vec<f64> = events.iter().map(|&k| outcomes[k]).collect();
    let (fit, agg) = pipeline::run(&sub, config, &plan.methods)?;
    let kappa = fit.as_ref().and_then(|f| f.kappa());

    let mut by_method: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for r in &agg.results {
        by_method.entry(r.method).or_default().push(r.value);
    }
    plan.methods
        .iter()
        .map(|&method| {
            let preds = by_method.get(&method).map(Vec::as_slice).unwrap_or(&[]);
            Ok(ReplicationScore {
                method,
                n,
                replication,
                rmse: brier_rmse(preds, &truth)?,
                events_scored: truth.len(),
                kappa: if method == Method::Revealed { kappa } else { None },
                clamp_count: if method == Method::Revealed { agg.clamp_count } else { 0 },
                draws,
            })
        })
        .collect()
}

/// For every sample size and replication: subsample forecasters, aggregate
/// with each method and score against the outcomes. Each (size, replication)
/// pair has its own random stream, so results do not depend on scheduling.
pub fn run_subsample_experiment(panel: &ForecastPanel, plan: &ExperimentPlan, config: &FitConfig) -> Result<EvaluationReport> {
    plan.validate(panel)?;
    let outcomes = panel
        .outcomes
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("evaluation needs outcomes".into()))?;
    let tasks: Vec<(usize, usize, u64)> = plan
        .sample_sizes
        .iter()
        .enumerate()
        .flat_map(|(si, &n)| (0..plan.replications).map(move |r| (n, r, ((si as u64) << 32) | r as u64)))
        .collect();
    let results: Vec<Result<Vec<ReplicationScore>>> = tasks
        .par_iter()
        .map(|&(n, r, stream)| run_replication(panel, outcomes, n, r, stream, plan, config))
        .collect();
    let mut rows = Vec::with_capacity(tasks.len() * plan.methods.len());
    for result in results {
        rows.extend(result?);
    }
    Ok(EvaluationReport {
        mode: panel.mode,
        seed: plan.seed,
        percentile_rule: "linear interpolation between order statistics at (n-1)q",
        summary: summarize(&rows, plan),
        rows,
    })
}

fn summarize(rows: &[ReplicationScore], plan: &ExperimentPlan) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &n in &plan.sample_sizes {
        for &method in &plan.methods {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && r.method == method)
                .map(|r| r.rmse)
                .collect();
            if xs.is_empty() {
                continue;
            }
            let count = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / count;
            let std_error = (xs.len() > 1).then(|| {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
                (var / count).sqrt()
            });
            out.push(SummaryRow {
                method,
                n,
                mean_rmse: mean,
                std_error,
                replications: xs.len(),
            });
        }
    }
    out
}
