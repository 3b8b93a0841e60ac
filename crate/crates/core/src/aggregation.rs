//! Revealed aggregation and the measurement-error baselines.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::ProbitPanel;
use crate::linalg;
use crate::model::{ForecastPanel, InformationStructure, MaskedGrid, Mode};
use crate::normal;

/// Cap applied to δ_j before inverting the binary forecast map.
pub const DELTA_CAP: f64 = 1.0 - 1e-6;
/// Forecasters at or below this information level carry no signal beyond the prior.
pub const ZERO_INFORMATION: f64 = 1e-12;
pub const MIN_CONDITIONAL_VARIANCE: f64 = 1e-12;
/// Conditional variances below −this are treated as incoherence rather than rounding.
const NEGATIVE_VARIANCE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Revealed,
    MeanProb,
    MedianProb,
    ProbitMean,
    LogoddsMean,
    Mean,
    Median,
    Ama,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Revealed,
        Method::MeanProb,
        Method::MedianProb,
        Method::ProbitMean,
        Method::LogoddsMean,
        Method::Mean,
        Method::Median,
        Method::Ama,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Revealed => "revealed",
            Method::MeanProb => "mean-prob",
            Method::MedianProb => "median-prob",
            Method::ProbitMean => "probit-mean",
            Method::LogoddsMean => "logodds-mean",
            Method::Mean => "mean",
            Method::Median => "median",
            Method::Ama => "ama",
        }
    }

    /// Whether the method applies to panels of the given mode.
    pub fn supports(self, mode: Mode) -> bool {
        match self {
            Method::Revealed => true,
            Method::MeanProb | Method::MedianProb | Method::ProbitMean | Method::LogoddsMean => {
                mode == Mode::Binary
            }
            Method::Mean | Method::Median | Method::Ama => mode == Mode::Continuous,
        }
    }

    /// The revealed aggregator followed by every baseline for `mode`.
    pub fn defaults_for(mode: Mode) -> Vec<Method> {
        Self::ALL.into_iter().filter(|m| m.supports(mode)).collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.trim())
            .ok_or_else(|| Error::Contract(format!("unknown aggregation method '{s}'")))
    }
}

/// Per-event diagnostics of a revealed aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevealedDiagnostics {
    /// (forecaster index, weight) of diag(Σ)'Σ⁻¹ over informative present forecasters.
    pub weights: Vec<(usize, f64)>,
    pub conditional_variance: f64,
    /// Threshold t_k in binary mode, prior mean μ_0k in continuous mode.
    pub reference: f64,
    /// Whether the conditional variance had to be clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub event_id: String,
    pub method: Method,
    pub value: f64,
    pub diagnostics: Option<RevealedDiagnostics>,
}

fn present_entries(grid: &MaskedGrid, event: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let idx = grid.present_in_event(event);
    if idx.is_empty() {
        return Err(Error::EmptyEvent { event });
    }
    let values = idx.iter().map(|&j| grid.values()[(event, j)]).collect();
    Ok((idx, values))
}

fn check_observed(sigma: &InformationStructure, idx: &[usize], values: &[f64]) -> Result<()> {
    if idx.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: idx.len(),
            right: values.len(),
        });
    }
    if idx.is_empty() {
        return Err(Error::Contract("no forecasts for this event".into()));
    }
    if let Some(&j) = idx.iter().find(|&&j| j >= sigma.n()) {
        return Err(Error::Contract(format!("forecaster index {j} out of range")));
    }
    Ok(())
}

/// Precision-weighted mean 1'Σ⁻¹y / 1'Σ⁻¹1 over the observed forecasters.
/// Forecasters with no information observe the prior exactly, so when any
/// are present the estimate is their plain average.
fn precision_weighted_mean(sigma: &InformationStructure, idx: &[usize], y: &[f64]) -> Result<f64> {
    let delta = sigma.delta();
    let exact: Vec<f64> = idx
        .iter()
        .zip(y)
        .filter(|(&j, _)| delta[j] <= ZERO_INFORMATION)
        .map(|(_, &v)| v)
        .collect();
    if !exact.is_empty() {
        return Ok(exact.iter().sum::<f64>() / exact.len() as f64);
    }
    let sub = linalg::submatrix(sigma.matrix(), idx);
    let w = linalg::spd_solve(&sub, &DMatrix::from_element(idx.len(), 1, 1.0), idx)?;
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical(format!("precision weights sum to {total}")));
    }
    Ok(w.iter().zip(y).map(|(wi, yi)| wi * yi).sum::<f64>() / total)
}

/// t̂_k = −P_k' Diag(1 − δ)^{1/2} Σ⁻¹ 1 / 1'Σ⁻¹1, with Σ restricted to the
/// forecasters present on event k.
pub fn estimate_thresholds(p: &ProbitPanel, sigma: &InformationStructure) -> Result<Vec<f64>> {
    let grid = p.grid();
    if grid.n_forecasters() != sigma.n() {
        return Err(Error::LengthMismatch {
            left: grid.n_forecasters(),
            right: sigma.n(),
        });
    }
    let delta = sigma.delta();
    (0..grid.n_events())
        .map(|k| {
            let (idx, probits) = present_entries(grid, k)?;
            let shifted: Vec<f64> = idx
                .iter()
                .zip(&probits)
                .map(|(&j, &pj)| -(1.0 - delta[j].clamp(0.0, DELTA_CAP)).sqrt() * pj)
                .collect();
            precision_weighted_mean(sigma, &idx, &shifted)
        })
        .collect()
}

/// Weights v solving Σ_OO v = δ_O over the informative observed forecasters,
/// with the conditional variance 1 − v'δ_O.
fn revealed_weights(sigma: &InformationStructure, idx: &[usize]) -> Result<(Vec<usize>, DVector<f64>, f64)> {
    let delta = sigma.delta();
    let informative: Vec<usize> = idx.iter().copied().filter(|&j| delta[j] > ZERO_INFORMATION).collect();
    if informative.is_empty() {
        return Ok((informative, DVector::zeros(0), 1.0));
    }
    let sub = linalg::submatrix(sigma.matrix(), &informative);
    let d = DMatrix::from_iterator(informative.len(), 1, informative.iter().map(|&j| delta[j]));
    let v = linalg::spd_solve(&sub, &d, &informative)?;
    let explained: f64 = v.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
    Ok((informative, v.column(0).into_owned(), 1.0 - explained))
}

fn clamp_variance(variance: f64) -> Result<(f64, bool)> {
    if variance < -NEGATIVE_VARIANCE_SLACK || variance.is_nan() {
        return Err(Error::Incoherent {
            min_eigenvalue: variance,
        });
    }
    let clamped = variance.clamp(MIN_CONDITIONAL_VARIANCE, 1.0);
    Ok((clamped, clamped != variance))
}

/// Revealed probability Φ((v'Z − t)/√(1 − v'δ)) for one event. `idx` lists
/// the present forecasters and `probits` their probit scores; Z is recovered
/// as √(1 − δ_j) P_j + t.
pub fn reveal_binary(
    sigma: &InformationStructure,
    idx: &[usize],
    probits: &[f64],
    threshold: f64,
) -> Result<(f64, RevealedDiagnostics)> {
    check_observed(sigma, idx, probits)?;
    let delta = sigma.delta();
    let (informative, v, variance) = revealed_weights(sigma, idx)?;
    let (variance, clamped) = clamp_variance(variance)?;
    let mut mean = 0.0;
    for (a, &j) in informative.iter().enumerate() {
        let pos = idx.iter().position(|&i| i == j).expect("informative forecasters are observed");
        let z = (1.0 - delta[j].min(DELTA_CAP)).sqrt() * probits[pos] + threshold;
        mean += v[a] * z;
    }
    let value = normal::cdf((mean - threshold) / variance.sqrt());
    Ok((
        value,
        RevealedDiagnostics {
            weights: informative.into_iter().zip(v.iter().copied()).collect(),
            conditional_variance: variance,
            reference: threshold,
            clamped,
        },
    ))
}

/// Revealed point forecast v'Z σ_0 + μ_0 with Z_j = (X_j − μ_0)/σ_0.
pub fn reveal_continuous(
    sigma: &InformationStructure,
    idx: &[usize],
    forecasts: &[f64],
    prior_mean: f64,
    prior_variance: f64,
) -> Result<(f64, RevealedDiagnostics)> {
    check_observed(sigma, idx, forecasts)?;
    if !(prior_variance > 0.0) {
        return Err(Error::DegeneratePrior);
    }
    let sd = prior_variance.sqrt();
    let (informative, v, variance) = revealed_weights(sigma, idx)?;
    let (variance, clamped) = clamp_variance(variance)?;
    let mut mean = 0.0;
    for (a, &j) in informative.iter().enumerate() {
        let pos = idx.iter().position(|&i| i == j).expect("informative forecasters are observed");
        mean += v[a] * (forecasts[pos] - prior_mean) / sd;
    }
    Ok((
        mean * sd + prior_mean,
        RevealedDiagnostics {
            weights: informative.into_iter().zip(v.iter().copied()).collect(),
            conditional_variance: variance,
            reference: prior_mean,
            clamped,
        },
    ))
}

/// μ̂_0k = X_k'Σ⁻¹1 / 1'Σ⁻¹1 per event, Σ restricted to present forecasters.
pub fn update_prior_means(panel: &ForecastPanel, sigma: &InformationStructure) -> Result<Vec<f64>> {
    panel.require_mode(Mode::Continuous)?;
    if panel.n_forecasters() != sigma.n() {
        return Err(Error::LengthMismatch {
            left: panel.n_forecasters(),
            right: sigma.n(),
        });
    }
    (0..panel.n_events())
        .map(|k| {
            let (idx, x) = present_entries(&panel.grid, k)?;
            precision_weighted_mean(sigma, &idx, &x)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample median; the midpoint of the two central values for even counts.
pub fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Measurement-error aggregate of the present forecasts of one event.
pub fn aggregate_baseline(mode: Mode, method: Method, forecasts: &[f64]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::Contract("baseline aggregation of zero forecasts".into()));
    }
    if method == Method::Revealed || !method.supports(mode) {
        return Err(Error::Contract(format!("{method} is not a {mode} baseline")));
    }
    if let Some(bad) = forecasts.iter().find(|x| !x.is_finite()) {
        return Err(Error::Contract(format!("forecast {bad} is not finite")));
    }
    if mode == Mode::Binary {
        let open = matches!(method, Method::ProbitMean | Method::LogoddsMean);
        let ok = |x: f64| if open { x > 0.0 && x < 1.0 } else { (0.0..=1.0).contains(&x) };
        if let Some(bad) = forecasts.iter().find(|&&x| !ok(x)) {
            return Err(Error::Contract(format!("probability {bad} is out of range for {method}")));
        }
    }
    let value = match method {
        Method::MeanProb | Method::Mean => mean(forecasts),
        Method::MedianProb | Method::Median => median(forecasts),
        Method::ProbitMean => {
            let scores: Vec<f64> = forecasts.iter().map(|&x| normal::quantile(x)).collect();
            normal::cdf(mean(&scores))
        }
        Method::LogoddsMean => {
            let scores: Vec<f64> = forecasts.iter().map(|&x| normal::logit(x)).collect();
            normal::logistic(mean(&scores))
        }
        Method::Ama => 0.5 * (mean(forecasts) + median(forecasts)),
        Method::Revealed => unreachable!(),
    };
    // Every baseline is a mean of some kind and lies in the inputs' range.
    // Rounding in the score transforms can step a few ulps outside; clamping
    // back also makes unanimous inputs come out exactly.
    let lo = forecasts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = forecasts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(value.clamp(lo, hi))
}

/// Applies a baseline to every event of a panel. Events with no forecasts are skipped.
pub fn baseline_panel(panel: &ForecastPanel, method: Method) -> Result<Vec<AggregateResult>> {
    let mut out = Vec::with_capacity(panel.n_events());
    for k in 0..panel.n_events() {
        let idx = panel.grid.present_in_event(k);
        if idx.is_empty() {
            continue;
        }
        let values: Vec<f64> = idx.iter().map(|&j| panel.grid.values()[(k, j)]).collect();
        out.push(AggregateResult {
            event_id: panel.event_ids[k].clone(),
            method,
            value: aggregate_baseline(panel.mode, method, &values)?,
            diagnostics: None,
        });
    }
    Ok(out)
}
