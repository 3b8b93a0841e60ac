//! Unconstrained estimates of Σ and of the link parameters from raw panels.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ForecastPanel, LinkModel, MaskedGrid, Mode};
use crate::normal;

pub const DEFAULT_CENSOR_FLOOR: f64 = 0.001;
pub const DEFAULT_CENSOR_CEILING: f64 = 0.999;

/// Probit scores Φ⁻¹(x) of a censored binary panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbitPanel(MaskedGrid);

impl ProbitPanel {
    /// Transforms a binary panel. Every present forecast must lie strictly
    /// inside (0, 1); censor first.
    pub fn from_panel(panel: &ForecastPanel) -> Result<Self> {
        panel.require_mode(Mode::Binary)?;
        for k in 0..panel.n_events() {
            for j in 0..panel.n_forecasters() {
                if let Some(x) = panel.grid.get(k, j) {
                    if x <= 0.0 || x >= 1.0 {
                        return Err(Error::Contract(format!(
                            "forecast {x} at event {k}, forecaster {j} has an infinite probit score; censor the panel first"
                        )));
                    }
                }
            }
        }
        Ok(Self(panel.grid.map_present(|_, _, x| normal::quantile(x))?))
    }

    pub fn from_grid(grid: MaskedGrid) -> Self {
        Self(grid)
    }

    pub fn grid(&self) -> &MaskedGrid {
        &self.0
    }
}

/// Symmetric unconstrained estimate with the number of common events behind each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedEstimate {
    pub s: DMatrix<f64>,
    pub pair_counts: DMatrix<usize>,
}

impl UnconstrainedEstimate {
    pub fn n(&self) -> usize {
        self.s.nrows()
    }
}

/// Clamps present forecasts into [floor, ceiling].
pub fn censor(panel: &ForecastPanel, floor: f64, ceiling: f64) -> Result<ForecastPanel> {
    panel.require_mode(Mode::Binary)?;
    if !(0.0 < floor && floor < ceiling && ceiling < 1.0) {
        return Err(Error::Contract(format!(
            "censoring bounds must satisfy 0 < floor < ceiling < 1, got [{floor}, {ceiling}]"
        )));
    }
    panel.with_grid(panel.grid.map_present(|_, _, x| x.clamp(floor, ceiling))?)
}

/// Pairwise-complete sample covariance with divisor (count − 1).
///
/// Entry (i, j) uses only the events both forecasters answered and centers
/// with means taken over that same set. The diagonal uses each forecaster's
/// own present events.
pub fn pairwise_covariance(grid: &MaskedGrid) -> Result<UnconstrainedEstimate> {
    let n = grid.n_forecasters();
    let k_total = grid.n_events();
    let mut s = DMatrix::zeros(n, n);
    let mut counts = DMatrix::from_element(n, n, 0usize);
    let values = grid.values();
    let mask = grid.mask();
    for i in 0..n {
        for j in i..n {
            let mut count = 0usize;
            let (mut mean_i, mut mean_j) = (0.0, 0.0);
            for k in 0..k_total {
                if mask[(k, i)] && mask[(k, j)] {
                    count += 1;
                    mean_i += values[(k, i)];
                    mean_j += values[(k, j)];
                }
            }
            if count < 2 {
                return Err(Error::InsufficientOverlap {
                    first: i,
                    second: j,
                    common: count,
                });
            }
            mean_i /= count as f64;
            mean_j /= count as f64;
            let mut acc = 0.0;
            for k in 0..k_total {
                if mask[(k, i)] && mask[(k, j)] {
                    acc += (values[(k, i)] - mean_i) * (values[(k, j)] - mean_j);
                }
            }
            let cov = acc / (count - 1) as f64;
            s[(i, j)] = cov;
            s[(j, i)] = cov;
            counts[(i, j)] = count;
            counts[(j, i)] = count;
        }
    }
    Ok(UnconstrainedEstimate {
        s,
        pair_counts: counts,
    })
}

/// Rescales the probit-score covariance S_P into an estimate of Σ:
/// S_ij = √((1 − D_ii)(1 − D_jj)) (S_P)_ij with D_jj = d_j / (1 + d_j),
/// d = diag(S_P). The diagonal becomes d_j / (1 + d_j) ∈ [0, 1).
pub fn probit_sigma(sp: &UnconstrainedEstimate) -> Result<UnconstrainedEstimate> {
    let d = sp.s.diagonal();
    if let Some(bad) = d.iter().position(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Contract(format!(
            "probit variance of forecaster {bad} is {}",
            d[bad]
        )));
    }
    let scale = d.map(|v| (1.0 / (1.0 + v)).sqrt());
    let n = sp.n();
    let mut s = DMatrix::from_fn(n, n, |i, j| scale[i] * scale[j] * sp.s[(i, j)]);
    // Exact form on the diagonal.
    for j in 0..n {
        s[(j, j)] = d[j] / (1.0 + d[j]);
    }
    Ok(UnconstrainedEstimate {
        s,
        pair_counts: sp.pair_counts.clone(),
    })
}

/// Information-variable scores used for conditional validation in binary
/// mode: each forecaster's probit scores are centered on their own mean and
/// scaled by √(1 − D_jj), so their covariance is the rescaled estimate.
pub fn probit_validation_scores(probit: &ProbitPanel, sp: &UnconstrainedEstimate) -> Result<MaskedGrid> {
    let grid = probit.grid();
    let n = grid.n_forecasters();
    let means: Vec<f64> = (0..n)
        .map(|j| {
            let (sum, count) = (0..grid.n_events())
                .filter_map(|k| grid.get(k, j))
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect();
    grid.map_present(|_, j, p| (p - means[j]) / (1.0 + sp.s[(j, j)]).sqrt())
}

/// Initial continuous prior: row means for μ_0k and
/// σ̂_0² = (N + 1)/N · max_j s_j with s_j the spread of forecaster j around
/// the row means. A zero result is returned as a degenerate link.
pub fn continuous_prior(panel: &ForecastPanel) -> Result<LinkModel> {
    panel.require_mode(Mode::Continuous)?;
    let k_total = panel.n_events();
    let n = panel.n_forecasters();
    if k_total < 2 {
        return Err(Error::InsufficientData(format!(
            "continuous prior needs at least 2 events, got {k_total}"
        )));
    }
    let grid = &panel.grid;
    let mut prior_means = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let present: Vec<f64> = (0..n).filter_map(|j| grid.get(k, j)).collect();
        if present.is_empty() {
            return Err(Error::EmptyEvent { event: k });
        }
        prior_means.push(present.iter().sum::<f64>() / present.len() as f64);
    }
    let mut max_spread: f64 = 0.0;
    for j in 0..n {
        let (acc, count) = (0..k_total)
            .filter_map(|k| grid.get(k, j).map(|x| (x - prior_means[k]).powi(2)))
            .fold((0.0, 0usize), |(a, c), v| (a + v, c + 1));
        if count < 2 {
            return Err(Error::InsufficientData(format!(
                "forecaster {} answered {count} events; at least 2 are required",
                panel.forecaster_ids[j]
            )));
        }
        max_spread = max_spread.max(acc / (count - 1) as f64);
    }
    let prior_variance = (n as f64 + 1.0) / n as f64 * max_spread;
    Ok(LinkModel::Continuous {
        prior_means,
        prior_variance,
    })
}

/// Z_jk = (X_jk − μ_0k) / σ_0.
pub fn standardize(panel: &ForecastPanel, link: &LinkModel) -> Result<MaskedGrid> {
    panel.require_mode(Mode::Continuous)?;
    let LinkModel::Continuous {
        prior_means,
        prior_variance,
    } = link
    else {
        return Err(Error::Mode {
            expected: Mode::Continuous,
            found: link.mode(),
        });
    };
    if prior_means.len() != panel.n_events() {
        return Err(Error::LengthMismatch {
            left: prior_means.len(),
            right: panel.n_events(),
        });
    }
    if !(*prior_variance > 0.0) {
        return Err(Error::DegeneratePrior);
    }
    let sd = prior_variance.sqrt();
    panel.grid.map_present(|k, _, x| (x - prior_means[k]) / sd)
}

/// Inverse of [`standardize`]: X_jk = Z_jk σ_0 + μ_0k.
pub fn destandardize(z: &MaskedGrid, link: &LinkModel) -> Result<MaskedGrid> {
    let LinkModel::Continuous {
        prior_means,
        prior_variance,
    } = link
    else {
        return Err(Error::Mode {
            expected: Mode::Continuous,
            found: link.mode(),
        });
    };
    let sd = prior_variance.sqrt();
    z.map_present(|k, _, v| v * sd + prior_means[k])
}
