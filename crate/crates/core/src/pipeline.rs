//! End-to-end fitting and aggregation for binary and continuous panels.

use crate::aggregation::{self, AggregateResult, Method};
use crate::error::{Error, Result};
use crate::estimation::{self, ProbitPanel, UnconstrainedEstimate};
use crate::model::{ForecastPanel, InformationStructure, LinkModel, MaskedGrid, Mode};
use crate::projection::ProjectionConfig;
use crate::validation::{self, KappaSelection};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub censor_floor: f64,
    pub censor_ceiling: f64,
    pub kappa_grid: Vec<f64>,
    /// ε and the iteration budget; its κ is ignored in favour of the grid.
    pub projection: ProjectionConfig,
}

impl FitConfig {
    /// Default censoring and the κ grid customary for `mode`.
    pub fn for_mode(mode: Mode) -> Self {
        let (lo, hi, count) = match mode {
            Mode::Binary => validation::BINARY_GRID,
            Mode::Continuous => validation::CONTINUOUS_GRID,
        };
        Self {
            censor_floor: estimation::DEFAULT_CENSOR_FLOOR,
            censor_ceiling: estimation::DEFAULT_CENSOR_CEILING,
            kappa_grid: validation::kappa_grid(lo, hi, count, true).expect("static grid is valid"),
            projection: ProjectionConfig::with_kappa(1.0).expect("static config is valid"),
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.kappa_grid = grid;
        self
    }
}

/// A fitted model ready to aggregate the panel it was fitted on.
#[derive(Debug, Clone)]
pub struct Fit {
    pub sigma: InformationStructure,
    /// Absent when Σ was supplied or the prior was degenerate.
    pub selection: Option<KappaSelection>,
    /// Rescaled unconstrained estimate the projection started from.
    pub unconstrained: Option<UnconstrainedEstimate>,
    /// Estimated thresholds, or updated prior means with σ̂_0².
    pub link: LinkModel,
    /// Panel the aggregates are computed on (censored in binary mode).
    pub prepared: ForecastPanel,
}

impl Fit {
    pub fn kappa(&self) -> Option<f64> {
        self.selection.as_ref().map(|s| s.chosen)
    }
}

/// Unconstrained Σ estimate of a binary panel: censor, probit, pairwise
/// covariance, rescale. Also returns the validation scores and the probit panel.
pub fn binary_unconstrained(
    panel: &ForecastPanel,
    config: &FitConfig,
) -> Result<(ForecastPanel, ProbitPanel, UnconstrainedEstimate, MaskedGrid)> {
    panel.require_mode(Mode::Binary)?;
    let censored = estimation::censor(panel, config.censor_floor, config.censor_ceiling)?;
    let probit = ProbitPanel::from_panel(&censored)?;
    let sp = estimation::pairwise_covariance(probit.grid())?;
    let s = estimation::probit_sigma(&sp)?;
    let z = estimation::probit_validation_scores(&probit, &sp)?;
    Ok((censored, probit, s, z))
}

/// Estimates Σ with κ chosen by conditional validation, then the link.
pub fn fit(panel: &ForecastPanel, config: &FitConfig) -> Result<Fit> {
    config.projection.validate()?;
    match panel.mode {
        Mode::Binary => {
            let (censored, probit, s, z) = binary_unconstrained(panel, config)?;
            let selection = validation::select_kappa(&s, &z, &config.kappa_grid, &config.projection)?;
            let sigma = selection.projection.sigma.clone();
            let thresholds = answered_thresholds(&probit, &sigma)?;
            Ok(Fit {
                sigma,
                selection: Some(selection),
                unconstrained: Some(s),
                link: LinkModel::Binary { thresholds },
                prepared: censored,
            })
        }
        Mode::Continuous => {
            let answered = answered_events(&panel.grid);
            let panel_answered = panel.select_events(&answered);
            let prior = estimation::continuous_prior(&panel_answered)?;
            if prior.is_degenerate() {
                log::warn!("every forecaster agrees with the event means; the prior variance is zero");
                let n = panel.n_forecasters();
                let sigma = InformationStructure::new(nalgebra::DMatrix::zeros(n, n))?;
                return Ok(Fit {
                    sigma,
                    selection: None,
                    unconstrained: None,
                    link: spread_link(prior, &answered, panel.n_events()),
                    prepared: panel.clone(),
                });
            }
            let z = estimation::standardize(&panel_answered, &prior)?;
            let s = estimation::pairwise_covariance(&z)?;
            let selection = validation::select_kappa(&s, &z, &config.kappa_grid, &config.projection)?;
            let sigma = selection.projection.sigma.clone();
            let link = spread_link(updated_link(&panel_answered, &sigma, &prior)?, &answered, panel.n_events());
            Ok(Fit {
                sigma,
                selection: Some(selection),
                unconstrained: Some(s),
                link,
                prepared: panel.clone(),
            })
        }
    }
}

/// Events with at least one present forecast.
fn answered_events(grid: &MaskedGrid) -> Vec<usize> {
    (0..grid.n_events()).filter(|&k| !grid.present_in_event(k).is_empty()).collect()
}

/// Places per-event parameters estimated on the answered events back at
/// their positions. Unanswered events are never aggregated; they get the
/// mean of the others so the link stays finite.
fn spread_values(values: Vec<f64>, answered: &[usize], total: usize) -> Vec<f64> {
    let fill = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let mut out = vec![fill; total];
    for (&k, v) in answered.iter().zip(values) {
        out[k] = v;
    }
    out
}

fn spread_link(link: LinkModel, answered: &[usize], total: usize) -> LinkModel {
    match link {
        LinkModel::Binary { thresholds } => LinkModel::Binary {
            thresholds: spread_values(thresholds, answered, total),
        },
        LinkModel::Continuous {
            prior_means,
            prior_variance,
        } => LinkModel::Continuous {
            prior_means: spread_values(prior_means, answered, total),
            prior_variance,
        },
    }
}

fn answered_thresholds(probit: &ProbitPanel, sigma: &InformationStructure) -> Result<Vec<f64>> {
    let answered = answered_events(probit.grid());
    let subset = ProbitPanel::from_grid(probit.grid().select_events(&answered));
    let thresholds = aggregation::estimate_thresholds(&subset, sigma)?;
    Ok(spread_values(thresholds, &answered, probit.grid().n_events()))
}

fn updated_link(panel: &ForecastPanel, sigma: &InformationStructure, prior: &LinkModel) -> Result<LinkModel> {
    let LinkModel::Continuous { prior_variance, .. } = prior else {
        unreachable!("continuous prior");
    };
    Ok(LinkModel::Continuous {
        prior_means: aggregation::update_prior_means(panel, sigma)?,
        prior_variance: *prior_variance,
    })
}

/// Builds a fit around a known Σ, estimating only the link.
pub fn fit_with_sigma(panel: &ForecastPanel, sigma: InformationStructure, config: &FitConfig) -> Result<Fit> {
    if sigma.n() != panel.n_forecasters() {
        return Err(Error::LengthMismatch {
            left: sigma.n(),
            right: panel.n_forecasters(),
        });
    }
    match panel.mode {
        Mode::Binary => {
            let censored = estimation::censor(panel, config.censor_floor, config.censor_ceiling)?;
            let probit = ProbitPanel::from_panel(&censored)?;
            let thresholds = answered_thresholds(&probit, &sigma)?;
            Ok(Fit {
                sigma,
                selection: None,
                unconstrained: None,
                link: LinkModel::Binary { thresholds },
                prepared: censored,
            })
        }
        Mode::Continuous => {
            let answered = answered_events(&panel.grid);
            let panel_answered = panel.select_events(&answered);
            let prior = estimation::continuous_prior(&panel_answered)?;
            let link = spread_link(updated_link(&panel_answered, &sigma, &prior)?, &answered, panel.n_events());
            Ok(Fit {
                sigma,
                selection: None,
                unconstrained: None,
                link,
                prepared: panel.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    /// Event-major, methods in the requested order. Events without forecasts are skipped.
    pub results: Vec<AggregateResult>,
    /// Revealed aggregates whose conditional variance was clamped.
    pub clamp_count: usize,
}

fn revealed(fit: &Fit) -> Result<Vec<Option<AggregateResult>>> {
    let panel = &fit.prepared;
    let probit = match panel.mode {
        Mode::Binary => Some(ProbitPanel::from_panel(panel)?),
        Mode::Continuous => None,
    };
    (0..panel.n_events())
        .map(|k| {
            let idx = panel.grid.present_in_event(k);
            if idx.is_empty() {
                return Ok(None);
            }
            let (value, diagnostics) = match (&fit.link, &probit) {
                (LinkModel::Binary { thresholds }, Some(p)) => {
                    let scores: Vec<f64> = idx.iter().map(|&j| p.grid().values()[(k, j)]).collect();
                    let (v, d) = aggregation::reveal_binary(&fit.sigma, &idx, &scores, thresholds[k])?;
                    (v, Some(d))
                }
                (
                    LinkModel::Continuous {
                        prior_means,
                        prior_variance,
                    },
                    None,
                ) => {
                    if *prior_variance > 0.0 {
                        let x: Vec<f64> = idx.iter().map(|&j| panel.grid.values()[(k, j)]).collect();
                        let (v, d) =
                            aggregation::reveal_continuous(&fit.sigma, &idx, &x, prior_means[k], *prior_variance)?;
                        (v, Some(d))
                    } else {
                        (prior_means[k], None)
                    }
                }
                _ => {
                    return Err(Error::Mode {
                        expected: panel.mode,
                        found: fit.link.mode(),
                    })
                }
            };
            Ok(Some(AggregateResult {
                event_id: panel.event_ids[k].clone(),
                method: Method::Revealed,
                value,
                diagnostics,
            }))
        })
        .collect()
}

/// Aggregates every event of the fitted panel with each of `methods`.
pub fn aggregate(fit: &Fit, methods: &[Method]) -> Result<Aggregation> {
    let panel = &fit.prepared;
    if let Some(m) = methods.iter().find(|m| !m.supports(panel.mode)) {
        return Err(Error::Contract(format!("method {m} does not apply to {} panels", panel.mode)));
    }
    let mut per_method: Vec<Vec<Option<AggregateResult>>> = Vec::with_capacity(methods.len());
    for &method in methods {
        let column = if method == Method::Revealed {
            revealed(fit)?
        } else {
            let mut column = Vec::with_capacity(panel.n_events());
            for k in 0..panel.n_events() {
                let idx = panel.grid.present_in_event(k);
                if idx.is_empty() {
                    column.push(None);
                    continue;
                }
                let x: Vec<f64> = idx.iter().map(|&j| panel.grid.values()[(k, j)]).collect();
                column.push(Some(AggregateResult {
                    event_id: panel.event_ids[k].clone(),
                    method,
                    value: aggregation::aggregate_baseline(panel.mode, method, &x)?,
                    diagnostics: None,
                }));
            }
            column
        };
        per_method.push(column);
    }
    let mut results = Vec::new();
    for k in 0..panel.n_events() {
        for column in &per_method {
            if let Some(r) = &column[k] {
                results.push(r.clone());
            }
        }
    }
    let clamp_count = results
        .iter()
        .filter(|r| r.diagnostics.as_ref().is_some_and(|d| d.clamped))
        .count();
    Ok(Aggregation { results, clamp_count })
}

/// Fits only when the revealed aggregator is requested; baselines need no model.
pub fn run(panel: &ForecastPanel, config: &FitConfig, methods: &[Method]) -> Result<(Option<Fit>, Aggregation)> {
    if methods.contains(&Method::Revealed) {
        let fit = fit(panel, config)?;
        let agg = aggregate(&fit, methods)?;
        Ok((Some(fit), agg))
    } else {
        let prepared = match panel.mode {
            Mode::Binary => estimation::censor(panel, config.censor_floor, config.censor_ceiling)?,
            Mode::Continuous => panel.clone(),
        };
        let n = panel.n_forecasters();
        let placeholder = Fit {
            sigma: InformationStructure::new(nalgebra::DMatrix::zeros(n, n))?,
            selection: None,
            unconstrained: None,
            link: match panel.mode {
                Mode::Binary => LinkModel::binary_constant(0.0, panel.n_events()),
                Mode::Continuous => LinkModel::Continuous {
                    prior_means: vec![0.0; panel.n_events()],
                    prior_variance: 0.0,
                },
            },
            prepared,
        };
        Ok((None, aggregate(&placeholder, methods)?))
    }
}
