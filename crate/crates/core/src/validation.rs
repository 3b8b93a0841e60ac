//! Conditional validation: choose κ by how well each forecaster's information
//! variable is predicted from everyone else's under the projected Σ.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::UnconstrainedEstimate;
use crate::linalg;
use crate::model::{InformationStructure, MaskedGrid};
use crate::projection::{project_lse, ProjectionConfig, ProjectionOutcome};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Number of κ candidates in the grid used for binary panels.
pub const BINARY_GRID: (f64, f64, usize) = (10.0, 1_000.0, 100);
/// Number of κ candidates in the grid used for continuous panels.
pub const CONTINUOUS_GRID: (f64, f64, usize) = (10.0, 10_000.0, 10);

fn log_density(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (LN_2PI + variance.ln()) - (x - mean).powi(2) / (2.0 * variance)
}

fn check_shapes(sigma: &InformationStructure, z: &MaskedGrid) -> Result<()> {
    if sigma.n() != z.n_forecasters() {
        return Err(Error::LengthMismatch {
            left: sigma.n(),
            right: z.n_forecasters(),
        });
    }
    Ok(())
}

/// Σ_k log N(Z_jk; Σ_{j,O} Σ_{O,O}⁻¹ Z_{O,k}, δ_j − Σ_{j,O} Σ_{O,O}⁻¹ Σ_{O,j}),
/// where O is the set of other forecasters present on event k. Events that
/// `forecaster` skipped contribute nothing.
pub fn conditional_loglik(sigma: &InformationStructure, z: &MaskedGrid, forecaster: usize) -> Result<f64> {
    check_shapes(sigma, z)?;
    if forecaster >= sigma.n() {
        return Err(Error::Contract(format!("forecaster index {forecaster} out of range")));
    }
    let m = sigma.matrix();
    let mut total = 0.0;
    for k in 0..z.n_events() {
        let Some(target) = z.get(k, forecaster) else {
            continue;
        };
        let others: Vec<usize> = z
            .present_in_event(k)
            .into_iter()
            .filter(|&i| i != forecaster)
            .collect();
        let (mean, variance) = if others.is_empty() {
            (0.0, m[(forecaster, forecaster)])
        } else {
            let cross = DMatrix::from_iterator(others.len(), 1, others.iter().map(|&i| m[(i, forecaster)]));
            let w = linalg::spd_solve(&linalg::submatrix(m, &others), &cross, &others)?;
            let mean: f64 = others.iter().zip(w.iter()).map(|(&i, wi)| wi * z.values()[(k, i)]).sum();
            let explained: f64 = cross.iter().zip(w.iter()).map(|(c, wi)| c * wi).sum();
            (mean, m[(forecaster, forecaster)] - explained)
        };
        if !(variance > 0.0) {
            return Err(Error::NonPositiveVariance {
                forecaster,
                variance,
            });
        }
        total += log_density(target, mean, variance);
    }
    Ok(total)
}

/// Σ_j of [`conditional_loglik`], computed once per missingness pattern via
/// the precision matrix: given the rest, Z_j has variance 1/Q_jj and mean
/// Z_j − (QZ)_j / Q_jj.
pub fn total_conditional_loglik(sigma: &InformationStructure, z: &MaskedGrid) -> Result<f64> {
    check_shapes(sigma, z)?;
    let mut precisions: HashMap<Vec<usize>, DMatrix<f64>> = HashMap::new();
    let mut total = 0.0;
    for k in 0..z.n_events() {
        let present = z.present_in_event(k);
        if present.is_empty() {
            continue;
        }
        if !precisions.contains_key(&present) {
            let sub = linalg::submatrix(sigma.matrix(), &present);
            let q = linalg::spd_solve(&sub, &DMatrix::identity(present.len(), present.len()), &present)?;
            precisions.insert(present.clone(), q);
        }
        let q = &precisions[&present];
        let zk = DVector::from_iterator(present.len(), present.iter().map(|&j| z.values()[(k, j)]));
        let qz = q * &zk;
        for (a, &j) in present.iter().enumerate() {
            let qjj = q[(a, a)];
            if !(qjj > 0.0) {
                return Err(Error::NonPositiveVariance {
                    forecaster: j,
                    variance: 1.0 / qjj,
                });
            }
            let variance = 1.0 / qjj;
            let mean = zk[a] - qz[a] / qjj;
            total += log_density(zk[a], mean, variance);
        }
    }
    Ok(total)
}

/// Candidate κ values: `count` points from `min` to `max`, geometric when `log` is set.
pub fn kappa_grid(min: f64, max: f64, count: usize, log: bool) -> Result<Vec<f64>> {
    if count == 0 || !(min >= 1.0) || !(max >= min) || !max.is_finite() {
        return Err(Error::Contract(format!(
            "kappa grid needs 1 <= min <= max and count >= 1, got min={min} max={max} count={count}"
        )));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let steps = (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            let t = i as f64 / steps;
            if i == 0 {
                min
            } else if i == count - 1 {
                max
            } else if log {
                (min.ln() + t * (max.ln() - min.ln())).exp()
            } else {
                min + t * (max - min)
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct KappaSelection {
    pub grid: Vec<f64>,
    /// Total conditional log-likelihood per candidate; `None` where the
    /// projection or scoring failed.
    pub scores: Vec<Option<f64>>,
    pub chosen: f64,
    pub chosen_index: usize,
    /// Projection at the chosen κ.
    pub projection: ProjectionOutcome,
}

/// Projects `s` at every κ in `grid`, scores each result by conditional
/// validation on `z`, and keeps the best (smallest κ among ties).
pub fn select_kappa(
    s: &UnconstrainedEstimate,
    z: &MaskedGrid,
    grid: &[f64],
    base: &ProjectionConfig,
) -> Result<KappaSelection> {
    if grid.is_empty() {
        return Err(Error::Contract("kappa grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|&&k| !(k >= 1.0)) {
        return Err(Error::Contract(format!("kappa candidate {bad} is below 1")));
    }
    let evaluated: Vec<Result<(ProjectionOutcome, f64)>> = grid
        .par_iter()
        .map(|&kappa| {
            let config = ProjectionConfig { kappa, ..*base };
            let outcome = project_lse(&s.s, &config)?;
            let score = total_conditional_loglik(&outcome.sigma, z)?;
            if !score.is_finite() {
                return Err(Error::Numerical(format!("score at kappa {kappa} is {score}")));
            }
            Ok((outcome, score))
        })
        .collect();

    let mut best: Option<usize> = None;
    let mut last_error = None;
    let mut scores = Vec::with_capacity(grid.len());
    for (i, result) in evaluated.iter().enumerate() {
        match result {
            Ok((_, score)) => {
                scores.push(Some(*score));
                let better = match best {
                    None => true,
                    Some(b) => {
                        let incumbent = evaluated[b].as_ref().map(|r| r.1).unwrap_or(f64::NEG_INFINITY);
                        *score > incumbent || (*score == incumbent && grid[i] < grid[b])
                    }
                };
                if better {
                    best = Some(i);
                }
            }
            Err(e) => {
                if matches!(e, Error::InfeasibleKappa { .. }) {
                    log::debug!("kappa candidate {} skipped: {e}", grid[i]);
                } else {
                    log::warn!("kappa candidate {} skipped: {e}", grid[i]);
                }
                scores.push(None);
                last_error = Some(e.clone());
            }
        }
    }
    let Some(chosen_index) = best else {
        return Err(Error::AllCandidatesFailed {
            last: Box::new(last_error.unwrap_or_else(|| Error::Numerical("no candidates".into()))),
        });
    };
    let projection = evaluated
        .into_iter()
        .nth(chosen_index)
        .and_then(|r| r.ok())
        .map(|(p, _)| p)
        .expect("chosen candidate succeeded");
    Ok(KappaSelection {
        grid: grid.to_vec(),
        scores,
        chosen: grid[chosen_index],
        chosen_index,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn structure(rows: &[&[f64]]) -> InformationStructure {
        let n = rows.len();
        InformationStructure::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn independent_structure_reduces_to_marginal() {
        let sigma = structure(&[&[0.3, 0.0], &[0.0, 0.6]]);
        let z = MaskedGrid::complete(DMatrix::from_row_slice(3, 2, &[0.5, -0.2, -1.0, 0.4, 0.1, 0.9])).unwrap();
        let want: f64 = [0.5f64, -1.0, 0.1]
            .iter()
            .map(|&x| -0.5 * (2.0 * std::f64::consts::PI * 0.3).ln() - x * x / (2.0 * 0.3))
            .sum();
        assert!((conditional_loglik(&sigma, &z, 0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn exchangeable_pair_hand_case() {
        let sigma = structure(&[&[0.5, 0.25], &[0.25, 0.5]]);
        let z = MaskedGrid::complete(DMatrix::from_row_slice(1, 2, &[0.6, 0.2])).unwrap();
        // mean 0.5 · 0.2 = 0.1, variance 0.5 − 0.125 = 0.375
        let want = -0.5 * (2.0 * std::f64::consts::PI * 0.375).ln() - 0.25 / (2.0 * 0.375);
        assert!((conditional_loglik(&sigma, &z, 0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn absent_events_contribute_nothing() {
        let sigma = structure(&[&[0.5, 0.25], &[0.25, 0.5]]);
        let values = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.0, 0.7]);
        let mask = DMatrix::from_row_slice(2, 2, &[true, true, false, true]);
        let z = MaskedGrid::new(values, mask).unwrap();
        let single = MaskedGrid::complete(DMatrix::from_row_slice(1, 2, &[0.6, 0.2])).unwrap();
        assert_eq!(
            conditional_loglik(&sigma, &z, 0).unwrap(),
            conditional_loglik(&sigma, &single, 0).unwrap()
        );
    }

    #[test]
    fn precision_route_matches_direct_route() {
        let sigma = structure(&[&[0.6, 0.2, 0.1], &[0.2, 0.4, 0.05], &[0.1, 0.05, 0.3]]);
        let values = DMatrix::from_row_slice(4, 3, &[0.3, -0.1, 0.4, 1.0, 0.2, -0.5, -0.7, 0.0, 0.2, 0.1, 0.3, 0.0]);
        let mask = DMatrix::from_row_slice(4, 3, &[true, true, true, true, false, true, true, true, true, false, false, true]);
        let z = MaskedGrid::new(values, mask).unwrap();
        let direct: f64 = (0..3).map(|j| conditional_loglik(&sigma, &z, j).unwrap()).sum();
        let total = total_conditional_loglik(&sigma, &z).unwrap();
        assert!((direct - total).abs() < 1e-12, "{direct} vs {total}");
    }

    #[test]
    fn incoherent_structure_surfaces_error() {
        // Conditional variance of forecaster 0 given 1 is 0.1 − 0.5²/0.5 < 0;
        // the Cholesky of the full 2×2 already fails.
        let sigma = structure(&[&[0.1, 0.5], &[0.5, 0.5]]);
        let z = MaskedGrid::complete(DMatrix::from_row_slice(1, 2, &[0.1, 0.2])).unwrap();
        assert!(matches!(
            conditional_loglik(&sigma, &z, 0),
            Err(Error::NonPositiveVariance { .. })
        ));
    }

    #[test]
    fn grids() {
        let g = kappa_grid(10.0, 1000.0, 3, true).unwrap();
        assert!((g[1] - 100.0).abs() < 1e-9);
        assert_eq!(g[2], 1000.0);
        assert_eq!(kappa_grid(10.0, 1000.0, 1, true).unwrap(), vec![10.0]);
        assert_eq!(kappa_grid(10.0, 20.0, 3, false).unwrap(), vec![10.0, 15.0, 20.0]);
        assert!(kappa_grid(0.5, 10.0, 3, true).is_err());
        let paper = kappa_grid(BINARY_GRID.0, BINARY_GRID.1, BINARY_GRID.2, true).unwrap();
        assert_eq!(paper.len(), 100);
        assert_eq!((paper[0], paper[99]), (10.0, 1000.0));
    }

    #[test]
    fn single_candidate_is_chosen() {
        let s = UnconstrainedEstimate {
            s: DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.4]),
            pair_counts: DMatrix::from_element(2, 2, 3),
        };
        let z = MaskedGrid::complete(DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.5, -0.1, 0.9, 0.4])).unwrap();
        let base = ProjectionConfig::with_kappa(1.0).unwrap();
        let sel = select_kappa(&s, &z, &[42.0], &base).unwrap();
        assert_eq!(sel.chosen, 42.0);
        assert_eq!(sel.scores.len(), 1);
    }
}
