//! Synthetic panels drawn from the Gaussian model.
//!
//! Randomness comes from ChaCha8 streams and Gaussians are produced by
//! inverting Φ on 53-bit uniforms, so a seed reproduces the same panel on
//! every platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    coherence_margin, extend, ForecastPanel, InformationStructure, LinkModel, MaskedGrid, Mode,
    COHERENCE_TOL,
};
use crate::normal;

/// Deterministic generator for a (seed, stream) pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval (0, 1) with 53 bits of resolution.
pub fn open_uniform<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    normal::quantile(open_uniform(rng))
}

/// A simulated panel together with the latent draws that produced it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: ForecastPanel,
    /// Z_0k per event.
    pub z0: Vec<f64>,
    /// Z_jk, K×N.
    pub z: DMatrix<f64>,
}

/// Draws `n_events` i.i.d. events from the model with information structure
/// `sigma` and maps them through `link`. Outcomes are attached to the panel.
pub fn simulate_panel(
    sigma: &InformationStructure,
    link: &LinkModel,
    n_events: usize,
    seed: u64,
) -> Result<Simulation> {
    if n_events == 0 {
        return Err(Error::Contract("at least one event is required".into()));
    }
    if link.n_events() != n_events {
        return Err(Error::LengthMismatch {
            left: link.n_events(),
            right: n_events,
        });
    }
    link.validate()?;
    let margin = coherence_margin(sigma)?;
    if margin < -COHERENCE_TOL {
        return Err(Error::Incoherent {
            min_eigenvalue: margin,
        });
    }
    let delta = sigma.delta();
    if delta.iter().any(|&d| d > 1.0 + COHERENCE_TOL) {
        return Err(Error::Contract("information levels must not exceed 1".into()));
    }

    let n = sigma.n();
    let factor = linalg::semidefinite_cholesky(extend(sigma).matrix(), 1e-13)?;
    let mut rng = rng_for(seed, 0);
    let mut z0 = Vec::with_capacity(n_events);
    let mut z = DMatrix::zeros(n_events, n);
    let mut draw = DVector::zeros(n + 1);
    for k in 0..n_events {
        for v in draw.iter_mut() {
            *v = standard_normal(&mut rng);
        }
        let latent = &factor * &draw;
        z0.push(latent[0]);
        for j in 0..n {
            z[(k, j)] = latent[j + 1];
        }
    }

    let (values, outcomes) = match link {
        LinkModel::Binary { thresholds } => {
            let values = DMatrix::from_fn(n_events, n, |k, j| {
                binary_forecast(z[(k, j)], thresholds[k], delta[j])
            });
            let outcomes = (0..n_events)
                .map(|k| if z0[k] > thresholds[k] { 1.0 } else { 0.0 })
                .collect();
            (values, outcomes)
        }
        LinkModel::Continuous {
            prior_means,
            prior_variance,
        } => {
            let sd = prior_variance.sqrt();
            let values = DMatrix::from_fn(n_events, n, |k, j| sd * z[(k, j)] + prior_means[k]);
            let outcomes = (0..n_events).map(|k| sd * z0[k] + prior_means[k]).collect();
            (values, outcomes)
        }
    };
    let panel = ForecastPanel::with_default_ids(
        link.mode(),
        MaskedGrid::complete(values)?,
        Some(outcomes),
    )?;
    Ok(Simulation { panel, z0, z })
}

/// Calibrated probability forecast Φ((z − t)/√(1 − δ)); a fully informed
/// forecaster reports the indicator.
pub fn binary_forecast(z: f64, threshold: f64, delta: f64) -> f64 {
    let residual = 1.0 - delta;
    if residual <= 0.0 {
        return if z > threshold { 1.0 } else { 0.0 };
    }
    normal::cdf((z - threshold) / residual.sqrt())
}

/// Removes each present cell independently with probability `fraction`.
pub fn mask_at_random(panel: &ForecastPanel, fraction: f64, seed: u64) -> Result<ForecastPanel> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Contract(format!("missing fraction {fraction} must be in [0, 1)")));
    }
    let mut rng = rng_for(seed, 1);
    let mut present = panel.grid.mask().clone();
    for p in present.iter_mut() {
        if open_uniform(&mut rng) < fraction {
            *p = false;
        }
    }
    panel.with_grid(MaskedGrid::new(panel.grid.values().clone(), present)?)
}

/// Block information structure: `blocks` groups of `per_block` forecasters.
/// Each group shares a piece of variance `shared`; every forecaster adds a
/// private piece of variance `private`. Whatever weight is left over stays
/// unobserved, which keeps the extended matrix nonsingular.
pub fn block_structure(
    blocks: usize,
    per_block: usize,
    shared: f64,
    private: f64,
) -> Result<InformationStructure> {
    let mut weights = Vec::new();
    let mut holdings = Vec::new();
    for _ in 0..blocks {
        weights.push(shared);
        let shared_idx = weights.len() - 1;
        for _ in 0..per_block {
            weights.push(private);
            holdings.push(vec![shared_idx, weights.len() - 1]);
        }
    }
    InformationStructure::from_pieces(&weights, &holdings)
}

/// Random coherent structure for tests and benchmarks: each of `n`
/// forecasters picks every one of `pieces` equally weighted pieces with
/// probability `density`. One extra piece of weight `hidden` is never seen.
pub fn random_structure(n: usize, pieces: usize, density: f64, hidden: f64, seed: u64) -> Result<InformationStructure> {
    let mut rng = rng_for(seed, 2);
    let w = (1.0 - hidden) / pieces as f64;
    let weights = vec![w; pieces];
    let holdings: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut held: Vec<usize> = (0..pieces).filter(|_| rng.gen_bool(density)).collect();
            if held.is_empty() {
                held.push(rng.gen_range(0..pieces));
            }
            held
        })
        .collect();
    InformationStructure::from_pieces(&weights, &holdings)
}

/// The prior probability Φ(−t) implied by a threshold.
pub fn prior_probability(threshold: f64) -> f64 {
    normal::cdf(-threshold)
}

impl Simulation {
    pub fn mode(&self) -> Mode {
        self.panel.mode
    }
}
