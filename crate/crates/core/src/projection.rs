//! Least-squares projection of an unconstrained estimate onto the feasible set.
//!
//! The bordered matrix h(S) is projected onto the intersection of
//!
//! * `C_lin`: symmetric matrices with ω_11 = 1 and ω_1,j = ω_j,j (the
//!   calibration pattern), and
//! * `C_sd`: PSD matrices with condition number at most κ,
//!
//! by alternating between the two sets. Projecting onto `C_lin` is a
//! closed-form averaging step; projecting onto `C_sd` clamps the spectrum at
//! μ* and κμ*, where μ* minimizes a one-dimensional piecewise quadratic.
//!
//! Two iterations are available. Dykstra's method carries a correction term
//! for the cone step and converges to the nearest feasible point. The
//! directional (extrapolated) variant converges faster but only to some
//! point of the intersection, which can be noticeably farther from h(S).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{extend, ExtendedMatrix, InformationStructure};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
/// Below this the extrapolated step is replaced by a plain alternating step.
pub const STEP_DENOMINATOR_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMethod {
    /// Alternating projection with Dykstra's correction on the cone step.
    #[default]
    Dykstra,
    /// Alternating projection with an extrapolated step length.
    Directional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub kappa: f64,
    /// Stop once max_ij (Ω_D − Ω_C)²_ij falls below this.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub method: ProjectionMethod,
}

impl ProjectionConfig {
    pub fn new(kappa: f64, epsilon: f64, max_iterations: usize) -> Result<Self> {
        let config = Self {
            kappa,
            epsilon,
            max_iterations,
            method: ProjectionMethod::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_kappa(kappa: f64) -> Result<Self> {
        Self::new(kappa, DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return Err(Error::Contract(format!("kappa must be finite and >= 1, got {}", self.kappa)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Contract(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Contract("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Frobenius projection onto `C_lin`: ω_11 ← 1 and, for every j ≥ 2, the
/// entries ω_j1, ω_1j, ω_jj are replaced by their average.
pub fn project_linear(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::ensure_symmetric(m, "matrix")?;
    if m.nrows() == 0 {
        return Err(Error::Contract("cannot project an empty matrix".into()));
    }
    Ok(project_linear_unchecked(m))
}

fn project_linear_unchecked(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    out[(0, 0)] = 1.0;
    for j in 1..m.nrows() {
        let avg = (m[(j, 0)] + m[(0, j)] + m[(j, j)]) / 3.0;
        out[(j, 0)] = avg;
        out[(0, j)] = avg;
        out[(j, j)] = avg;
    }
    out
}

/// π(μ) = Σ_i (μ − l_i)₊² + (l_i − κμ)₊².
pub fn pi_value(eigenvalues: &[f64], kappa: f64, mu: f64) -> f64 {
    eigenvalues
        .iter()
        .map(|&l| (mu - l).max(0.0).powi(2) + (l - kappa * mu).max(0.0).powi(2))
        .sum()
}

/// Exact minimizer of π over μ ≥ 0.
///
/// When the spectrum already fits a band [μ, κμ] the minimizers form the
/// interval [max(0, l_max/κ), l_min] and its midpoint is returned. Otherwise
/// π is strictly convex around its minimum; on each interval between the
/// sorted breakpoints {0} ∪ {l_i, l_i/κ > 0} the active terms are fixed and
/// the stationary point has a closed form, so the first interval whose
/// stationary point does not exceed its right end holds μ*.
pub fn minimize_pi(eigenvalues: &[f64], kappa: f64) -> f64 {
    debug_assert!(kappa >= 1.0);
    if eigenvalues.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<f64> = eigenvalues.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let l_min = sorted[0];
    let l_max = sorted[sorted.len() - 1];

    let lo = (l_max / kappa).max(0.0);
    if lo <= l_min {
        return 0.5 * (lo + l_min);
    }

    // prefix[i] = sum of the i smallest eigenvalues
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for &l in &sorted {
        prefix.push(prefix.last().unwrap() + l);
    }
    let total = prefix[sorted.len()];

    let mut breaks: Vec<f64> = sorted
        .iter()
        .flat_map(|&l| [l, l / kappa])
        .filter(|&b| b > 0.0)
        .collect();
    breaks.push(0.0);
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();

    for (idx, &left) in breaks.iter().enumerate() {
        let right = breaks.get(idx + 1).copied();
        let probe = match right {
            Some(r) => 0.5 * (left + r),
            None => 2.0 * left + 1.0,
        };
        // A: l_i < μ (a prefix of the sorted spectrum); B: l_i > κμ (a suffix).
        let below = sorted.partition_point(|&l| l < probe);
        let above_start = sorted.partition_point(|&l| l <= kappa * probe);
        let n_above = sorted.len() - above_start;
        let coef = below as f64 + kappa * kappa * n_above as f64;
        if coef == 0.0 {
            continue;
        }
        let rhs = prefix[below] + kappa * (total - prefix[above_start]);
        let stationary = rhs / coef;
        match right {
            Some(r) if stationary > r => continue,
            _ => return stationary.max(left),
        }
    }
    // Unreachable for a finite spectrum; fall back to a direct comparison.
    breaks
        .iter()
        .copied()
        .min_by(|&a, &b| pi_value(eigenvalues, kappa, a).total_cmp(&pi_value(eigenvalues, kappa, b)))
        .unwrap_or(0.0)
}

/// Result of a single projection onto `C_sd`.
#[derive(Debug, Clone)]
pub struct ConeProjection {
    pub matrix: DMatrix<f64>,
    pub mu: f64,
    /// μ* = 0 collapsed the whole spectrum to zero.
    pub collapsed: bool,
}

/// Frobenius projection onto PSD matrices with condition number ≤ κ.
pub fn project_cone(m: &DMatrix<f64>, kappa: f64) -> Result<DMatrix<f64>> {
    linalg::ensure_symmetric(m, "matrix")?;
    if !(kappa >= 1.0) {
        return Err(Error::Contract(format!("kappa must be >= 1, got {kappa}")));
    }
    Ok(project_cone_detailed(m, kappa)?.matrix)
}

pub fn project_cone_detailed(m: &DMatrix<f64>, kappa: f64) -> Result<ConeProjection> {
    let eig = linalg::sym_eigen(m)?;
    let l = eig.eigenvalues.as_slice();
    let mu = minimize_pi(l, kappa);
    let upper = kappa * mu;
    let clamped = DVector::from_iterator(
        l.len(),
        l.iter().map(|&v| {
            if v <= mu {
                mu
            } else if upper <= v {
                upper
            } else {
                v
            }
        }),
    );
    Ok(ConeProjection {
        matrix: linalg::reassemble(&eig.eigenvectors, &clamped),
        mu,
        collapsed: mu == 0.0,
    })
}

/// Output of [`project_lse`].
#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    /// h⁻¹(Ω), so h(σ) is coherent with condition number at most κ.
    pub sigma: InformationStructure,
    /// The returned feasible matrix: P_lin(Ω_C) of the last cone iterate Ω_C,
    /// moved toward an interior point just far enough to satisfy the bound.
    pub omega: ExtendedMatrix,
    pub iterations: usize,
    /// max_ij (Ω_D − Ω_C)²_ij at termination.
    pub residual: f64,
    /// Steps where the extrapolation denominator vanished.
    pub plain_steps: usize,
    /// Cone projections that collapsed to the zero matrix.
    pub collapsed_steps: usize,
    /// Weight on the interior point in the final repair; 0 when P_lin(Ω_C)
    /// already met the bound.
    pub repair_weight: f64,
}

impl ProjectionOutcome {
    /// ‖Ω_C − h(S)‖_F.
    pub fn distance_to(&self, s: &DMatrix<f64>) -> f64 {
        let target = bordered(s);
        (self.omega.matrix() - target).norm()
    }
}

fn bordered(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let mut omega = DMatrix::zeros(n + 1, n + 1);
    omega[(0, 0)] = 1.0;
    omega.view_mut((1, 1), (n, n)).copy_from(s);
    for j in 0..n {
        omega[(0, j + 1)] = s[(j, j)];
        omega[(j + 1, 0)] = s[(j, j)];
    }
    omega
}

/// Smallest κ for which `C_lin ∩ C_sd` is nonempty with `n` forecasters:
/// 3 + 2√(n + 1).
///
/// Both sets are convex and invariant under relabelling forecasters, so
/// averaging a feasible matrix over all relabellings stays feasible and the
/// minimum is attained by an exchangeable structure (δ on the diagonal, ρ off
/// it). Its bordered matrix has eigenvalue δ − ρ with multiplicity n − 1 and
/// the two eigenvalues of [[1, δ√n], [δ√n, δ + (n − 1)ρ]]; minimizing the
/// resulting condition number over (δ, ρ) gives the closed form.
pub fn min_feasible_kappa(n: usize) -> f64 {
    3.0 + 2.0 * ((n + 1) as f64).sqrt()
}

fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..120 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// Condition number of the bordered matrix of an exchangeable structure
/// (δ on the diagonal, ρ off it) with `n` forecasters.
fn exchangeable_condition(n: usize, delta: f64, rho: f64) -> f64 {
    let nf = n as f64;
    let (p, q, r) = (1.0, delta * nf.sqrt(), delta + (nf - 1.0) * rho);
    let half_gap = ((p - r).powi(2) / 4.0 + q * q).sqrt();
    let (mut lo, mut hi) = ((p + r) / 2.0 - half_gap, (p + r) / 2.0 + half_gap);
    if n > 1 {
        lo = lo.min(delta - rho);
        hi = hi.max(delta - rho);
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// (δ, ρ) of the exchangeable structure whose bordered matrix has the smallest
/// condition number, found by nested golden-section search (the condition
/// number is quasiconvex in (δ, ρ)).
pub(crate) fn most_interior_exchangeable(n: usize) -> (f64, f64) {
    if n <= 1 {
        let (delta, _) = golden_section(0.0, 1.0, |d| exchangeable_condition(1, d, 0.0));
        return (delta, 0.0);
    }
    let nf = n as f64;
    // det > 0 needs ρ > (nδ² − δ)/(n − 1); δ − ρ > 0 needs ρ < δ.
    let rho_floor = |delta: f64| (nf * delta * delta - delta) / (nf - 1.0);
    let best_rho = |delta: f64| golden_section(rho_floor(delta), delta, |rho| exchangeable_condition(n, delta, rho));
    let (delta, _) = golden_section(0.0, 1.0, |delta| best_rho(delta).1);
    (delta, best_rho(delta).0)
}

/// Bisection steps used when pulling the final iterate into `C_sd`.
const REPAIR_STEPS: usize = 60;

fn condition_within(m: &DMatrix<f64>, kappa: f64) -> bool {
    let Ok(eig) = linalg::eigenvalues(m) else {
        return false;
    };
    let lo = eig.min();
    lo > 0.0 && eig.max() <= kappa * lo
}

/// Ω_D = P_lin(Ω_C) is exactly bordered but only approximately in `C_sd`,
/// and the gap is enough to break coherence at large κ. Both Ω_D and the
/// most interior exchangeable point lie in `C_lin`, and the weights t for
/// which (1 − t)Ω_D + tΩ_int meets the condition bound form an interval
/// containing 1, so the smallest such t is found by bisection.
fn restore_feasibility(omega_d: DMatrix<f64>, kappa: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = omega_d.nrows() - 1;
    let (delta, rho) = most_interior_exchangeable(n);
    let bound = kappa.max(exchangeable_condition(n, delta, rho));
    if condition_within(&omega_d, bound) {
        return Ok((omega_d, 0.0));
    }
    let interior = bordered(&DMatrix::from_fn(n, n, |i, j| if i == j { delta } else { rho }));
    if !condition_within(&interior, bound) {
        return Err(Error::Numerical("no interior point of the feasible set was found".into()));
    }
    let blend = |t: f64| &omega_d * (1.0 - t) + &interior * t;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..REPAIR_STEPS {
        let mid = 0.5 * (lo + hi);
        if condition_within(&blend(mid), bound) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((blend(hi), hi))
}

/// Relative slack allowed below [`min_feasible_kappa`] before a κ is rejected.
const FEASIBILITY_SLACK: f64 = 1e-9;

fn max_squared_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).fold(0.0, f64::max)
}

struct Progress {
    plain_steps: usize,
    collapsed_steps: usize,
}

fn finish(
    omega_c: DMatrix<f64>,
    config: &ProjectionConfig,
    iterations: usize,
    residual: f64,
    progress: Progress,
) -> Result<ProjectionOutcome> {
    let (repaired, repair_weight) = restore_feasibility(project_linear_unchecked(&omega_c), config.kappa)?;
    let omega = ExtendedMatrix::from_matrix(repaired)?;
    Ok(ProjectionOutcome {
        sigma: omega.trailing(),
        omega,
        iterations,
        residual,
        repair_weight,
        plain_steps: progress.plain_steps,
        collapsed_steps: progress.collapsed_steps,
    })
}

/// Projects h(S) onto `C_lin ∩ C_sd`. Iteration stops when
/// max_ij (Ω_D − Ω_C)²_ij < ε with Ω_C the last cone iterate and
/// Ω_D = P_lin(Ω_C); Ω_D is then pulled into `C_sd` along a segment inside
/// `C_lin`, so the returned structure is exactly feasible.
pub fn project_lse(s: &DMatrix<f64>, config: &ProjectionConfig) -> Result<ProjectionOutcome> {
    config.validate()?;
    linalg::ensure_symmetric(s, "unconstrained estimate")?;
    let minimum = min_feasible_kappa(s.nrows());
    if config.kappa < minimum * (1.0 - FEASIBILITY_SLACK) {
        return Err(Error::InfeasibleKappa {
            kappa: config.kappa,
            minimum,
            size: s.nrows() + 1,
        });
    }
    let start = extend(&InformationStructure::new(s.clone())?).into_matrix();
    match config.method {
        ProjectionMethod::Dykstra => dykstra(start, config),
        ProjectionMethod::Directional => directional(start, config),
    }
}

/// h(S) already lies in `C_lin`, which is affine, so only the cone step
/// needs a correction term.
fn dykstra(target: DMatrix<f64>, config: &ProjectionConfig) -> Result<ProjectionOutcome> {
    let mut progress = Progress {
        plain_steps: 0,
        collapsed_steps: 0,
    };
    let mut y = target;
    let mut correction = DMatrix::zeros(y.nrows(), y.ncols());
    let mut residual = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        let r = &y - &correction;
        let cone = project_cone_detailed(&r, config.kappa)?;
        if cone.collapsed {
            progress.collapsed_steps += 1;
        }
        let omega_c = cone.matrix;
        correction = &omega_c - r;
        let omega_d = project_linear_unchecked(&omega_c);
        residual = max_squared_gap(&omega_d, &omega_c);
        if residual < config.epsilon {
            return finish(omega_c, config, iteration, residual, progress);
        }
        y = omega_d;
    }
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        residual,
    })
}

/// Ω_B ← P_lin(Ω_A), Ω_C ← P_sd(Ω_B), Ω_D ← P_lin(Ω_C), then
/// Ω_A ← Ω_B + Δ(Ω_D − Ω_B) with Δ = ‖Ω_B − Ω_C‖² / ⟨Ω_B − Ω_D, Ω_B − Ω_C⟩.
fn directional(start: DMatrix<f64>, config: &ProjectionConfig) -> Result<ProjectionOutcome> {
    let mut progress = Progress {
        plain_steps: 0,
        collapsed_steps: 0,
    };
    let mut omega_a = start;
    let mut residual = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        let omega_b = project_linear_unchecked(&omega_a);
        let cone = project_cone_detailed(&omega_b, config.kappa)?;
        if cone.collapsed {
            progress.collapsed_steps += 1;
        }
        let omega_c = cone.matrix;
        let omega_d = project_linear_unchecked(&omega_c);
        residual = max_squared_gap(&omega_d, &omega_c);
        if residual < config.epsilon {
            return finish(omega_c, config, iteration, residual, progress);
        }

        let b_minus_c = &omega_b - &omega_c;
        let numerator = b_minus_c.norm_squared();
        let denominator = (&omega_b - &omega_d).dot(&b_minus_c);
        if denominator.abs() < STEP_DENOMINATOR_FLOOR {
            progress.plain_steps += 1;
            omega_a = omega_d;
        } else {
            omega_a = &omega_b + (&omega_d - &omega_b) * (numerator / denominator);
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        residual,
    })
}
