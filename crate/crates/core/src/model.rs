//! Core data types of the Gaussian partial-information model.
//!
//! Forecaster j holds an information variable Z_j; the outcome is driven by
//! Z_0. Jointly (Z_0, Z_1, .., Z_N) is a zero-mean Gaussian whose covariance
//! is the bordered matrix built by [`extend`]: unit variance for Z_0, the
//! information levels δ_j = Var(Z_j) on the border, and Σ in the trailing
//! block. A Σ is *information coherent* when that bordered matrix is PSD.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default absolute tolerance on eigenvalues of the extended matrix.
pub const COHERENCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Binary,
    Continuous,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Binary => write!(f, "binary"),
            Mode::Continuous => write!(f, "continuous"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Mode::Binary),
            "continuous" => Ok(Mode::Continuous),
            other => Err(format!("unknown mode '{other}' (expected binary or continuous)")),
        }
    }
}

/// A K×N grid (events × forecasters) with a presence mask. Absent cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid {
    values: DMatrix<f64>,
    present: DMatrix<bool>,
}

impl MaskedGrid {
    pub fn new(values: DMatrix<f64>, present: DMatrix<bool>) -> Result<Self> {
        if values.shape() != present.shape() {
            return Err(Error::Contract(format!(
                "value grid {:?} and mask {:?} differ in shape",
                values.shape(),
                present.shape()
            )));
        }
        let mut values = values;
        for (v, &p) in values.iter_mut().zip(present.iter()) {
            if !p {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::Contract("present cell holds a non-finite value".into()));
            }
        }
        Ok(Self { values, present })
    }

    /// Fully observed grid.
    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let present = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, present)
    }

    pub fn n_events(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_forecasters(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, event: usize, forecaster: usize) -> Option<f64> {
        self.present[(event, forecaster)].then(|| self.values[(event, forecaster)])
    }

    pub fn is_present(&self, event: usize, forecaster: usize) -> bool {
        self.present[(event, forecaster)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.present
    }

    /// Indices of forecasters present on `event`, ascending.
    pub fn present_in_event(&self, event: usize) -> Vec<usize> {
        (0..self.n_forecasters())
            .filter(|&j| self.present[(event, j)])
            .collect()
    }

    pub fn count_present(&self, forecaster: usize) -> usize {
        self.present.column(forecaster).iter().filter(|&&p| p).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.present.len();
        if total == 0 {
            return 0.0;
        }
        self.present.iter().filter(|&&p| !p).count() as f64 / total as f64
    }

    /// Applies `f` to every present value.
    pub fn map_present(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let mut values = self.values.clone();
        for k in 0..self.n_events() {
            for j in 0..self.n_forecasters() {
                if self.present[(k, j)] {
                    values[(k, j)] = f(k, j, values[(k, j)]);
                }
            }
        }
        Self::new(values, self.present.clone())
    }

    pub fn select_forecasters(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_columns(idx),
            present: self.present.select_columns(idx),
        }
    }

    pub fn select_events(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            present: self.present.select_rows(idx),
        }
    }
}

/// Raw forecasts for K events from N forecasters.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPanel {
    pub mode: Mode,
    pub grid: MaskedGrid,
    pub event_ids: Vec<String>,
    pub forecaster_ids: Vec<String>,
    pub outcomes: Option<Vec<f64>>,
}

impl ForecastPanel {
    pub fn new(
        mode: Mode,
        grid: MaskedGrid,
        event_ids: Vec<String>,
        forecaster_ids: Vec<String>,
        outcomes: Option<Vec<f64>>,
    ) -> Result<Self> {
        if event_ids.len() != grid.n_events() || forecaster_ids.len() != grid.n_forecasters() {
            return Err(Error::Contract(format!(
                "{} event ids and {} forecaster ids for a {}x{} grid",
                event_ids.len(),
                forecaster_ids.len(),
                grid.n_events(),
                grid.n_forecasters()
            )));
        }
        if mode == Mode::Binary {
            for k in 0..grid.n_events() {
                for j in 0..grid.n_forecasters() {
                    if let Some(v) = grid.get(k, j) {
                        if !(0.0..=1.0).contains(&v) {
                            return Err(Error::Contract(format!(
                                "binary forecast {v} for event {} / forecaster {} is outside [0, 1]",
                                event_ids[k], forecaster_ids[j]
                            )));
                        }
                    }
                }
            }
        }
        if let Some(y) = &outcomes {
            if y.len() != grid.n_events() {
                return Err(Error::LengthMismatch {
                    left: y.len(),
                    right: grid.n_events(),
                });
            }
            if mode == Mode::Binary && y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Contract("binary outcomes must be 0 or 1".into()));
            }
        }
        Ok(Self {
            mode,
            grid,
            event_ids,
            forecaster_ids,
            outcomes,
        })
    }

    /// Panel with generated ids `e1..eK` and `f1..fN`.
    pub fn with_default_ids(mode: Mode, grid: MaskedGrid, outcomes: Option<Vec<f64>>) -> Result<Self> {
        let event_ids = default_ids("e", grid.n_events());
        let forecaster_ids = default_ids("f", grid.n_forecasters());
        Self::new(mode, grid, event_ids, forecaster_ids, outcomes)
    }

    pub fn n_events(&self) -> usize {
        self.grid.n_events()
    }

    pub fn n_forecasters(&self) -> usize {
        self.grid.n_forecasters()
    }

    pub fn require_mode(&self, expected: Mode) -> Result<()> {
        if self.mode != expected {
            return Err(Error::Mode {
                expected,
                found: self.mode,
            });
        }
        Ok(())
    }

    pub fn with_grid(&self, grid: MaskedGrid) -> Result<Self> {
        Self::new(
            self.mode,
            grid,
            self.event_ids.clone(),
            self.forecaster_ids.clone(),
            self.outcomes.clone(),
        )
    }

    pub fn select_forecasters(&self, idx: &[usize]) -> Self {
        Self {
            mode: self.mode,
            grid: self.grid.select_forecasters(idx),
            event_ids: self.event_ids.clone(),
            forecaster_ids: idx.iter().map(|&j| self.forecaster_ids[j].clone()).collect(),
            outcomes: self.outcomes.clone(),
        }
    }

    pub fn select_events(&self, idx: &[usize]) -> Self {
        Self {
            mode: self.mode,
            grid: self.grid.select_events(idx),
            event_ids: idx.iter().map(|&k| self.event_ids[k].clone()).collect(),
            forecaster_ids: self.forecaster_ids.clone(),
            outcomes: self
                .outcomes
                .as_ref()
                .map(|y| idx.iter().map(|&k| y[k]).collect()),
        }
    }
}

/// `prefix` plus a 1-based index, zero-padded so that string order is index order.
pub(crate) fn default_ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Symmetric N×N covariance of the forecasters' information variables.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationStructure {
    sigma: DMatrix<f64>,
}

impl InformationStructure {
    /// Validates squareness and symmetry, then stores an exactly symmetric copy.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        linalg::ensure_symmetric(&sigma, "information structure")?;
        let mut sigma = sigma;
        linalg::symmetrize(&mut sigma);
        Ok(Self { sigma })
    }

    /// Information structure generated by independent pieces of information:
    /// Z_0 is the sum of pieces with variances `weights` (summing to at most 1)
    /// and forecaster j observes the sum over `holdings[j]`. Always coherent.
    pub fn from_pieces(weights: &[f64], holdings: &[Vec<usize>]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || total > 1.0 + 1e-12 {
            return Err(Error::Contract(
                "piece weights must be nonnegative and sum to at most 1".into(),
            ));
        }
        let n = holdings.len();
        let mut sigma = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                sigma[(i, j)] = holdings[i]
                    .iter()
                    .filter(|p| holdings[j].contains(p))
                    .map(|&p| {
                        weights.get(p).copied().ok_or_else(|| {
                            Error::Contract(format!("forecaster {i} holds unknown piece {p}"))
                        })
                    })
                    .sum::<Result<f64>>()?;
            }
        }
        Self::new(sigma)
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.sigma
    }

    /// δ_j, the per-forecaster information levels.
    pub fn delta(&self) -> DVector<f64> {
        self.sigma.diagonal()
    }

    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self {
            sigma: linalg::submatrix(&self.sigma, idx),
        }
    }

    /// Reorders rows and columns by `order` (new position i holds old `order[i]`).
    pub fn permute(&self, order: &[usize]) -> Self {
        self.restrict(order)
    }
}

/// The (N+1)×(N+1) bordered matrix carrying the calibration pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMatrix {
    omega: DMatrix<f64>,
}

impl ExtendedMatrix {
    pub fn from_matrix(omega: DMatrix<f64>) -> Result<Self> {
        linalg::ensure_symmetric(&omega, "extended matrix")?;
        if omega.nrows() == 0 {
            return Err(Error::Contract("extended matrix must be at least 1x1".into()));
        }
        Ok(Self { omega })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.omega
    }

    /// Drops the first row and column.
    pub fn trailing(&self) -> InformationStructure {
        let n = self.omega.nrows() - 1;
        InformationStructure {
            sigma: self.omega.view((1, 1), (n, n)).into_owned(),
        }
    }

    /// Largest deviation from the bordered pattern: |ω_11 − 1| and
    /// |ω_1,j+1 − ω_j+1,j+1| over j.
    pub fn pattern_residual(&self) -> f64 {
        let n = self.omega.nrows();
        let mut worst = (self.omega[(0, 0)] - 1.0).abs();
        for j in 1..n {
            worst = worst
                .max((self.omega[(0, j)] - self.omega[(j, j)]).abs())
                .max((self.omega[(j, 0)] - self.omega[(j, j)]).abs());
        }
        worst
    }
}

/// Builds the bordered matrix [[1, diag(Σ)'], [diag(Σ), Σ]].
pub fn extend(sigma: &InformationStructure) -> ExtendedMatrix {
    let n = sigma.n();
    let mut omega = DMatrix::zeros(n + 1, n + 1);
    omega[(0, 0)] = 1.0;
    omega.view_mut((1, 1), (n, n)).copy_from(&sigma.sigma);
    for j in 0..n {
        let d = sigma.sigma[(j, j)];
        omega[(0, j + 1)] = d;
        omega[(j + 1, 0)] = d;
    }
    ExtendedMatrix { omega }
}

/// Smallest eigenvalue of the extended matrix.
pub fn coherence_margin(sigma: &InformationStructure) -> Result<f64> {
    linalg::min_eigenvalue(extend(sigma).matrix())
}

/// True iff every eigenvalue of the extended matrix is ≥ −tol.
pub fn is_info_coherent(sigma: &InformationStructure, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(Error::Contract(format!("tolerance must be nonnegative, got {tol}")));
    }
    Ok(coherence_margin(sigma)? >= -tol)
}

/// How singular restricted matrices are treated by the conditionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InverseMode {
    /// Singular submatrices are an error.
    #[default]
    Strict,
    /// Fall back to a pseudo-inverse with eigenvalue cutoff 1e-10 · λ_max.
    PseudoInverse,
}

pub const PINV_CUTOFF: f64 = 1e-10;

/// Conditional mean and variance of Z_0 given Z_j for j in `subset`.
///
/// Mean is v'z with Σ_S v = diag(Σ_S); variance is 1 − v'diag(Σ_S), clamped into [0, 1].
pub fn conditional_z0(
    sigma: &InformationStructure,
    z: &[f64],
    subset: &[usize],
    inverse: InverseMode,
) -> Result<(f64, f64)> {
    if z.len() != sigma.n() {
        return Err(Error::LengthMismatch {
            left: z.len(),
            right: sigma.n(),
        });
    }
    if subset.iter().any(|&j| j >= sigma.n()) {
        return Err(Error::Contract("subset index out of range".into()));
    }
    if subset.is_empty() {
        return Ok((0.0, 1.0));
    }
    let restricted = sigma.restrict(subset);
    let d = restricted.delta();
    let weights = match linalg::spd_solve(restricted.matrix(), &DMatrix::from_column_slice(d.len(), 1, d.as_slice()), subset) {
        Ok(v) => DVector::from_column_slice(v.as_slice()),
        Err(e) => match inverse {
            InverseMode::Strict => return Err(e),
            InverseMode::PseudoInverse => {
                linalg::pseudo_inverse(restricted.matrix(), PINV_CUTOFF)? * &d
            }
        },
    };
    let zs = DVector::from_iterator(subset.len(), subset.iter().map(|&j| z[j]));
    let mean = weights.dot(&zs);
    let variance = (1.0 - weights.dot(&d)).clamp(0.0, 1.0);
    Ok((mean, variance))
}

/// Outcome link of the model.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkModel {
    /// Y_k = 1{Z_0k > t_k}; prior probability Φ(−t_k).
    Binary { thresholds: Vec<f64> },
    /// Y_k = σ_0 Z_0k + μ_0k.
    Continuous {
        prior_means: Vec<f64>,
        prior_variance: f64,
    },
}

impl LinkModel {
    pub fn binary_constant(threshold: f64, n_events: usize) -> Self {
        LinkModel::Binary {
            thresholds: vec![threshold; n_events],
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            LinkModel::Binary { .. } => Mode::Binary,
            LinkModel::Continuous { .. } => Mode::Continuous,
        }
    }

    pub fn n_events(&self) -> usize {
        match self {
            LinkModel::Binary { thresholds } => thresholds.len(),
            LinkModel::Continuous { prior_means, .. } => prior_means.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LinkModel::Binary { thresholds } => {
                if thresholds.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Contract("thresholds must be finite".into()));
                }
            }
            LinkModel::Continuous {
                prior_means,
                prior_variance,
            } => {
                if prior_means.iter().any(|m| !m.is_finite()) || !(prior_variance.is_finite()) {
                    return Err(Error::Contract("prior parameters must be finite".into()));
                }
                if *prior_variance < 0.0 {
                    return Err(Error::Contract("prior variance must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    /// A continuous link whose prior variance collapsed to zero.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, LinkModel::Continuous { prior_variance, .. } if *prior_variance <= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigma(rows: &[&[f64]]) -> InformationStructure {
        let n = rows.len();
        InformationStructure::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn extend_scalar() {
        let h = extend(&sigma(&[&[0.5]]));
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.5]));
    }

    #[test]
    fn extend_two_by_two() {
        let h = extend(&sigma(&[&[0.5, 0.25], &[0.25, 0.5]]));
        let want = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.5, 0.5, 0.5, 0.25, 0.5, 0.25, 0.5],
        );
        assert_eq!(h.matrix(), &want);
        assert_eq!(h.pattern_residual(), 0.0);
    }

    #[test]
    fn extend_drop_round_trip_is_exact() {
        let s = sigma(&[&[0.31, 0.12, -0.05], &[0.12, 0.77, 0.2], &[-0.05, 0.2, 0.4]]);
        assert_eq!(extend(&s).trailing(), s);
    }

    #[test]
    fn rejects_asymmetric_and_non_square() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.5]);
        assert!(matches!(InformationStructure::new(m), Err(Error::Contract(_))));
        let m = DMatrix::zeros(2, 3);
        assert!(matches!(InformationStructure::new(m), Err(Error::Contract(_))));
    }

    #[test]
    fn coherence_examples() {
        assert!(is_info_coherent(&sigma(&[&[0.5, 0.5], &[0.5, 0.5]]), COHERENCE_TOL).unwrap());
        assert!(!is_info_coherent(&sigma(&[&[1.0, 0.0], &[0.0, 1.0]]), COHERENCE_TOL).unwrap());
        assert!(is_info_coherent(&sigma(&[&[0.3, 0.0], &[0.0, 0.3]]), COHERENCE_TOL).unwrap());
    }

    #[test]
    fn coherence_of_independent_pair_by_hand() {
        // h = [[1, .3, .3], [.3, .3, 0], [.3, 0, .3]]; eigenvalues are 0.3 and
        // the roots of λ² − 1.3λ + 0.12, the smaller being (1.3 − √1.21)/2 = 0.1.
        let s = sigma(&[&[0.3, 0.0], &[0.0, 0.3]]);
        let margin = coherence_margin(&s).unwrap();
        assert!((margin - 0.1).abs() < 1e-12, "{margin}");
    }

    #[test]
    fn single_forecaster_conditional() {
        let s = sigma(&[&[0.4]]);
        let (m, v) = conditional_z0(&s, &[0.7], &[0], InverseMode::Strict).unwrap();
        assert!((m - 0.7).abs() < 1e-15);
        assert!((v - 0.6).abs() < 1e-15);
    }

    #[test]
    fn independent_conditional() {
        let s = sigma(&[&[0.3, 0.0], &[0.0, 0.3]]);
        let (m, v) = conditional_z0(&s, &[1.0, 1.0], &[0, 1], InverseMode::Strict).unwrap();
        assert!((m - 2.0).abs() < 1e-12);
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn exchangeable_conditional_matches_hand_solve() {
        // Σ v = (0.5, 0.5) → v = (2/3, 2/3); mean = (2/3)(0.8), variance = 1 − 2/3.
        let s = sigma(&[&[0.5, 0.25], &[0.25, 0.5]]);
        let (m, v) = conditional_z0(&s, &[0.6, 0.2], &[0, 1], InverseMode::Strict).unwrap();
        assert!((m - 0.8 * 2.0 / 3.0).abs() < 1e-12);
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_conditional_requires_opt_in() {
        let s = sigma(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let err = conditional_z0(&s, &[0.4, 0.4], &[0, 1], InverseMode::Strict).unwrap_err();
        assert_eq!(err, Error::Singular { subset: vec![0, 1] });
        let (m, v) = conditional_z0(&s, &[0.4, 0.4], &[0, 1], InverseMode::PseudoInverse).unwrap();
        // Duplicated forecasters reveal exactly what one of them knows.
        assert!((m - 0.4).abs() < 1e-10);
        assert!((v - 0.5).abs() < 1e-10);
    }

    #[test]
    fn from_pieces_builds_overlap() {
        let s = InformationStructure::from_pieces(&[0.2, 0.3, 0.1], &[vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.3, 0.4]));
        assert!(is_info_coherent(&s, COHERENCE_TOL).unwrap());
    }

    #[test]
    fn binary_panel_range_checked() {
        let grid = MaskedGrid::complete(DMatrix::from_row_slice(1, 2, &[0.5, 1.2])).unwrap();
        assert!(ForecastPanel::with_default_ids(Mode::Binary, grid, None).is_err());
    }
}
