use thiserror::Error;

use crate::model::Mode;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across estimation, projection and aggregation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller broke a documented precondition (shape, symmetry, range).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("operation requires {expected} mode, panel is {found}")]
    Mode { expected: Mode, found: Mode },

    #[error("matrix restricted to forecasters {subset:?} is singular")]
    Singular { subset: Vec<usize> },

    #[error("information structure is not coherent: min eigenvalue of extended matrix is {min_eigenvalue:.3e}")]
    Incoherent { min_eigenvalue: f64 },

    #[error("forecasters {first} and {second} share {common} events; at least 2 are required")]
    InsufficientOverlap {
        first: usize,
        second: usize,
        common: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("prior variance estimate is zero; forecasts carry no spread to standardize")]
    DegeneratePrior,

    #[error("projection did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no bordered matrix of size {size} has condition number {kappa}; the smallest attainable is {minimum:.6}")]
    InfeasibleKappa { kappa: f64, minimum: f64, size: usize },

    #[error("event {event} has no present forecasts")]
    EmptyEvent { event: usize },

    #[error("conditional variance {variance:.3e} is not positive for forecaster {forecaster}")]
    NonPositiveVariance { forecaster: usize, variance: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("every kappa candidate failed; last error: {last}")]
    AllCandidatesFailed { last: Box<Error> },

    #[error("could not draw {size} forecasters with full pairwise overlap after {attempts} attempts")]
    RedrawExhausted { size: usize, attempts: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::Incoherent { .. }
            | Error::NonConvergence { .. }
            | Error::InfeasibleKappa { .. }
            | Error::NonPositiveVariance { .. }
            | Error::Numerical(_) => true,
            Error::AllCandidatesFailed { last } => last.is_numerical(),
            _ => false,
        }
    }
}
