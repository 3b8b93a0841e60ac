//! Gaussian partial-information aggregation of forecasts.
//!
//! Forecasters are modelled as conditioning on overlapping pieces of
//! information. The information structure Σ is estimated from a panel,
//! projected onto the set of coherent, well-conditioned structures, and used
//! to compute the revealed aggregate E(Y | all forecasts).

pub mod aggregation;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod pipeline;
pub mod projection;
pub mod simulate;
pub mod validation;

pub use aggregation::{AggregateResult, Method};
pub use error::{Error, Result};
pub use model::{ExtendedMatrix, ForecastPanel, InformationStructure, LinkModel, MaskedGrid, Mode};
pub use pipeline::{Fit, FitConfig};
pub use projection::{ProjectionConfig, ProjectionOutcome};
