//! Numerical laboratory for nested linear regression: exact finite-sample
//! risks of model selection and model averaging, oracle weights over the
//! simplex, the unit box and the discrete grid, feasible selectors and
//! averagers, limiting risk ratios, and Monte Carlo risk studies.

pub mod asymptotics;
pub mod averagers;
pub mod covariance;
pub mod design;
mod error;
pub mod oracle;
pub mod qp;
pub mod selectors;
pub mod simlab;
pub mod verify;
pub mod weights;

pub use covariance::CovarianceSpec;
pub use design::{MeanModel, NestedDesign};
pub use error::{Error, Result};
pub use oracle::{RiskProfile, WeightSet, WeightVector};
