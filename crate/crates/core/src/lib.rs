//! Numerical laboratory for finite causal fermion systems and event algebras.

pub mod algebra;
pub mod dirac_box;
pub mod eth;
pub mod error;
pub mod fit;
pub mod future;
pub mod kernel;
pub mod linalg;
pub mod measure;
pub mod operator;
pub mod scalar;

pub use error::{CfsError, Result};
pub use scalar::Real;

/// Double-precision operator, the default for experiments.
pub type Operator = operator::SpacetimeOperator<f64>;
pub type Measure = measure::DiscreteMeasure<f64>;
pub type BoxModel = dirac_box::BoxSystem<f64>;
