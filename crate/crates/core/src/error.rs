use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CfsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operator is not selfadjoint (deviation {deviation:e})")]
    NotSelfadjoint { deviation: f64 },
    #[error("signature violation: {positive} positive and {negative} negative eigenvalues exceed spin dimension {spin_dim}")]
    SignatureViolation { positive: usize, negative: usize, spin_dim: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("degenerate scale: largest eigenvalue modulus {0:e} below floor")]
    DegenerateScale(f64),
    #[error("empty support")]
    EmptySupport,
    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
    #[error("quadrature not converged: relative change {change:e} exceeds {tol:e}")]
    QuadratureNotConverged { change: f64, tol: f64 },
    #[error("algebra generation still growing at degree cap {degree} (dimension {dimension})")]
    DegreeCapReached { degree: usize, dimension: usize },
    #[error("not a subalgebra: residual {0:e}")]
    NotASubalgebra(f64),
    #[error("probe support not in the future cone: {0}")]
    ProbeNotInFuture(String),
    #[error("degenerate spectral split after reseeding")]
    DegenerateSpectralSplit,
    #[error("zero probability for collapse")]
    ZeroProbability,
    #[error("causal cycle among event labels")]
    CausalCycle,
    #[error("axiom 2 violation: spacelike events {0} and {1} do not commute (norm {2:e})")]
    Axiom2Violation(String, String, f64),
    #[error("history has zero normalization in the initial state")]
    ZeroNormalization,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, CfsError>;
