use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The model does not satisfy a structural requirement.
    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite integrand value {value} at node {node:?}")]
    NonFiniteIntegrand { node: [f64; 3], value: f64 },

    #[error("denominator vanishes ({value:e}) at node {node:?} away from the singular center")]
    VanishingDenominator { node: [f64; 3], value: f64 },

    #[error("z = {z} lies above the slice threshold m = {threshold}")]
    AboveThreshold { z: f64, threshold: f64 },

    #[error("{what} did not converge: {detail}")]
    NoConvergence { what: &'static str, detail: String },

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("z = {z} is not below the essential spectrum: Delta = {delta:e} at node {node:?}")]
    NotBelowEssentialSpectrum { z: f64, delta: f64, node: [f64; 3] },

    #[error("kernel grid n = {n} exceeds the dense assembly cap {cap}; use the asymptotic route")]
    GridTooLarge { n: usize, cap: usize },

    #[error("frequency grid [{lo}, {hi}] does not cover the support of the counting function")]
    FrequencyGridTooNarrow { lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
