use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite integrand value at node {location:?}")]
    NonFiniteIntegrand { location: (f64, f64) },

    #[error("{what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("non-finite membrane potential at step {step}, neuron {neuron} (parameter blow-up?)")]
    NonFinitePotential { step: usize, neuron: usize },

    #[error("{what} did not converge after {iterations} iterations (last iterate {last})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("no self-consistent solution in bracket; scan: {scan:?}")]
    NoSolution { scan: Vec<(f64, f64)> },

    #[error("degenerate noise: stationary input fluctuations vanish (sigma0 = {sigma0})")]
    DegenerateNoise { sigma0: f64 },

    #[error("grid too coarse: stationary residual {residual:e} exceeds {tolerance:e}; refine the grid")]
    GridTooCoarse { residual: f64, tolerance: f64 },

    #[error("probability mass drifted by {drift:e} (limit {limit:e})")]
    MassDrift { drift: f64, limit: f64 },

    #[error("numerical instability at time index {index} (|u| = {value})")]
    Instability { index: usize, value: f64 },

    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e}; spectrum {spectrum:?})")]
    Conditioning { min_eigenvalue: f64, spectrum: Vec<f64> },

    #[error("no computable density for this sample's law")]
    UnsupportedLaw,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::NonFiniteIntegrand { .. } => "non-finite-integrand",
            Error::Domain { .. } => "domain",
            Error::NonFinitePotential { .. } => "non-finite-potential",
            Error::NoConvergence { .. } => "no-convergence",
            Error::NoSolution { .. } => "no-solution",
            Error::DegenerateNoise { .. } => "degenerate-noise",
            Error::GridTooCoarse { .. } => "grid-too-coarse",
            Error::MassDrift { .. } => "mass-drift",
            Error::Instability { .. } => "instability",
            Error::Conditioning { .. } => "conditioning",
            Error::UnsupportedLaw => "unsupported-law",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }
}
