use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("duplicate source angle {0}")]
    DuplicateAngles(f64),
    #[error("signal matrix does not have rank {expected}")]
    RankDeficient { expected: usize },
    #[error("spectral norm of B is {norm}, above the bound {bound}")]
    NormBoundExceeded { norm: f64, bound: f64 },
    #[error("steering gram matrix is degenerate (condition number {condition:.3e})")]
    DegenerateSteering { condition: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular value decomposition did not converge")]
    NumericalFailure,
    #[error("evaluation point {z} is within {distance:.3e} of an eigenvalue")]
    PoleHit { z: String, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RmtError {
    #[error("invalid deterministic input: {0}")]
    InvalidInput(String),
    #[error("canonical equation solver did not converge at z = {z}")]
    NoConvergence { z: String },
    #[error("evaluation point {0} is on an eigenvalue of BB*")]
    PoleHit(f64),
    #[error("support search failed: {0}")]
    SupportSearchFailed(String),
    #[error("separation assumptions violated: {0}")]
    SeparationViolated(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("pole at {pole} is {distance:.3e} from the contour (margin {margin:.3e})")]
    PoleTooClose {
        pole: f64,
        distance: f64,
        margin: f64,
    },
    #[error("rectangle quadrature did not converge (last change {last_change:.3e})")]
    QuadratureNoConvergence { last_change: f64 },
    #[error("empty search interval [{0}, {1}]")]
    EmptyInterval(f64, f64),
    #[error("found {found} local minima, {wanted} requested")]
    TooFewMinima { found: usize, wanted: usize },
    #[error("invalid estimator input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Rmt(#[from] RmtError),
}

/// Any error raised by the library, tagged with its originating module.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("spectrum: {0}")]
    Spectrum(#[from] SpectrumError),
    #[error("rmt: {0}")]
    Rmt(#[from] RmtError),
    #[error("estimator: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("experiment: {0}")]
    Experiment(String),
}
