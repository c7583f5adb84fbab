use thiserror::Error;

/// Every failure mode of the library. `kind()` gives the stable name used in
/// error reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel evaluated on its singular diagonal (|x - y| = {separation:e})")]
    DiagonalSingularity { separation: f64 },
    #[error("seed bump width {0} outside (0, 0.5]")]
    InvalidWidth(f64),
    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),
    #[error("grid of {grid} points aliases {modes} modes (need at least {required})")]
    AliasedGrid { modes: usize, grid: usize, required: usize },
    #[error("covariance not positive at grid scale: min eigenvalue {min:e}, max {max:e}")]
    NotPositive { min: f64, max: f64 },
    #[error("mode index {index} outside basis of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("test function and field live on different grids")]
    GridMismatch,
    #[error("second moment diverges: beta^2 = {beta_sq} >= d = {dim}")]
    DivergentMoment { beta_sq: f64, dim: usize },
    #[error("field support reaches the edge of the unpadded window")]
    SupportTouchesBoundary,
    #[error("test function has zero L1 norm")]
    ZeroFunction,
    #[error("no mollifier width in the schedule produced a converged Newton solve")]
    NoConvergence,
    #[error("no perturbation pair meets the determinant criterion (best ratio {best_ratio:.3e})")]
    DegeneratePerturbations { best_ratio: f64 },
    #[error("target modulus {modulus} not below ||f||_1 (1 - margin) = {limit}")]
    TargetTooLarge { modulus: f64, limit: f64 },
    #[error("could not bracket the target modulus {modulus} on the homotopy path")]
    NonUnimodalBracket { modulus: f64 },
    #[error("Bessel order {0} outside 0..=8")]
    OrderOutOfRange(i64),
    #[error("Bessel argument {0} outside [-50, 50]")]
    ArgumentOutOfRange(f64),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DiagonalSingularity { .. } => "DiagonalSingularity",
            Error::InvalidWidth(_) => "InvalidWidth",
            Error::InvalidKernel(_) => "InvalidKernel",
            Error::AliasedGrid { .. } => "AliasedGrid",
            Error::NotPositive { .. } => "NotPositive",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::GridMismatch => "GridMismatch",
            Error::DivergentMoment { .. } => "DivergentMoment",
            Error::SupportTouchesBoundary => "SupportTouchesBoundary",
            Error::ZeroFunction => "ZeroFunction",
            Error::NoConvergence => "NoConvergence",
            Error::DegeneratePerturbations { .. } => "DegeneratePerturbations",
            Error::TargetTooLarge { .. } => "TargetTooLarge",
            Error::NonUnimodalBracket { .. } => "NonUnimodalBracket",
            Error::OrderOutOfRange(_) => "OrderOutOfRange",
            Error::ArgumentOutOfRange(_) => "ArgumentOutOfRange",
            Error::EmptyEnsemble => "EmptyEnsemble",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
