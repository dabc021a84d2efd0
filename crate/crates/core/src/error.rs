use thiserror::Error;

/// Failure modes of the numerical pipeline.
///
/// The variant names are stable: the CLI logs them verbatim next to a
/// non-zero exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("initial direction is not unit length in the metric (|w|_g = {norm})")]
    NonUnitDirection { norm: f64 },
    #[error("geodesic did not exit after arclength {cap}; metric is probably not simple")]
    EscapeFailure { cap: f64 },
    #[error("start point {point:?} lies outside the terminating circle of radius {radius}")]
    StartOutside { point: [f64; 2], radius: f64 },
    #[error("two-point shooting did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("two-point problem with coincident endpoints")]
    CoincidentPoints,
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("least-squares iteration stagnated at relative residual {residual:e} after {iterations} iterations")]
    Stagnation { iterations: usize, residual: f64 },
    #[error("field is identically zero on the requested region")]
    ZeroField,
    #[error("ray data were computed on different fans ({left} vs {right} entries)")]
    FanMismatch { left: usize, right: usize },
    #[error("covector must be nonzero")]
    ZeroCovector,
    #[error("frequency {k} is not resolved by grid spacing {h} (need k*h <= 1/4)")]
    UnresolvedFrequency { k: f64, h: f64 },
    #[error("every outward geodesic from {point:?} re-entered M")]
    GeodesicEntersM { point: [f64; 2] },
    #[error("direction pair at {point:?} is ill conditioned (|det| = {det})")]
    IllConditionedPair { point: [f64; 2], det: f64 },
    #[error("every ensemble sample was rejected")]
    EnsembleDegenerate,
    #[error("metric failed simplicity certification: {reason}")]
    CertificationFailure { reason: String },
    #[error("field lives on a different grid than the operator")]
    DomainMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Short variant name, used in logs and manifests.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonUnitDirection { .. } => "NonUnitDirection",
            Error::EscapeFailure { .. } => "EscapeFailure",
            Error::StartOutside { .. } => "StartOutside",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::CoincidentPoints => "CoincidentPoints",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::Stagnation { .. } => "Stagnation",
            Error::ZeroField => "ZeroField",
            Error::FanMismatch { .. } => "FanMismatch",
            Error::ZeroCovector => "ZeroCovector",
            Error::UnresolvedFrequency { .. } => "UnresolvedFrequency",
            Error::GeodesicEntersM { .. } => "GeodesicEntersM",
            Error::IllConditionedPair { .. } => "IllConditionedPair",
            Error::EnsembleDegenerate => "EnsembleDegenerate",
            Error::CertificationFailure { .. } => "CertificationFailure",
            Error::DomainMismatch => "DomainMismatch",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
