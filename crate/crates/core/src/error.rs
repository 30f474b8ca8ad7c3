use thiserror::Error;

/// Errors raised by the analysis, accounting, and training routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// A closed-form denominator that must be positive was not. This is the
    /// non-PSD regime the formulas do not cover.
    #[error("non-positive curvature: denominator {denominator}")]
    NonPositiveCurvature { denominator: f64 },

    /// Without noise the private improvement is monotone in the batch size.
    #[error("sigma = 0: no interior optimal batch size")]
    NoNoiseNoInteriorOptimum,

    #[error("mixed-data quadratic is degenerate or a saddle (4AB - E^2 = {discriminant})")]
    SaddleOrDegenerate { discriminant: f64 },

    #[error("root not bracketed in [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("privacy budget infeasible: {0}")]
    InfeasibleBudget(String),

    #[error("cosine undefined: zero gradient sum")]
    UndefinedCosine,

    #[error("post-processor is not scale-invariant (deviation {deviation})")]
    NotScaleInvariant { deviation: f64 },

    #[error("member and non-member sets are not disjoint")]
    NotDisjoint,

    #[error("split `{0}` does not contain both classes")]
    SingleClass(&'static str),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NonPositiveCurvature { .. }
                | Error::NoNoiseNoInteriorOptimum
                | Error::SaddleOrDegenerate { .. }
                | Error::NoBracket { .. }
                | Error::InfeasibleBudget(_)
                | Error::UndefinedCosine
                | Error::NotScaleInvariant { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
