use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty configuration")]
    EmptyConfiguration,

    #[error("collision in drift evaluation")]
    CollisionInDrift,

    #[error("non-finite drift from pair ({i}, {j})")]
    NonFiniteDrift { i: usize, j: usize },

    #[error("stiff region: reduce ambient dt or N")]
    StiffRegion,

    #[error("mismatched time grids")]
    MismatchedGrids,

    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("gibbs sampler could not find a finite-energy start after {0} retries")]
    GibbsInitialization(usize),

    #[error("too many skipped samples: {skipped} of {total}")]
    TooManySkippedSamples { skipped: usize, total: usize },

    #[error("singular corrector system: {0}")]
    SingularSystem(String),

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
