// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Local-slope profile attached to a failed scaling-region search.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeProfile {
    pub log_radii: Vec<f64>,
    pub local_slopes: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("unknown series label `{0}`")]
    UnknownLabel(String),

    #[error("non-finite value at index {index} in `{name}`")]
    NonFinite { name: String, index: usize },

    #[error("coordinate {0} has zero spread")]
    DegenerateCoordinate(usize),

    #[error("all pairs excluded by the Theiler window ({theiler}) for {n} points")]
    DegeneratePairs { n: usize, theiler: usize },

    #[error("no scaling region of at least {min_width} local slopes found")]
    NoScalingRegion { min_width: usize, profile: SlopeProfile },

    #[error("{fraction:.1}% of points are exact duplicates (limit 10%)")]
    TooManyDuplicates { fraction: f64 },

    #[error("singular map: {0}")]
    SingularMap(String),

    #[error("quadrature resolution too coarse: normalization drift {drift:.3e}")]
    Resolution { drift: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate point ({x}, {y}): {reason}")]
    DegeneratePoint { x: f64, y: f64, reason: String },

    #[error("orbit diverged at step {step} (|x| = {magnitude:.3e})")]
    Divergence { step: usize, magnitude: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("insufficient data: {usable} usable rows, need at least {required}")]
    InsufficientData { usable: usize, required: usize },

    #[error("rows with non-numeric fields: {0:?}")]
    NonNumericRows(Vec<usize>),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoScalingRegion { .. }
                | Error::Resolution { .. }
                | Error::SingularMap(_)
                | Error::DegeneratePoint { .. }
                | Error::Divergence { .. }
                | Error::DegeneratePairs { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
