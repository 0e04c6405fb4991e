use std::fmt;

use thiserror::Error;

/// Per-term values of one loss evaluation, carried by numeric errors so a
/// failing epoch can be diagnosed after the fact.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSnapshot {
    pub a1: f64,
    pub a2: f64,
    pub potential: f64,
    pub l2: f64,
    pub loss: f64,
}

impl fmt::Display for LossSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "a1={:e} a2={:e} potential={:e} l2={:e} loss={:e}",
            self.a1, self.a2, self.potential, self.l2, self.loss
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point not interior to the sampling region")]
    PointNotInterior,

    #[error("fractional order out of range: s = {0} (need 0 < s < 1)")]
    FractionalOrderOutOfRange(f64),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid feature set: {0}")]
    InvalidFeatures(String),

    #[error("numeric overflow in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("non-finite network output at sample {index}")]
    NonFiniteOutput { index: usize },

    #[error("non-finite estimator term at sample {index}")]
    NonFiniteSummand { index: usize },

    #[error("empty interior batch")]
    EmptyInteriorBatch,

    #[error("degenerate trial function (l2 estimate {0:e})")]
    DegenerateTrialFunction(f64),

    #[error("potential singularity too strong ({rejected} of {total} points rejected)")]
    PotentialSingularity { rejected: usize, total: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(LossSnapshot),

    #[error("optimizer divergence at epoch {epoch}, parameter {index}")]
    OptimizerDivergence { epoch: usize, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checkpoint format error in {section}: {message}")]
    Checkpoint { section: &'static str, message: String },

    #[error("no reference entry for {0}")]
    MissingReference(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
