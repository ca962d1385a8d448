use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GcdeError>;

#[derive(Debug, Error)]
pub enum GcdeError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite value produced: {0}")]
    NonFinite(String),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, losses: Vec<f64> },

    #[error("unrolled jacobian too large: {size} exceeds the limit of {limit}")]
    OracleGuard { size: usize, limit: usize },

    #[error("parse error at {}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GcdeError {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        GcdeError::Shape { op, lhs, rhs }
    }
}
