use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum SdrError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("covariance singular: {0}")]
    SingularCovariance(String),

    #[error("degenerate score/direction pairing for direction {direction}: |theta'Z'X beta| = {denominator:e}")]
    DegeneratePairing { direction: usize, denominator: f64 },

    #[error("degenerate fold {fold}: {message}")]
    DegenerateFold { fold: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage {stage} partition {partition}: {source}")]
    Partition {
        stage: usize,
        partition: usize,
        #[source]
        source: Box<SdrError>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SdrError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        SdrError::Validation(msg.into())
    }

    /// True for errors that come from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            SdrError::SingularCovariance(_)
            | SdrError::DegeneratePairing { .. }
            | SdrError::Numerical(_) => true,
            SdrError::Partition { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            SdrError::Io { .. } => true,
            SdrError::Partition { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, SdrError>;
