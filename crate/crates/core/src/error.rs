use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage a failure is attributed to by [`crate::stat_tests::run_all_tests`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    KnotSelection,
    Design,
    Fit,
    SpatialMedian,
    Moments,
    Statistic,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::KnotSelection => "knot selection",
            Stage::Design => "design",
            Stage::Fit => "fit",
            Stage::SpatialMedian => "spatial median",
            Stage::Moments => "moment estimation",
            Stage::Statistic => "statistic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular design: {block} block is rank deficient (reciprocal condition {rcond:.3e})")]
    Singular { block: String, rcond: f64 },

    #[error("degenerate scale: coordinate {index} collapsed to {value:.3e}")]
    DegenerateScale { index: usize, value: f64 },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent input data.
    Data,
    /// The numerics broke down on otherwise valid input.
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Contract(_) | Error::Parse { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::Domain(_)
            | Error::Singular { .. }
            | Error::DegenerateScale { .. }
            | Error::Degenerate(_) => ErrorKind::Numerical,
            Error::Stage { source, .. } => source.kind(),
        }
    }

    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
