use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid genome: {0}")]
    InvalidGenome(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty agent subset")]
    EmptySubset,

    #[error("archive is empty")]
    EmptyArchive,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("archive has {size} entries, fewer than k = {k}")]
    ArchiveTooSmall { size: usize, k: usize },

    #[error("degenerate affinity: all points identical, only a single cluster exists")]
    DegenerateAffinity,

    #[error("replay mismatch for eval {eval_id}: stored behavior differs from recomputed by {max_abs_diff:e}")]
    ReplayMismatch { eval_id: u64, max_abs_diff: f64 },

    #[error("evaluation {eval_id} failed: {source}")]
    Evaluation {
        eval_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),

    #[error("session: {0}")]
    Session(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Short stable identifier, used in machine-readable diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGenome(_) => "invalid_genome",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptySubset => "empty_subset",
            Error::EmptyArchive => "empty_archive",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ArchiveTooSmall { .. } => "archive_too_small",
            Error::DegenerateAffinity => "degenerate_affinity",
            Error::ReplayMismatch { .. } => "replay_mismatch",
            Error::Evaluation { .. } => "evaluation_failed",
            Error::Embed(_) => "embedder",
            Error::Session(_) => "session",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}
