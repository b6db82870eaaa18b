use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("correspondence set is empty")]
    EmptyCorrespondences,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("input is empty")]
    EmptyInput,

    #[error("invalid point cloud: {0}")]
    InvalidPointCloud(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation is not available for 2D point clouds")]
    Unsupported2D,

    #[error("too few correspondences: need {needed}, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },

    #[error("every RANSAC sample was degenerate")]
    NoValidHypothesis,

    #[error("no overlap: nearest-neighbor pass found no pairs within the rejection threshold")]
    NoOverlap,

    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("scene generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("record {0} is missing its ground-truth transform")]
    MissingGroundTruth(String),

    #[error("id {0} appears in more than one split")]
    SplitOverlap(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate_input",
            Error::EmptyCorrespondences => "empty_correspondences",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::EmptyInput => "empty_input",
            Error::InvalidPointCloud(_) => "invalid_point_cloud",
            Error::InvalidTransform(_) => "invalid_transform",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Unsupported2D => "unsupported_2d",
            Error::TooFewCorrespondences { .. } => "too_few_correspondences",
            Error::NoValidHypothesis => "no_valid_hypothesis",
            Error::NoOverlap => "no_overlap",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::EmptyDataset => "empty_dataset",
            Error::GenerationFailed { .. } => "generation_failed",
            Error::MissingGroundTruth(_) => "missing_ground_truth",
            Error::SplitOverlap(_) => "split_overlap",
            Error::Format { .. } => "format_error",
            Error::Io { .. } => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::Json(_)
            | Error::EmptyDataset
            | Error::MissingGroundTruth(_)
            | Error::SplitOverlap(_)
            | Error::InvalidPointCloud(_)
            | Error::InvalidTransform(_)
            | Error::EmptyInput
            | Error::Unsupported2D
            | Error::GenerationFailed { .. } => 3,
            _ => 4,
        }
    }
}
