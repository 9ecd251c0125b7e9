use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cloth spec: {0}")]
    InvalidSpec(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("scene parse error: {0}")]
    SceneParse(String),

    #[error("invalid solver config: {0}")]
    InvalidSolverConfig(String),

    #[error("solver did not converge after {iterations} iterations (relative change {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Last iterate, usable by callers that accept unconverged steps.
        last: Box<crate::cloth::SimState>,
    },

    #[error("non-finite state after step at time index {0}")]
    NonFinite(usize),

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("DSDS factor {factor} incompatible with {dimension} = {value}: ({value} - 1) is not divisible by {factor}")]
    Indivisible {
        factor: usize,
        dimension: &'static str,
        value: usize,
    },

    #[error("invalid DSDS factor {0} (must be >= 2)")]
    InvalidFactor(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("frame index {t} out of range (have {available} frames, bootstrap disabled)")]
    FrameOutOfRange { t: usize, available: usize },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("missing prediction: expected {expected} patches, got {got}")]
    MissingPrediction { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model mismatch: {field}: model has {model}, scene needs {scene}")]
    ModelMismatch {
        field: &'static str,
        model: String,
        scene: String,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
