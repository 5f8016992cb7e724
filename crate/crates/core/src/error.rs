use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite loss {value} ({context})")]
    NonFinite { value: f64, context: String },

    #[error("unknown target `{target}`; registered targets: {registered:?}")]
    UnknownTarget {
        target: String,
        registered: Vec<String>,
    },

    #[error("image {height}x{width} is not divisible by patch side {patch}")]
    Indivisible {
        height: usize,
        width: usize,
        patch: usize,
    },

    #[error("prompt of {prompt_len} tokens does not fit max_len {max_len}")]
    PromptTooLong { prompt_len: usize, max_len: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown label `{label}`; label set is {label_set:?}")]
    UnknownLabel {
        label: String,
        label_set: Vec<String>,
    },

    #[error("image format error in {path}: {msg}")]
    ImageFormat { path: PathBuf, msg: String },

    #[error("split {index} failed: {msg}")]
    Probe { index: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("gradient check exceeded threshold: {worst} in `{param}` (max rel error {error:e} > {threshold:e})")]
    GradCheck {
        param: String,
        worst: String,
        error: f64,
        threshold: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
