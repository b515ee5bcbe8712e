//! Vehicle light corner detection toolkit.
//!
//! Detects the four corners of a vehicle head/tail light from a crop taken
//! around a (possibly noisy) light center point. The crate covers the full
//! desk-scale pipeline:
//!
//! - crop extraction in two context modes (whole scene vs. vehicle-only with
//!   black padding), target normalization, and horizontal-flip augmentation
//!   ([`geometry`]),
//! - center-point noise injection emulating upstream detector error
//!   ([`noise`]),
//! - the masked corner regression loss with its evaluation companions: ADE,
//!   percent error, corner-box IoU and detection rate ([`metrics`]),
//! - a small trainable CNN regressor with hand-rolled reverse-mode
//!   differentiation, Adam, and stochastic weight averaging ([`model`]),
//! - JSON-Lines annotation ingestion, stratified splitting, and a synthetic
//!   scene generator that doubles as a verification oracle ([`dataset`]),
//! - experiment configuration, report emission, overlay rendering, and the
//!   command entry points used by the CLI ([`config`], [`report`],
//!   [`render`], [`commands`]).

pub mod commands;
pub mod config;
pub mod dataset;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod render;
pub mod report;
pub mod seed;

use std::path::PathBuf;

/// Crate-wide error type; variants group failures by category so the CLI can
/// report them uniformly.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A configuration value or combination is unusable.
    #[error("config error: {0}")]
    Config(String),
    /// An annotation record failed validation; `line` is 1-based.
    #[error("annotation error at line {line}: {msg}")]
    Annotation { line: usize, msg: String },
    /// A checkpoint file is malformed or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// A non-finite value appeared during a forward or backward pass.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    /// Filesystem failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Image decode/encode failure with the offending path attached.
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Stable one-word category used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Config(_) => "config",
            Error::Annotation { .. } => "annotation",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFinite(_) => "non-finite",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
