//! Calibration-free SSVEP decoding toolkit.
//!
//! The crate bundles a small reverse-mode autodiff core ([`diff`]), an
//! on-disk epoch format with preprocessing ([`signal`]), the decoding
//! network (distribution-remixing augmentation, an adaptive spectrum
//! denoiser, temporal/spatial convolutions and a fully connected
//! classifier), training-free CCA/FBCCA recognizers, a leave-one-subject-out
//! training harness, evaluation statistics and a synthetic corpus
//! generator.

pub mod asdm;
pub mod augment;
pub mod baselines;
pub mod diff;
pub mod eval;
pub mod model;
pub mod signal;
pub mod synth;
pub mod train;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numeric contract violated: {0}")]
    Numeric(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("unknown channel: {0}")]
    Lookup(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
