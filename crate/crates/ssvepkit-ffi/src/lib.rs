//! C ABI surface for checkpoint loading and inference.
//!
//! A checkpoint is opened into an opaque [`SsvepModel`] handle; callers
//! feed single trials as flat channel-major `f64` buffers and get back a
//! class index or the full probability row. Every fallible call returns
//! an [`SsvepStatus`]; out-parameters are written only on `Ok`.
//!
//! Thread safety: a handle may be shared across threads for concurrent
//! prediction (inference never mutates the model); load and free must
//! not race with other calls on the same handle.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ssvepkit::model::{load_checkpoint, param_count, predict, predict_proba, ModelConfig, NetworkParams};
use ssvepkit::Error;

/// Call outcome; non-zero means the out-parameters were not written.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsvepStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The checkpoint could not be read.
    IoError = 3,
    /// The checkpoint bytes are malformed.
    FormatError = 4,
    /// A buffer length disagrees with the model geometry.
    InvalidInput = 5,
    /// Unexpected internal failure.
    InternalError = 6,
}

fn status_of(e: &Error) -> SsvepStatus {
    match e {
        Error::Io(_) => SsvepStatus::IoError,
        Error::Format { .. } => SsvepStatus::FormatError,
        Error::Dim(_) | Error::Parameter(_) | Error::Lookup(_) | Error::Config(_) => {
            SsvepStatus::InvalidInput
        }
        Error::Numeric(_) => SsvepStatus::InternalError,
    }
}

/// Opaque loaded model; create with `ssvep_model_load`, release with
/// `ssvep_model_free`.
pub struct SsvepModel {
    cfg: ModelConfig,
    params: NetworkParams,
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn ssvep_status_message(status: SsvepStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        SsvepStatus::Ok => b"ok\0",
        SsvepStatus::NullArgument => b"null pointer argument\0",
        SsvepStatus::InvalidUtf8 => b"string argument is not valid UTF-8\0",
        SsvepStatus::IoError => b"checkpoint could not be read\0",
        SsvepStatus::FormatError => b"checkpoint bytes are malformed\0",
        SsvepStatus::InvalidInput => b"buffer size disagrees with model geometry\0",
        SsvepStatus::InternalError => b"internal error\0",
    };
    s.as_ptr() as *const c_char
}

/// Loads a checkpoint file into a fresh handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_load(
    path: *const c_char,
    out: *mut *mut SsvepModel,
) -> SsvepStatus {
    if path.is_null() || out.is_null() {
        return SsvepStatus::NullArgument;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => return SsvepStatus::InvalidUtf8,
    };
    match load_checkpoint(std::path::Path::new(path)) {
        Ok((cfg, params)) => {
            *out = Box::into_raw(Box::new(SsvepModel { cfg, params }));
            SsvepStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Releases a handle; a null pointer is a no-op.
///
/// # Safety
/// `model` must have come from `ssvep_model_load` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_free(model: *mut SsvepModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected channels per trial; 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_n_channels(model: *const SsvepModel) -> u32 {
    model.as_ref().map_or(0, |m| m.cfg.n_channels as u32)
}

/// Expected samples per channel; 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_n_samples(model: *const SsvepModel) -> u32 {
    model.as_ref().map_or(0, |m| m.cfg.n_samples as u32)
}

/// Number of output classes; 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_n_classes(model: *const SsvepModel) -> u32 {
    model.as_ref().map_or(0, |m| m.cfg.n_classes as u32)
}

/// Trainable parameter count; 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_param_count(model: *const SsvepModel) -> u64 {
    model.as_ref().map_or(0, |m| param_count(&m.cfg) as u64)
}

/// Classifies one trial of `n_channels * n_samples` channel-major values.
///
/// # Safety
/// `data` must point to `len` readable doubles; `out_class` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_predict(
    model: *const SsvepModel,
    data: *const f64,
    len: usize,
    out_class: *mut u32,
) -> SsvepStatus {
    if model.is_null() || data.is_null() || out_class.is_null() {
        return SsvepStatus::NullArgument;
    }
    let m = &*model;
    if len != m.cfg.n_channels * m.cfg.n_samples {
        return SsvepStatus::InvalidInput;
    }
    let x = std::slice::from_raw_parts(data, len);
    let result = catch_unwind(AssertUnwindSafe(|| predict(x, 1, &m.params, &m.cfg)));
    match result {
        Ok(Ok(labels)) => {
            *out_class = labels[0] as u32;
            SsvepStatus::Ok
        }
        Ok(Err(e)) => status_of(&e),
        Err(_) => SsvepStatus::InternalError,
    }
}

/// Writes the per-class probability row for one trial.
///
/// # Safety
/// `data` must point to `len` readable doubles; `out_probs` must hold
/// `probs_len` writable doubles, with `probs_len == n_classes`.
#[no_mangle]
pub unsafe extern "C" fn ssvep_model_predict_proba(
    model: *const SsvepModel,
    data: *const f64,
    len: usize,
    out_probs: *mut f64,
    probs_len: usize,
) -> SsvepStatus {
    if model.is_null() || data.is_null() || out_probs.is_null() {
        return SsvepStatus::NullArgument;
    }
    let m = &*model;
    if len != m.cfg.n_channels * m.cfg.n_samples || probs_len != m.cfg.n_classes {
        return SsvepStatus::InvalidInput;
    }
    let x = std::slice::from_raw_parts(data, len);
    let result = catch_unwind(AssertUnwindSafe(|| predict_proba(x, 1, &m.params, &m.cfg)));
    match result {
        Ok(Ok(probs)) => {
            std::slice::from_raw_parts_mut(out_probs, probs_len).copy_from_slice(&probs);
            SsvepStatus::Ok
        }
        Ok(Err(e)) => status_of(&e),
        Err(_) => SsvepStatus::InternalError,
    }
}
