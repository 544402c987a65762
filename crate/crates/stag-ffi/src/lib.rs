//! C ABI over the stag pipeline: load trained model files, encode feature
//! files into video representations, and score them with trained SVMs.
//!
//! Handles are opaque and must be released with the matching `_free`
//! function. Every fallible call returns a `StagStatus`; on failure the
//! thread-local message from `stag_last_error_message` describes the
//! cause. Handles are safe to share across threads for reads; the error
//! message buffer is per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use stag::classify::{svm_margin, svm_predict};
use stag::dataio::read_features;
use stag::pipeline::{
    encode_video, load_model, load_svm, Emotion, Label, LocalFeatureSequence, ModelFile, SvmFile,
};
use stag::StagError;

/// Result of every fallible call in this API.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StagStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A path or string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The operating system reported an I/O failure.
    Io = 3,
    /// A file or argument was structurally invalid (bad magic, wrong
    /// version, shape mismatch, unknown field).
    BadData = 4,
    /// A numerical invariant failed during computation.
    Numerical = 5,
    /// The caller's output buffer is smaller than the result.
    BufferTooSmall = 6,
    /// An internal invariant failed; the handle is still valid.
    Internal = 7,
}

/// A loaded aggregation model: pipeline configuration plus fitted tensors
/// for one emotion.
pub struct StagModel {
    file: ModelFile,
}

/// A trained linear SVM for one emotion.
pub struct StagSvm {
    file: SvmFile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    // Interior NULs cannot come from our error formatting, but the API
    // must never panic over one.
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(e: &StagError) -> StagStatus {
    match e {
        StagError::Io { .. } => StagStatus::Io,
        StagError::Numerical(_) => StagStatus::Numerical,
        _ => StagStatus::BadData,
    }
}

fn fail(e: StagError) -> StagStatus {
    let status = status_of(&e);
    set_error(&e.to_string());
    status
}

fn guard(body: impl FnOnce() -> StagStatus) -> StagStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            StagStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be a valid nul-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, StagStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(StagStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid utf-8");
            Err(StagStatus::InvalidUtf8)
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn stag_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn stag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads an aggregation model written by `stag train`. On success stores a
/// handle in `out`; release it with `stag_model_free`.
///
/// # Safety
/// `path` must be nul-terminated; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn stag_model_load(
    path: *const c_char,
    out: *mut *mut StagModel,
) -> StagStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output handle");
            return StagStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_model(path) {
            Ok(file) => {
                *out = Box::into_raw(Box::new(StagModel { file }));
                StagStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from `stag_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn stag_model_free(model: *mut StagModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the representation vector this model produces.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn stag_model_output_dim(
    model: *const StagModel,
    out: *mut usize,
) -> StagStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return StagStatus::NullArgument;
        }
        let file = &(*model).file;
        *out = file.config.output_dim(file.params.input_dim);
        StagStatus::Ok
    })
}

/// Emotion this model was trained for, as a static lowercase string.
/// Returns null only for a null handle.
///
/// # Safety
/// `model` must be valid if non-null.
#[no_mangle]
pub unsafe extern "C" fn stag_model_emotion(model: *const StagModel) -> *const c_char {
    if model.is_null() {
        return std::ptr::null();
    }
    let name: &'static str = match (*model).file.emotion {
        Emotion::Anger => "anger\0",
        Emotion::Happiness => "happiness\0",
        Emotion::Surprise => "surprise\0",
        Emotion::Disgust => "disgust\0",
        Emotion::Contentment => "contentment\0",
        Emotion::Sadness => "sadness\0",
    };
    name.as_ptr() as *const c_char
}

/// Encodes one feature file into the model's video representation. `out`
/// must hold at least `stag_model_output_dim` values; `written` receives
/// the number of values stored.
///
/// # Safety
/// All pointers must be valid and `out` must have capacity `out_cap`.
#[no_mangle]
pub unsafe extern "C" fn stag_encode_feature_file(
    model: *const StagModel,
    features_path: *const c_char,
    out: *mut f64,
    out_cap: usize,
    written: *mut usize,
) -> StagStatus {
    guard(|| {
        if model.is_null() || out.is_null() || written.is_null() {
            set_error("null argument");
            return StagStatus::NullArgument;
        }
        let path = match path_arg(features_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let file = &(*model).file;
        let payload = match read_features(path) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        let seq = match LocalFeatureSequence::new(
            path.display().to_string(),
            String::new(),
            file.emotion,
            Label::Real,
            payload.fps as f64,
            payload.frames,
            payload.positions,
            payload.dim,
            payload.data,
        ) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let rep = match encode_video(&seq, &file.config, &file.params) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        if out_cap < rep.values.len() {
            set_error("output buffer too small for the representation");
            return StagStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(rep.values.as_ptr(), out, rep.values.len());
        *written = rep.values.len();
        StagStatus::Ok
    })
}

/// Loads an SVM written by `stag train`. Release with `stag_svm_free`.
///
/// # Safety
/// `path` must be nul-terminated; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn stag_svm_load(path: *const c_char, out: *mut *mut StagSvm) -> StagStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output handle");
            return StagStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_svm(path) {
            Ok(file) => {
                *out = Box::into_raw(Box::new(StagSvm { file }));
                StagStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases an SVM handle. Null is a no-op.
///
/// # Safety
/// `svm` must come from `stag_svm_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn stag_svm_free(svm: *mut StagSvm) {
    if !svm.is_null() {
        drop(Box::from_raw(svm));
    }
}

/// Feature dimension the SVM expects.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn stag_svm_dim(svm: *const StagSvm, out: *mut usize) -> StagStatus {
    guard(|| {
        if svm.is_null() || out.is_null() {
            set_error("null argument");
            return StagStatus::NullArgument;
        }
        *out = (*svm).file.model.weights.len();
        StagStatus::Ok
    })
}

/// Signed distance of `features` from the decision boundary. Positive
/// margins mean the genuine class.
///
/// # Safety
/// `features` must point to `len` readable values; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn stag_svm_margin(
    svm: *const StagSvm,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> StagStatus {
    guard(|| {
        if svm.is_null() || features.is_null() || out.is_null() {
            set_error("null argument");
            return StagStatus::NullArgument;
        }
        let x = std::slice::from_raw_parts(features, len);
        match svm_margin(&(*svm).file.model, x) {
            Ok(m) => {
                *out = m;
                StagStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Hard decision for `features`: 1 for the genuine class, 0 for the posed
/// class.
///
/// # Safety
/// `features` must point to `len` readable values; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn stag_svm_predict(
    svm: *const StagSvm,
    features: *const f64,
    len: usize,
    out: *mut i32,
) -> StagStatus {
    guard(|| {
        if svm.is_null() || features.is_null() || out.is_null() {
            set_error("null argument");
            return StagStatus::NullArgument;
        }
        let x = std::slice::from_raw_parts(features, len);
        match svm_predict(&(*svm).file.model, x) {
            Ok(label) => {
                *out = if label == Label::Real { 1 } else { 0 };
                StagStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
