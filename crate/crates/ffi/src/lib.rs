//! C ABI over checkpoint loading and likelihood-ratio scoring.
//!
//! Models and prefixes are opaque heap handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DsStatus`]; on failure the message is available from
//! [`ds_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use domainsift::corpus::{encode, CorpusRecord};
use domainsift::prefix::DomainPrefix;
use domainsift::scoring::{Scorer, SelectionConfig};
use domainsift::tiny_lm::{load_params, load_prefix, log_likelihood, LmParams};
use domainsift::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Shape = 6,
    Config = 7,
    Argument = 8,
    Divergence = 9,
    Panic = 10,
}

impl From<&Error> for DsStatus {
    fn from(e: &Error) -> Self {
        match e.category() {
            "io" | "output-exists" => DsStatus::Io,
            "parse" | "framing" | "duplicate-id" => DsStatus::Parse,
            "checkpoint" => DsStatus::Checkpoint,
            "shape" => DsStatus::Shape,
            "config" => DsStatus::Config,
            "divergence" => DsStatus::Divergence,
            _ => DsStatus::Argument,
        }
    }
}

/// A frozen language model.
pub struct DsModel(LmParams);

/// A tuned domain prefix.
pub struct DsPrefix(DomainPrefix);

/// Score of one text: log-likelihoods with and without the prefix, in nats.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsScore {
    pub log_p_base: f64,
    pub log_p_cond: f64,
    pub log_ratio: f64,
    pub tokens_scored: usize,
    /// Whether the text was cut at the model's context length.
    pub truncated: bool,
    /// `log_ratio > ln(tau)`.
    pub selected: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (DsStatus, String)>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DsStatus, String) {
    (DsStatus::from(&e), format!("{}: {e}", e.category()))
}

fn null(what: &str) -> (DsStatus, String) {
    (DsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, (DsStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    // SAFETY: caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|e| (DsStatus::InvalidUtf8, format!("path is not UTF-8: {e}")))?;
    Ok(PathBuf::from(s))
}

unsafe fn text_arg<'a>(text: *const u8, len: usize) -> Result<&'a [u8], (DsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if text.is_null() {
        return Err(null("text"));
    }
    // SAFETY: caller guarantees `len` readable bytes at `text`.
    Ok(unsafe { std::slice::from_raw_parts(text, len) })
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_model_load(path: *const c_char, out: *mut *mut DsModel) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path) }?;
        let params = load_params(&path).map_err(lib_err)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(DsModel(params))) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ds_model_load`] and not be freed twice. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn ds_model_free(model: *mut DsModel) {
    if !model.is_null() {
        // SAFETY: pointer came from Box::into_raw in ds_model_load.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Parameter count of a model, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_model_num_params(model: *const DsModel) -> usize {
    // SAFETY: caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.0.num_params())
}

/// Loads a prefix checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_prefix_load(path: *const c_char, out: *mut *mut DsPrefix) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path) }?;
        let (prefix, _) = load_prefix(&path).map_err(lib_err)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(DsPrefix(prefix))) };
        Ok(())
    })
}

/// # Safety
/// `prefix` must come from [`ds_prefix_load`] and not be freed twice. NULL
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn ds_prefix_free(prefix: *mut DsPrefix) {
    if !prefix.is_null() {
        // SAFETY: pointer came from Box::into_raw in ds_prefix_load.
        drop(unsafe { Box::from_raw(prefix) });
    }
}

/// Log-likelihood in nats of `len` bytes of text (BOS … EOS), conditioned on
/// `prefix` when it is non-NULL.
///
/// # Safety
/// `model` must be a live handle, `prefix` NULL or a live handle, `text`
/// readable for `len` bytes and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_log_likelihood(
    model: *const DsModel,
    prefix: *const DsPrefix,
    text: *const u8,
    len: usize,
    out: *mut f64,
) -> DsStatus {
    guard(|| {
        // SAFETY: caller contract.
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        let prefix = unsafe { prefix.as_ref() }.map(|p| &p.0);
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = unsafe { text_arg(text, len) }?;
        if let Some(p) = prefix {
            p.validate_against(&model.0.config).map_err(lib_err)?;
        }
        let seq = encode(bytes, model.0.config.context_len);
        let ll = log_likelihood(&model.0, prefix, &seq).map_err(lib_err)?;
        unsafe { *out = ll };
        Ok(())
    })
}

/// Scores one text against the prefix and applies threshold `tau`.
///
/// # Safety
/// `model` and `prefix` must be live handles, `text` readable for `len`
/// bytes and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_score(
    model: *const DsModel,
    prefix: *const DsPrefix,
    text: *const u8,
    len: usize,
    tau: f64,
    out: *mut DsScore,
) -> DsStatus {
    guard(|| {
        // SAFETY: caller contract.
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        let prefix = unsafe { prefix.as_ref() }.ok_or_else(|| null("prefix"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = unsafe { text_arg(text, len) }?;
        let text = std::str::from_utf8(bytes)
            .map_err(|e| (DsStatus::InvalidUtf8, format!("text is not UTF-8: {e}")))?;
        let cfg = SelectionConfig { tau, workers: 1, ..Default::default() };
        let scorer = Scorer::new(&model.0, &prefix.0, cfg).map_err(lib_err)?;
        let s = scorer.score(&CorpusRecord::new("ffi", text)).map_err(lib_err)?;
        unsafe {
            *out = DsScore {
                log_p_base: s.log_p_base,
                log_p_cond: s.log_p_cond,
                log_ratio: s.log_ratio,
                tokens_scored: s.tokens_scored,
                truncated: s.truncated,
                selected: s.selected,
            }
        };
        Ok(())
    })
}
