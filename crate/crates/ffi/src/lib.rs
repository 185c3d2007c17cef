//! C ABI over the sen2pro library.
//!
//! Conventions:
//! - Every fallible function returns an [`S2pStatus`]; results go through
//!   out-pointers. On failure the out-pointers are left untouched and
//!   [`s2p_last_error_message`] describes the error.
//! - Handles are opaque and owned by the caller once returned; release them
//!   with the matching `_free` function. Freeing NULL is a no-op.
//! - Strings are NUL-terminated UTF-8. JSON configuration strings may be
//!   NULL to select the defaults.
//! - Panics never cross the boundary; they surface as `S2P_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sen2pro::theory::{gaussian_kl, GaussianSpec};
use sen2pro::{
    CombinedEmbedding, DistanceConfig, EncoderConfig, Error, PipelineConfig, ToyEncoder,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S2pStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string was not valid UTF-8 or a buffer had the wrong length.
    InvalidArgument = 2,
    /// Input rejected by the library (bad configuration, shapes, values).
    Validation = 3,
    /// File, network or service failure.
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// How the balance factor is chosen in [`s2p_distance`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S2pAlphaMode {
    /// Ratio of the mean and variance l1 distances of the pair.
    PerPair = 0,
    /// The caller-supplied `alpha`.
    Fixed = 1,
}

/// Toy transformer encoder.
pub struct S2pEncoder(ToyEncoder);

/// Mean and diagonal variance of one sentence.
pub struct S2pEmbedding(CombinedEmbedding);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(S2pStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.exit_code() == 2 {
            S2pStatus::Io
        } else {
            S2pStatus::Validation
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(S2pStatus::NullPointer, format!("{name} is NULL"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(S2pStatus::InvalidArgument, message.into())
}

/// Runs `f`, records any error for [`s2p_last_error_message`] and converts
/// panics into `S2pStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> S2pStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            S2pStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            S2pStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn json_arg<T: serde::de::DeserializeOwned + Default>(
    p: *const c_char,
    name: &str,
) -> Result<T, Failure> {
    if p.is_null() {
        return Ok(T::default());
    }
    let text = str_arg(p, name)?;
    serde_json::from_str(text).map_err(|e| Failure(S2pStatus::Validation, format!("{name}: {e}")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, out_len: usize, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    if out_len != src.len() {
        return Err(invalid(format!(
            "{name} has length {out_len}, expected {}",
            src.len()
        )));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. The pointer stays valid until the next call into this
/// library on the same thread.
#[no_mangle]
pub extern "C" fn s2p_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn s2p_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an encoder from an encoder configuration in JSON (NULL for the
/// defaults).
///
/// # Safety
///
/// `config_json` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2p_encoder_new(
    config_json: *const c_char,
    out: *mut *mut S2pEncoder,
) -> S2pStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: EncoderConfig = json_arg(config_json, "config_json")?;
        let encoder = ToyEncoder::new(config)?;
        *out = Box::into_raw(Box::new(S2pEncoder(encoder)));
        Ok(())
    })
}

/// # Safety
///
/// `encoder` must be NULL or a handle from [`s2p_encoder_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn s2p_encoder_free(encoder: *mut S2pEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Embedding dimension, or 0 for NULL.
///
/// # Safety
///
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2p_encoder_dim(encoder: *const S2pEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.0.dim())
}

/// Deterministic (dropout off) encoding of one sentence into `out`, which
/// must hold exactly `s2p_encoder_dim` values.
///
/// # Safety
///
/// `encoder` must be a live handle, `sentence` a NUL-terminated string and
/// `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn s2p_encode(
    encoder: *const S2pEncoder,
    sentence: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> S2pStatus {
    guard(|| {
        let encoder = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        let sentence = str_arg(sentence, "sentence")?;
        let v = encoder.0.encode(sentence, None)?;
        copy_out(&v, out, out_len, "out")
    })
}

/// Runs the full pipeline over `n` sentences with a pipeline configuration
/// in JSON (NULL for the defaults). On success `out[i]` receives a new
/// handle for sentence `i`.
///
/// # Safety
///
/// `sentences` must point to `n` NUL-terminated strings and `out` must be
/// valid for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn s2p_embed_corpus(
    config_json: *const c_char,
    sentences: *const *const c_char,
    n: usize,
    out: *mut *mut S2pEmbedding,
) -> S2pStatus {
    guard(|| {
        if sentences.is_null() {
            return Err(null("sentences"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let config: PipelineConfig = json_arg(config_json, "config_json")?;
        let corpus = std::slice::from_raw_parts(sentences, n)
            .iter()
            .enumerate()
            .map(|(i, &s)| str_arg(s, &format!("sentences[{i}]")).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let embeddings = sen2pro::embed_corpus(&corpus, &config)?;
        for (i, e) in embeddings.into_iter().enumerate() {
            *out.add(i) = Box::into_raw(Box::new(S2pEmbedding(e)));
        }
        Ok(())
    })
}

/// Builds an embedding from caller-supplied mean and variances.
///
/// # Safety
///
/// `mu` and `sigma_diag` must be valid for `dim` reads; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn s2p_embedding_new(
    mu: *const f64,
    sigma_diag: *const f64,
    dim: usize,
    out: *mut *mut S2pEmbedding,
) -> S2pStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mu = slice_arg(mu, dim, "mu")?.to_vec();
        let sigma = slice_arg(sigma_diag, dim, "sigma_diag")?.to_vec();
        let e = CombinedEmbedding::new("ffi", mu, sigma)?;
        *out = Box::into_raw(Box::new(S2pEmbedding(e)));
        Ok(())
    })
}

/// # Safety
///
/// `embedding` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2p_embedding_free(embedding: *mut S2pEmbedding) {
    if !embedding.is_null() {
        drop(Box::from_raw(embedding));
    }
}

/// Dimension of an embedding, or 0 for NULL.
///
/// # Safety
///
/// `embedding` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2p_embedding_dim(embedding: *const S2pEmbedding) -> usize {
    embedding.as_ref().map_or(0, |e| e.0.dim())
}

/// Copies the mean into `out` (exactly `dim` values).
///
/// # Safety
///
/// `embedding` must be a live handle and `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn s2p_embedding_mu(
    embedding: *const S2pEmbedding,
    out: *mut f64,
    out_len: usize,
) -> S2pStatus {
    guard(|| {
        let e = embedding.as_ref().ok_or_else(|| null("embedding"))?;
        copy_out(e.0.mu(), out, out_len, "out")
    })
}

/// Copies the diagonal variances into `out` (exactly `dim` values).
///
/// # Safety
///
/// `embedding` must be a live handle and `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn s2p_embedding_sigma(
    embedding: *const S2pEmbedding,
    out: *mut f64,
    out_len: usize,
) -> S2pStatus {
    guard(|| {
        let e = embedding.as_ref().ok_or_else(|| null("embedding"))?;
        copy_out(e.0.sigma_diag(), out, out_len, "out")
    })
}

/// `(1 - alpha) * l1(mu_a - mu_b) + alpha * l1(sigma_a - sigma_b)`.
/// `alpha` is read only in `S2P_ALPHA_MODE_FIXED`. Per-pair mode can give
/// negative values.
///
/// # Safety
///
/// `a` and `b` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2p_distance(
    a: *const S2pEmbedding,
    b: *const S2pEmbedding,
    mode: S2pAlphaMode,
    alpha: f64,
    out: *mut f64,
) -> S2pStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("a"))?;
        let b = b.as_ref().ok_or_else(|| null("b"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if a.0.dim() != b.0.dim() {
            return Err(invalid(format!(
                "dimensions differ: {} vs {}",
                a.0.dim(),
                b.0.dim()
            )));
        }
        let cfg = match mode {
            S2pAlphaMode::PerPair => DistanceConfig::per_pair(),
            S2pAlphaMode::Fixed => DistanceConfig::fixed(alpha),
        };
        cfg.validate()?;
        *out = sen2pro::distance(&a.0, &b.0, &cfg);
        Ok(())
    })
}

/// KL(p || q) between diagonal Gaussians of dimension `k`.
///
/// # Safety
///
/// The four arrays must be valid for `k` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2p_gaussian_kl(
    mu_p: *const f64,
    var_p: *const f64,
    mu_q: *const f64,
    var_q: *const f64,
    k: usize,
    out: *mut f64,
) -> S2pStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = GaussianSpec::new(
            slice_arg(mu_p, k, "mu_p")?.to_vec(),
            slice_arg(var_p, k, "var_p")?.to_vec(),
        )?;
        let q = GaussianSpec::new(
            slice_arg(mu_q, k, "mu_q")?.to_vec(),
            slice_arg(var_q, k, "var_q")?.to_vec(),
        )?;
        *out = gaussian_kl(&p, &q)?;
        Ok(())
    })
}
