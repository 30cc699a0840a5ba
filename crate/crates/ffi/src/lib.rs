//! C ABI over the qsep library.
//!
//! Every function returns a [`QsepStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`qsep_last_error`]. Panics are
//! caught at the boundary and reported as [`QsepStatus::Panic`].
//!
//! Buffers are caller-owned. The only allocations handed to the caller are
//! [`QsepModel`] handles (release with [`qsep_model_free`]) and strings
//! (release with [`qsep_string_free`]).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qsep::dsp::AudioClip;
use qsep::querygen::{self, RegionalDescription, SceneDescription, TextQuery};
use qsep::separator::{self, Checkpoint, QueryEmbedding};
use qsep::{metrics, Error};

/// Status codes; the nonzero values match the `qsep` executable's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QsepStatus {
    Ok = 0,
    /// Null pointer, bad length, invalid UTF-8 or other caller error.
    Usage = 1,
    /// File missing, unreadable or malformed.
    Io = 2,
    /// Numeric failure inside the library.
    Numeric = 3,
    Provider = 4,
    /// A Rust panic was caught; the library state is unchanged.
    Panic = 5,
}

/// A loaded separator checkpoint.
pub struct QsepModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QsepStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            1 => QsepStatus::Usage,
            2 => QsepStatus::Io,
            4 => QsepStatus::Provider,
            _ => QsepStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure(QsepStatus::Usage, msg.into())
}

fn set_error(msg: Option<String>) {
    // Interior NULs cannot cross the boundary; replace them.
    let msg = msg.map(|m| CString::new(m.replace('\0', "?")).expect("no interior NUL"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

/// Runs `body`, records its error message and converts panics.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> QsepStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(None);
            QsepStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(Some(format!("panic: {msg}")));
            QsepStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(usage(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| usage(format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(usage(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(usage(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(model: *const QsepModel) -> Result<&'a QsepModel, Failure> {
    model.as_ref().ok_or_else(|| usage("model is null"))
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next qsep call on the same thread.
#[no_mangle]
pub extern "C" fn qsep_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qsep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a JSON checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_load(path: *const c_char, out: *mut *mut QsepModel) -> QsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let checkpoint = separator::load_checkpoint(path).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(QsepModel { checkpoint }));
        Ok(())
    })
}

/// Releases a handle from [`qsep_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_free(model: *mut QsepModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sample rate the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_sample_rate(model: *const QsepModel) -> u32 {
    model.as_ref().map_or(0, |m| m.checkpoint.sample_rate)
}

/// Query embedding dimension of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_embed_dim(model: *const QsepModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.params.config.embed_dim)
}

fn separate_one(model: &QsepModel, samples: &[f64], query: QueryEmbedding, out: &mut [f64]) -> Result<(), Failure> {
    if out.len() != samples.len() {
        return Err(usage(format!(
            "output holds {} samples, input has {}",
            out.len(),
            samples.len()
        )));
    }
    let ckpt = &model.checkpoint;
    let clip = AudioClip::new(samples.to_vec(), ckpt.sample_rate).map_err(Error::from)?;
    let clips = separator::separate(&clip, &[query], &ckpt.params, &ckpt.stft).map_err(Error::from)?;
    out.copy_from_slice(&clips[0].samples);
    Ok(())
}

/// Separates the source described by `query` from a mono mixture at the
/// model's sample rate. `out` receives `len` samples.
///
/// The text is embedded with the same hashing scheme as the executable;
/// pass the same `embed_seed` the model was trained with.
///
/// # Safety
/// `samples` and `out` must each point to `len` doubles; `query` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qsep_separate_text(
    model: *const QsepModel,
    samples: *const f64,
    len: usize,
    query: *const c_char,
    embed_seed: u64,
    out: *mut f64,
) -> QsepStatus {
    guard(|| {
        let model = model_ref(model)?;
        let samples = slice_arg(samples, len, "samples")?;
        let text = TextQuery::manual(str_arg(query, "query")?).map_err(|e| usage(e.to_string()))?;
        let q = querygen::text_to_embedding(&text, model.checkpoint.params.config.embed_dim, embed_seed);
        separate_one(model, samples, q, out_slice(out, len, "out")?)
    })
}

/// Like [`qsep_separate_text`] with an explicit embedding of `dim` values,
/// which must equal [`qsep_model_embed_dim`].
///
/// # Safety
/// `samples` and `out` must each point to `len` doubles and `embedding` to
/// `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn qsep_separate_embedding(
    model: *const QsepModel,
    samples: *const f64,
    len: usize,
    embedding: *const f64,
    dim: usize,
    out: *mut f64,
) -> QsepStatus {
    guard(|| {
        let model = model_ref(model)?;
        let samples = slice_arg(samples, len, "samples")?;
        let values = slice_arg(embedding, dim, "embedding")?.to_vec();
        let expected = model.checkpoint.params.config.embed_dim;
        if dim != expected {
            return Err(usage(format!("embedding has {dim} values, model expects {expected}")));
        }
        let q = QueryEmbedding::new(values).map_err(Error::from)?;
        separate_one(model, samples, q, out_slice(out, len, "out")?)
    })
}

/// Writes the hashed text embedding of `text` into `out[0..dim]`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn qsep_text_embedding(text: *const c_char, seed: u64, out: *mut f64, dim: usize) -> QsepStatus {
    guard(|| {
        if dim == 0 {
            return Err(usage("dim must be positive"));
        }
        let q = TextQuery::manual(str_arg(text, "text")?).map_err(|e| usage(e.to_string()))?;
        let e = querygen::text_to_embedding(&q, dim, seed);
        out_slice(out, dim, "out")?.copy_from_slice(&e.values);
        Ok(())
    })
}

type Metric = fn(&AudioClip, &AudioClip) -> Result<f64, metrics::MetricsError>;

unsafe fn signal_metric(
    f: Metric,
    estimate: *const f64,
    reference: *const f64,
    len: usize,
    out: *mut f64,
) -> QsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        // The sample rate does not enter either metric.
        let clip = |p, name| -> Result<AudioClip, Failure> {
            Ok(AudioClip::new(slice_arg(p, len, name)?.to_vec(), 1).map_err(Error::from)?)
        };
        *out = f(&clip(estimate, "estimate")?, &clip(reference, "reference")?).map_err(Error::from)?;
        Ok(())
    })
}

/// Scale-invariant SDR in dB, capped at +100 and floored at -100.
///
/// # Safety
/// `estimate` and `reference` must point to `len` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn qsep_si_sdr(
    estimate: *const f64,
    reference: *const f64,
    len: usize,
    out: *mut f64,
) -> QsepStatus {
    signal_metric(metrics::si_sdr, estimate, reference, len, out)
}

/// Plain SDR in dB, capped at +100 and floored at -100.
///
/// # Safety
/// Same as [`qsep_si_sdr`].
#[no_mangle]
pub unsafe extern "C" fn qsep_sdr(
    estimate: *const f64,
    reference: *const f64,
    len: usize,
    out: *mut f64,
) -> QsepStatus {
    signal_metric(metrics::sdr, estimate, reference, len, out)
}

/// Offline query: scene words not mentioned in the region description.
/// `*out` receives a string to release with [`qsep_string_free`].
///
/// # Safety
/// `scene` and `region` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn qsep_fallback_subtract(
    scene: *const c_char,
    region: *const c_char,
    out: *mut *mut c_char,
) -> QsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        *out = ptr::null_mut();
        let d_v = SceneDescription::manual(str_arg(scene, "scene")?);
        let d_a = RegionalDescription::manual(str_arg(region, "region")?);
        let q = querygen::fallback_subtract(&d_v, &d_a);
        *out = CString::new(q.text)
            .map_err(|_| usage("query contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn qsep_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
