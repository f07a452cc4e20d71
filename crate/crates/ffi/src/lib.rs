//! C ABI over the convmotion predictor: load a checkpoint with its
//! statistics, predict raw frames, and the rotation and error helpers.
//!
//! Every fallible call returns a [`CmStatus`]; on failure the message is
//! available from [`cm_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use convmotion::eval::{euler_error, predict_frames};
use convmotion::mocap::rotation::{expmap_to_rotmat, rotmat_to_euler};
use convmotion::mocap::{FrameMatrix, NormalizationStats};
use convmotion::training::Checkpoint;
use convmotion::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Fingerprint = 6,
    Numeric = 7,
    Panic = 8,
}

/// A checkpoint paired with the statistics it was trained with.
pub struct CmModel {
    checkpoint: Checkpoint,
    stats: Arc<NormalizationStats>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CmStatus {
    match e {
        Error::Shape(_) => CmStatus::Shape,
        Error::Parse { .. } | Error::Format(_) | Error::Json(_) => CmStatus::Parse,
        Error::Invalid(_) => CmStatus::InvalidArgument,
        Error::NonFinite(_) | Error::NonDeterministic(_) | Error::NotOrthonormal(_) => CmStatus::Numeric,
        Error::Fingerprint { .. } => CmStatus::Fingerprint,
        Error::Io { .. } => CmStatus::Io,
    }
}

struct Failure(CmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CmStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, recording its error message and turning panics into
/// [`CmStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            CmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Load a checkpoint and the statistics file it was trained with. On
/// success `*out` owns a model that must be released with
/// [`cm_model_free`].
///
/// # Safety
/// `checkpoint_path` and `stats_path` must be NUL-terminated strings and
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn cm_model_load(
    checkpoint_path: *const c_char,
    stats_path: *const c_char,
    out: *mut *mut CmModel,
) -> CmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let ck_path = path_arg(checkpoint_path, "checkpoint_path")?;
        let stats_path = path_arg(stats_path, "stats_path")?;
        let stats = Arc::new(NormalizationStats::load(&stats_path)?);
        let checkpoint = Checkpoint::load_for(&ck_path, &stats)?;
        *out = Box::into_raw(Box::new(CmModel { checkpoint, stats }));
        Ok(())
    })
}

/// Release a model from [`cm_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a pointer from [`cm_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_model_free(model: *mut CmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Seed frames the model consumes; 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cm_model_seed_len(model: *const CmModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.model.hyper.seed_len)
}

/// Frames one prediction produces; 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cm_model_target_len(model: *const CmModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.model.hyper.target_len)
}

/// Width of raw input and output frames; 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cm_model_raw_dim(model: *const CmModel) -> usize {
    model.as_ref().map_or(0, |m| m.stats.raw_dim())
}

/// Width of the normalized frames the network sees; 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cm_model_pose_dim(model: *const CmModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.model.pose_dim)
}

/// Continue `frames` raw frames of width `width` (row-major) by
/// `target_len` frames written row-major to `out`, which holds `out_len`
/// values. The last `seed_len` input frames seed the model.
///
/// # Safety
/// `model` must be a live model, `seed` must point to `frames * width`
/// readable values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn cm_model_predict(
    model: *const CmModel,
    seed: *const f64,
    frames: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> CmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = frames
            .checked_mul(width)
            .ok_or_else(|| Failure(CmStatus::InvalidArgument, "frames * width overflows".into()))?;
        let seed = slice_arg(seed, n, "seed")?;
        let need = m.checkpoint.model.hyper.target_len * m.stats.raw_dim();
        if out_len < need {
            return Err(Failure(CmStatus::Shape, format!("output holds {out_len} values, prediction needs {need}")));
        }
        let out = slice_mut_arg(out, out_len, "out")?;
        let input = FrameMatrix::new(frames, width, seed.to_vec())?;
        let pred = predict_frames(&m.checkpoint.model, &m.stats, &input)?;
        out[..need].copy_from_slice(pred.data());
        Ok(())
    })
}

/// Rotation matrix (row-major, 9 values) of an exponential map (3 values).
///
/// # Safety
/// `r` must point to 3 readable values and `out` to 9 writable values.
#[no_mangle]
pub unsafe extern "C" fn cm_expmap_to_rotmat(r: *const f64, out: *mut f64) -> CmStatus {
    guard(|| {
        let r = slice_arg(r, 3, "r")?;
        let out = slice_mut_arg(out, 9, "out")?;
        let m = expmap_to_rotmat([r[0], r[1], r[2]]);
        for (i, row) in m.iter().enumerate() {
            out[i * 3..i * 3 + 3].copy_from_slice(row);
        }
        Ok(())
    })
}

/// Euler angles (3 values) of a row-major rotation matrix (9 values).
///
/// # Safety
/// `m` must point to 9 readable values and `out` to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn cm_rotmat_to_euler(m: *const f64, out: *mut f64) -> CmStatus {
    guard(|| {
        let m = slice_arg(m, 9, "m")?;
        let out = slice_mut_arg(out, 3, "out")?;
        let mat = [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]];
        out.copy_from_slice(&rotmat_to_euler(&mat)?);
        Ok(())
    })
}

/// Euler-angle distance between two raw exponential-map frames of `len`
/// values. `include` holds `len` flags, nonzero meaning the dimension
/// counts; null includes every dimension.
///
/// # Safety
/// `pred` and `truth` must point to `len` readable values, `include` must
/// be null or point to `len` readable bytes, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_euler_error(
    pred: *const f64,
    truth: *const f64,
    include: *const u8,
    len: usize,
    out: *mut f64,
) -> CmStatus {
    guard(|| {
        let pred = slice_arg(pred, len, "pred")?;
        let truth = slice_arg(truth, len, "truth")?;
        let mask: Vec<bool> = if include.is_null() {
            vec![true; len]
        } else {
            std::slice::from_raw_parts(include, len).iter().map(|&b| b != 0).collect()
        };
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = euler_error(pred, truth, &mask)?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cm_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
