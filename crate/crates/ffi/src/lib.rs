//! C interface to `pcdbn`.
//!
//! Models are opaque handles owned by the caller and released with
//! [`pcdbn_model_free`]. Every fallible call returns a [`PcdbnStatus`]; the
//! message of the last failure on the calling thread is available through
//! [`pcdbn_last_error`]. Panics are caught at the boundary.

use pcdbn::cheb_approx::ApproximatorKind;
use pcdbn::cli::{prepare, RunConfig};
use pcdbn::data_io::{load_model, save_model};
use pcdbn::energy_model::VisibleGrid;
use pcdbn::functional_mech::{laplace_sample, laplace_self_test};
use pcdbn::network::{predict, train, TrainedModel};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdbnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    TrainingError = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Trained model handle.
pub struct PcdbnModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: PcdbnStatus, msg: impl ToString) -> PcdbnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
    status
}

fn guard(f: impl FnOnce() -> PcdbnStatus) -> PcdbnStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PcdbnStatus::Panic, "panic inside pcdbn"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, PcdbnStatus> {
    if p.is_null() {
        return Err(fail(PcdbnStatus::NullPointer, "null path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(PcdbnStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Copies the last error message (NUL-terminated, truncated to `len`) into
/// `buf` and returns the full message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Power-basis coefficients `α_0..α_L` of the logistic's degree-`L` Chebyshev
/// truncation. `out` must hold `l + 1` values.
///
/// # Safety
/// `out` must be valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_chebyshev_coefficients(l: usize, out: *mut f64, out_len: usize) -> PcdbnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PcdbnStatus::NullPointer, "null output");
        }
        if out_len < l + 1 {
            return fail(PcdbnStatus::BufferTooSmall, format!("need {} values", l + 1));
        }
        match ApproximatorKind::ChebyshevTruncated(l).polynomial() {
            Ok(p) => {
                std::slice::from_raw_parts_mut(out, l + 1).copy_from_slice(p.coeffs());
                PcdbnStatus::Ok
            }
            Err(e) => fail(PcdbnStatus::InvalidArgument, e),
        }
    })
}

/// Fills `out[0..n]` with Laplace(0, `scale`) draws from a ChaCha20 stream seeded by `seed`.
///
/// # Safety
/// `out` must be valid for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_laplace(scale: f64, seed: u64, out: *mut f64, n: usize) -> PcdbnStatus {
    guard(|| {
        if out.is_null() && n > 0 {
            return fail(PcdbnStatus::NullPointer, "null output");
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let out = if n == 0 { &mut [][..] } else { std::slice::from_raw_parts_mut(out, n) };
        for x in out.iter_mut() {
            match laplace_sample(scale, &mut rng) {
                Ok(v) => *x = v,
                Err(e) => return fail(PcdbnStatus::InvalidArgument, e),
            }
        }
        PcdbnStatus::Ok
    })
}

/// Kolmogorov-Smirnov self-test of `n` draws at scale `delta/epsilon`.
///
/// # Safety
/// `statistic` and `p_value` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_noise_test(
    epsilon: f64,
    delta: f64,
    n: usize,
    seed: u64,
    statistic: *mut f64,
    p_value: *mut f64,
) -> PcdbnStatus {
    guard(|| {
        if statistic.is_null() || p_value.is_null() {
            return fail(PcdbnStatus::NullPointer, "null output");
        }
        if n == 0 {
            return fail(PcdbnStatus::InvalidArgument, "n must be positive");
        }
        match laplace_self_test(epsilon, delta, n, seed) {
            Ok(r) => {
                *statistic = r.statistic;
                *p_value = r.p_value;
                PcdbnStatus::Ok
            }
            Err(e) => fail(PcdbnStatus::InvalidArgument, e),
        }
    })
}

/// Trains from a `key = value` config file, as `pcdbn train` does, and
/// stores a new handle in `*out`.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_train(config: *const c_char, seed: u64, out: *mut *mut PcdbnModel) -> PcdbnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PcdbnStatus::NullPointer, "null output");
        }
        let path = match path_arg(config) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let mut cfg = match RunConfig::load(Some(path), &[]) {
            Ok(c) => c,
            Err(e) => return fail(PcdbnStatus::InvalidArgument, e.message),
        };
        let data = match prepare(&mut cfg, seed) {
            Ok(d) => d,
            Err(e) if e.code == pcdbn::cli::EXIT_DATA => return fail(PcdbnStatus::DataError, e.message),
            Err(e) => return fail(PcdbnStatus::InvalidArgument, e.message),
        };
        match train(&cfg.spec, &data) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(PcdbnModel { inner: m }));
                PcdbnStatus::Ok
            }
            Err(e) => fail(PcdbnStatus::TrainingError, e),
        }
    })
}

/// Loads a model container and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_model_load(path: *const c_char, out: *mut *mut PcdbnModel) -> PcdbnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PcdbnStatus::NullPointer, "null output");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_model(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(PcdbnModel { inner: m }));
                PcdbnStatus::Ok
            }
            Err(e) => fail(PcdbnStatus::DataError, e),
        }
    })
}

/// Writes a model container.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_model_save(model: *const PcdbnModel, path: *const c_char) -> PcdbnStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return fail(PcdbnStatus::NullPointer, "null model") };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_model(&m.inner, path) {
            Ok(()) => PcdbnStatus::Ok,
            Err(e) => fail(PcdbnStatus::DataError, e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_model_free(model: *mut PcdbnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square inputs the model expects.
///
/// # Safety
/// `model` must come from this library; `side` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_model_input_side(model: *const PcdbnModel, side: *mut usize) -> PcdbnStatus {
    let (Some(m), false) = (model.as_ref(), side.is_null()) else {
        return fail(PcdbnStatus::NullPointer, "null argument");
    };
    *side = m.inner.spec.input_side;
    PcdbnStatus::Ok
}

/// Total privacy budget recorded in the model's ledger.
///
/// # Safety
/// `model` must come from this library; `epsilon` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_model_epsilon_spent(model: *const PcdbnModel, epsilon: *mut f64) -> PcdbnStatus {
    let (Some(m), false) = (model.as_ref(), epsilon.is_null()) else {
        return fail(PcdbnStatus::NullPointer, "null argument");
    };
    *epsilon = m.inner.accountant.total();
    PcdbnStatus::Ok
}

/// Predicts the label of one normalized `side×side` row-major image. `score`
/// receives `σ(w·p)` of the first binary problem (the positive-class
/// probability for two classes) and may be null.
///
/// # Safety
/// `pixels` must be valid for `len` reads; `label` for a write; `score` null or valid.
#[no_mangle]
pub unsafe extern "C" fn pcdbn_model_predict(
    model: *const PcdbnModel,
    pixels: *const f64,
    len: usize,
    label: *mut usize,
    score: *mut f64,
) -> PcdbnStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return fail(PcdbnStatus::NullPointer, "null model") };
        if pixels.is_null() || label.is_null() {
            return fail(PcdbnStatus::NullPointer, "null argument");
        }
        let side = m.inner.spec.input_side;
        if len != side * side {
            return fail(PcdbnStatus::InvalidArgument, format!("expected {} pixels, got {len}", side * side));
        }
        let grid = match VisibleGrid::new(side, std::slice::from_raw_parts(pixels, len).to_vec()) {
            Ok(g) => g,
            Err(e) => return fail(PcdbnStatus::InvalidArgument, e),
        };
        match predict(&m.inner, &grid) {
            Ok(p) => {
                *label = p.label;
                if !score.is_null() {
                    *score = p.scores[0];
                }
                PcdbnStatus::Ok
            }
            Err(e) => fail(PcdbnStatus::InvalidArgument, e),
        }
    })
}
