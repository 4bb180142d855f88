//! C ABI over the `wsram` library.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`WsramStatus`]; on failure, [`wsram_last_error`] gives a message for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use wsram::estimators::{ess, ImportanceWeightSet};
use wsram::glimpse::{GlimpseSensor, Image, ToyWorld};
use wsram::model::checkpoint::Checkpoint;
use wsram::model::{classify, AttentionModel, TabularModel};
use wsram::oracle::{exact_kl, exact_marginal};
use wsram::rng::substream;
use wsram::Error;

/// Result codes. Values 2–5 coincide with the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WsramStatus {
    Ok = 0,
    /// Numerical or internal failure.
    Failure = 1,
    /// Invalid configuration, dimensions or arguments.
    InvalidArgument = 2,
    InputFormat = 3,
    Verification = 4,
    DegenerateWeights = 5,
    NullPointer = 6,
    Io = 7,
    Panic = 8,
}

/// A trained attention model.
pub struct WsramModel {
    model: AttentionModel,
}

/// A discrete toy world with its exact tabular policy.
pub struct WsramToyWorld {
    world: ToyWorld,
    model: TabularModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WsramStatus {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Domain(_) | Error::Budget { .. } => {
            WsramStatus::InvalidArgument
        }
        Error::InputFormat { .. } => WsramStatus::InputFormat,
        Error::Verification(_) => WsramStatus::Verification,
        Error::DegenerateWeights(_) | Error::TrainingAborted(_) => WsramStatus::DegenerateWeights,
        Error::Io(_) => WsramStatus::Io,
        Error::Numerical(_) | Error::Internal(_) => WsramStatus::Failure,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WsramStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WsramStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            WsramStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside wsram".into());
            WsramStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: the caller guarantees `p` is null or valid for reads.
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and, per the caller, valid for `len` reads.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn as_slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and, per the caller, valid for `len` writes.
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wsram_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by `wsram train`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn wsram_model_load(path: *const c_char, out: *mut *mut WsramModel) -> WsramStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        // SAFETY: checked non-null; nul-terminated per contract.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Error::Config("path is not UTF-8".into()))?;
        let model = Checkpoint::load(Path::new(path))?.model()?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(WsramModel { model })) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`wsram_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wsram_model_free(model: *mut WsramModel) {
    if !model.is_null() {
        // SAFETY: allocated by Box::into_raw in wsram_model_load.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of classes the model predicts.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wsram_model_classes(model: *const WsramModel) -> usize {
    // SAFETY: per contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.model.shape().classes)
}

/// Classifies a row-major `height × width` image (pixels in [0, 1]) by
/// averaging the class distribution over `rollouts` glimpse rollouts.
///
/// The sensor is described by `scales[n_scales]` (window sides), `retina`,
/// `low_res_side` and `grid` (0 for continuous locations). Writes the
/// predicted class and, if `probs` is non-null, `probs_len` averaged class
/// probabilities (`probs_len` must equal the class count).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn wsram_model_classify(
    model: *const WsramModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    scales: *const usize,
    n_scales: usize,
    retina: usize,
    low_res_side: usize,
    grid: usize,
    rollouts: usize,
    seed: u64,
    out_class: *mut usize,
    probs: *mut f64,
    probs_len: usize,
) -> WsramStatus {
    guard(|| {
        // SAFETY: all pointer arguments are valid per the contract above.
        let model = unsafe { as_ref(model, "model") }?;
        let pixels = unsafe { as_slice(pixels, height * width, "pixels") }?;
        let scales = unsafe { as_slice(scales, n_scales, "scales") }?;
        if out_class.is_null() {
            return Err(Fail::Null("out_class"));
        }
        let image = Image::new(height, width, pixels.to_vec())?;
        let sensor = GlimpseSensor {
            scales: scales.to_vec(),
            retina,
            low_res_side,
            grid: (grid > 0).then_some(grid),
        };
        sensor.validate()?;
        let env = sensor.env(&image)?;
        let mut rng = substream(seed, "eval", 0);
        let (class, dist) = classify(&model.model, &env, rollouts, &mut rng)?;
        if !probs.is_null() {
            if probs_len != dist.len() {
                return Err(Error::Dimension {
                    context: "class probabilities",
                    expected: dist.len(),
                    actual: probs_len,
                }
                .into());
            }
            // SAFETY: non-null, `probs_len` writable per contract.
            unsafe { as_slice_mut(probs, probs_len, "probs") }?.copy_from_slice(&dist);
        }
        // SAFETY: checked non-null.
        unsafe { *out_class = class };
        Ok(())
    })
}

/// A random toy world: every table row is a softmax of `spread`-scaled
/// standard normal logits.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn wsram_toy_world_random(
    cells: usize,
    scales: usize,
    glimpses: usize,
    classes: usize,
    spread: f64,
    seed: u64,
    out: *mut *mut WsramToyWorld,
) -> WsramStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let world = ToyWorld::random(cells, scales, glimpses, classes, spread, seed)?;
        let model = TabularModel::from_world(&world);
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(WsramToyWorld { world, model })) };
        Ok(())
    })
}

/// # Safety
/// `world` must come from [`wsram_toy_world_random`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn wsram_toy_world_free(world: *mut WsramToyWorld) {
    if !world.is_null() {
        // SAFETY: allocated by Box::into_raw in wsram_toy_world_random.
        drop(unsafe { Box::from_raw(world) });
    }
}

/// Exact `log p(y)` by enumerating every glimpse sequence.
///
/// # Safety
/// `world` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn wsram_toy_exact_log_marginal(
    world: *const WsramToyWorld,
    label: usize,
    out: *mut f64,
) -> WsramStatus {
    guard(|| {
        // SAFETY: per contract.
        let w = unsafe { as_ref(world, "world") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let v = exact_marginal(&w.model, &w.world, label)?;
        // SAFETY: checked non-null.
        unsafe { *out = v };
        Ok(())
    })
}

/// Exact KL(posterior ‖ proposal) for `label`.
///
/// # Safety
/// `world` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn wsram_toy_exact_kl(world: *const WsramToyWorld, label: usize, out: *mut f64) -> WsramStatus {
    guard(|| {
        // SAFETY: per contract.
        let w = unsafe { as_ref(world, "world") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let v = exact_kl(&w.model, &w.world, label)?;
        // SAFETY: checked non-null.
        unsafe { *out = v };
        Ok(())
    })
}

/// Self-normalises `n` log importance weights into `normalized[n]` and
/// writes the effective sample size `1/Σŵ²`.
///
/// # Safety
/// `log_weights` and `normalized` must hold `n` elements; `out_ess` valid
/// for a write.
#[no_mangle]
pub unsafe extern "C" fn wsram_importance_weights(
    log_weights: *const f64,
    n: usize,
    normalized: *mut f64,
    out_ess: *mut f64,
) -> WsramStatus {
    guard(|| {
        // SAFETY: per contract.
        let lw = unsafe { as_slice(log_weights, n, "log_weights") }?;
        let out = unsafe { as_slice_mut(normalized, n, "normalized") }?;
        if out_ess.is_null() {
            return Err(Fail::Null("out_ess"));
        }
        let set = ImportanceWeightSet::from_log_weights(lw.to_vec())?;
        out.copy_from_slice(set.normalized());
        // SAFETY: checked non-null.
        unsafe { *out_ess = ess(&set) };
        Ok(())
    })
}
