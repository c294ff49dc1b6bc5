//! C ABI over `advlab`: load or initialise a model, predict, run FGSM/PGD
//! and compute relative changes.
//!
//! Every function returns an [`AdvlabStatus`]; on failure a description is
//! available from [`advlab_last_error_message`] on the same thread. Arrays
//! are row-major `f64` buffers of `n * d` elements owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use advlab::attacks::{self, AttackConfig};
use advlab::metrics::{relative_change, round_half_up};
use advlab::model::{init_params, read_checkpoint, write_checkpoint, Arch, ClassSpace, ModelParams};
use advlab::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Panic = 6,
}

/// Opaque model handle.
pub struct AdvlabModel {
    inner: ModelParams,
}

/// PGD settings; `alpha <= 0` selects the default step `2.5 * epsilon / steps`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdvlabAttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AdvlabStatus {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => AdvlabStatus::InvalidArgument,
        Error::Io(_) => AdvlabStatus::Io,
        Error::Shape { .. } | Error::NonScalarRoot(_) => AdvlabStatus::Shape,
        _ => AdvlabStatus::Format,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdvlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdvlabStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AdvlabStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            AdvlabStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const AdvlabModel) -> Result<&'a ModelParams, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or(Failure::Null("model"))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn input(model: &ModelParams, x: *const f64, n: usize, d: usize) -> Result<Tensor, Failure> {
    if x.is_null() {
        return Err(Failure::Null("x"));
    }
    if n == 0 || d != model.input_dim() {
        return Err(Error::InvalidArgument(format!("need n > 0 and d = {}, got n = {n}, d = {d}", model.input_dim())).into());
    }
    Ok(Tensor::matrix(n, d, std::slice::from_raw_parts(x, n * d).to_vec())?)
}

unsafe fn labels_arg(labels: *const usize, n: usize) -> Result<Vec<usize>, Failure> {
    if labels.is_null() {
        return Err(Failure::Null("labels"));
    }
    Ok(std::slice::from_raw_parts(labels, n).to_vec())
}

unsafe fn write_out<T: Copy>(out: *mut T, values: &[T]) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn store<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output"));
    }
    *out = value;
    Ok(())
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn advlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by `advlab train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advlab_model_load(path: *const c_char, out: *mut *mut AdvlabModel) -> AdvlabStatus {
    guard(|| {
        let p = path_arg(path)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let inner = read_checkpoint(p)?;
        *out = Box::into_raw(Box::new(AdvlabModel { inner }));
        Ok(())
    })
}

/// Writes the model as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn advlab_model_save(model: *const AdvlabModel, path: *const c_char) -> AdvlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_checkpoint(m, path_arg(path)?)?;
        Ok(())
    })
}

/// Fresh Glorot-initialised classifier with `n_hidden` hidden layers and
/// `k` outputs (no operation head).
///
/// # Safety
/// `hidden` must point to `n_hidden` widths (may be NULL when 0); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn advlab_model_init(
    input_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    k: usize,
    seed: u64,
    out: *mut *mut AdvlabModel,
) -> AdvlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let widths = if n_hidden == 0 {
            Vec::new()
        } else if hidden.is_null() {
            return Err(Failure::Null("hidden"));
        } else {
            std::slice::from_raw_parts(hidden, n_hidden).to_vec()
        };
        let inner = init_params(&Arch::new(input_dim, widths, k), ClassSpace::new(k, 0)?, Vec::new(), seed)?;
        *out = Box::into_raw(Box::new(AdvlabModel { inner }));
        Ok(())
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn advlab_model_free(model: *mut AdvlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension and number of content classes.
///
/// # Safety
/// `model` must be valid; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn advlab_model_shape(model: *const AdvlabModel, input_dim: *mut usize, k: *mut usize) -> AdvlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        store(input_dim, m.input_dim())?;
        store(k, m.class_space.k())
    })
}

/// Predicted content class of each of the `n` rows of `x`.
///
/// # Safety
/// `x` must hold `n * d` values and `out` room for `n` labels.
#[no_mangle]
pub unsafe extern "C" fn advlab_predict(
    model: *const AdvlabModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut usize,
) -> AdvlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        let preds = m.predict(&input(m, x, n, d)?)?;
        write_out(out, &preds)
    })
}

/// FGSM with budget `epsilon`; writes the `n * d` adversarial inputs.
///
/// # Safety
/// `x` and `out` must hold `n * d` values, `labels` `n` labels.
#[no_mangle]
pub unsafe extern "C" fn advlab_fgsm(
    model: *const AdvlabModel,
    x: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    epsilon: f64,
    out: *mut f64,
) -> AdvlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        let xs = input(m, x, n, d)?;
        let r = attacks::fgsm(m, &xs, &labels_arg(labels, n)?, epsilon)?;
        write_out(out, r.adversarial.data())
    })
}

/// ℓ∞ PGD; writes the `n * d` adversarial inputs.
///
/// # Safety
/// `x` and `out` must hold `n * d` values, `labels` `n` labels; `config`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn advlab_pgd(
    model: *const AdvlabModel,
    x: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    config: *const AdvlabAttackConfig,
    out: *mut f64,
) -> AdvlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = config.as_ref().ok_or(Failure::Null("config"))?;
        let mut cfg = AttackConfig::pgd(c.epsilon, c.steps);
        if c.alpha > 0.0 {
            cfg.alpha = c.alpha;
        }
        cfg.random_start = c.random_start;
        cfg.seed = c.seed;
        let xs = input(m, x, n, d)?;
        let r = attacks::pgd(m, &xs, &labels_arg(labels, n)?, &cfg)?;
        write_out(out, r.adversarial.data())
    })
}

/// `100 (before - after) / before`, unrounded and rounded half-up to two
/// decimals. Either output may be NULL.
///
/// # Safety
/// Non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn advlab_relative_change(before: f64, after: f64, value: *mut f64, rounded: *mut f64) -> AdvlabStatus {
    guard(|| {
        let c = relative_change(before, after)?;
        if !value.is_null() {
            *value = c.value;
        }
        if !rounded.is_null() {
            *rounded = round_half_up(c.value, 2);
        }
        Ok(())
    })
}
