//! C ABI over `conjlogit`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load` functions and released
//! with the matching `*_free`. Every fallible call returns a [`ConjlogitStatus`]; on
//! failure [`conjlogit_last_error`] describes the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use conjlogit::data::{load_dataset, Dataset, HeterogeneitySpec};
use conjlogit::kernels::{exp_vs_gamma, GammaParams};
use conjlogit::optimize::{grid_fit_workspace, FitFamily, GridSpec};
use conjlogit::series::{SeriesConfig, Workspace};
use conjlogit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConjlogitStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed input file or JSON.
    Parse = 3,
    InvalidData = 4,
    InvalidSpec = 5,
    Domain = 6,
    /// Admission limit exceeded while building caches.
    BudgetExceeded = 7,
    Cache = 8,
    /// Truncation failure, singular Hessian or every grid point failed.
    Numerical = 9,
    Io = 10,
    Config = 11,
    Panic = 12,
}

/// A validated panel dataset.
pub struct ConjlogitDataset(Dataset);

/// A heterogeneity distribution.
pub struct ConjlogitSpec(HeterogeneitySpec);

/// A dataset grouped for repeated evaluation, with its caches.
pub struct ConjlogitWorkspace(Workspace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ConjlogitStatus {
    match e {
        Error::Parse { .. } | Error::Schema { .. } | Error::Json(_) => ConjlogitStatus::Parse,
        Error::NoHouseholds | Error::InvalidData(_) => ConjlogitStatus::InvalidData,
        Error::InvalidSpec(_) => ConjlogitStatus::InvalidSpec,
        Error::Domain(_) | Error::ExistenceRegion(_) => ConjlogitStatus::Domain,
        Error::BudgetExceeded { .. } => ConjlogitStatus::BudgetExceeded,
        Error::CacheMismatch(_)
        | Error::CacheVersion { .. }
        | Error::CacheChecksum { .. }
        | Error::CacheTruncated(_) => ConjlogitStatus::Cache,
        Error::Truncation { .. }
        | Error::SingularHessian { .. }
        | Error::AllPointsFailed(_)
        | Error::ToleranceNotMet { .. } => ConjlogitStatus::Numerical,
        Error::Io(_) => ConjlogitStatus::Io,
        _ => ConjlogitStatus::Config,
    }
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ConjlogitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ConjlogitStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as `{what}`"));
            ConjlogitStatus::NullArgument
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(format!("`{what}` is not valid UTF-8"));
            ConjlogitStatus::InvalidUtf8
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            ConjlogitStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or NULL after a success.
///
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn conjlogit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn conjlogit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and validates a dataset CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_dataset_load(
    path: *const c_char,
    out: *mut *mut ConjlogitDataset,
) -> ConjlogitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d = load_dataset(str_arg(path, "path")?)?;
        d.ensure_valid()?;
        *out = Box::into_raw(Box::new(ConjlogitDataset(d)));
        Ok(())
    })
}

/// Number of households, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_dataset_households(ds: *const ConjlogitDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.households.len())
}

/// Number of attributes, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_dataset_attributes(ds: *const ConjlogitDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_attributes)
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_dataset_free(ds: *mut ConjlogitDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Parses and validates a heterogeneity spec from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_spec_from_json(
    json: *const c_char,
    out: *mut *mut ConjlogitSpec,
) -> ConjlogitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec = HeterogeneitySpec::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(ConjlogitSpec(spec)));
        Ok(())
    })
}

/// Independent Gammas with scales `b` and shapes `n`, `len` attributes each.
///
/// # Safety
/// `b` and `n` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_spec_gamma(
    b: *const f64,
    n: *const f64,
    len: usize,
    epsilon: f64,
    out: *mut *mut ConjlogitSpec,
) -> ConjlogitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let g = conjlogit::data::GammaSpec::new(
            slice_arg(b, len, "b")?.to_vec(),
            slice_arg(n, len, "n")?.to_vec(),
            epsilon,
        )?;
        *out = Box::into_raw(Box::new(ConjlogitSpec(HeterogeneitySpec::IndependentGamma(g))));
        Ok(())
    })
}

/// # Safety
/// `spec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_spec_free(spec: *mut ConjlogitSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Groups `ds` and builds every cache needed at truncation budget `budget`.
///
/// The workspace does not borrow `ds`; either may be freed first.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_workspace_new(
    ds: *const ConjlogitDataset,
    budget: u32,
    out: *mut *mut ConjlogitWorkspace,
) -> ConjlogitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ws = Workspace::build(&ref_arg(ds, "ds")?.0, &SeriesConfig::new(budget))?;
        *out = Box::into_raw(Box::new(ConjlogitWorkspace(ws)));
        Ok(())
    })
}

/// # Safety
/// `ws` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_workspace_free(ws: *mut ConjlogitWorkspace) {
    if !ws.is_null() {
        drop(Box::from_raw(ws));
    }
}

/// `log L` at `spec`. `parity_spread` may be NULL; it receives NaN when unavailable.
///
/// # Safety
/// Handles must be live; `loglik` must be writable; `parity_spread` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_log_marginal(
    ws: *const ConjlogitWorkspace,
    spec: *const ConjlogitSpec,
    loglik: *mut f64,
    parity_spread: *mut f64,
) -> ConjlogitStatus {
    guard(|| {
        let ws = ref_arg(ws, "ws")?;
        let spec = ref_arg(spec, "spec")?;
        let loglik = out_arg(loglik, "loglik")?;
        let e = ws.0.log_marginal(&spec.0)?;
        *loglik = e.value;
        if let Some(p) = parity_spread.as_mut() {
            *p = e.parity_spread.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// `E[exp(-d beta)]` for `beta ~ Gamma(scale b, shape n)`, i.e. `(1 + b d)^(-n)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_exp_vs_gamma(d: f64, b: f64, n: f64, out: *mut f64) -> ConjlogitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = exp_vs_gamma(d, GammaParams::new(b, n)?)?;
        Ok(())
    })
}

/// Grid search over independent-Gamma parameters `(b_1, n_1, ..., b_P, n_P)`.
///
/// `centers`, `counts` and `spacing` each hold `2P` entries. The maximiser is written to
/// `best` (`2P` doubles) and its `log L` to `loglik`.
///
/// # Safety
/// `ws` must be live; array arguments must hold `n_axes` elements; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn conjlogit_grid_fit_gamma(
    ws: *const ConjlogitWorkspace,
    centers: *const f64,
    counts: *const usize,
    spacing: *const f64,
    n_axes: usize,
    best: *mut f64,
    loglik: *mut f64,
) -> ConjlogitStatus {
    guard(|| {
        let ws = ref_arg(ws, "ws")?;
        let loglik = out_arg(loglik, "loglik")?;
        if !n_axes.is_multiple_of(2) {
            return Err(Error::Config(format!("gamma grids have an even number of axes, got {n_axes}")).into());
        }
        let grid = GridSpec::new(
            slice_arg(centers, n_axes, "centers")?,
            slice_arg(counts, n_axes, "counts")?,
            slice_arg(spacing, n_axes, "spacing")?,
        )?;
        if best.is_null() {
            return Err(Failure::Null("best"));
        }
        let family = FitFamily::Gamma { p: n_axes / 2, epsilon: 0.0 };
        let fit = grid_fit_workspace(&ws.0, &family, &grid)?;
        std::slice::from_raw_parts_mut(best, n_axes).copy_from_slice(&fit.omega_hat);
        *loglik = fit.loglik;
        Ok(())
    })
}
