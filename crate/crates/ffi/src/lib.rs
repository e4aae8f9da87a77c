//! C interface to the basket option pricer.
//!
//! A pricer is created from a TOML configuration string, run once, then
//! queried. Every function returns a [`BetdStatus`]; on failure the message
//! is available from [`betd_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use basket_etd::cli::{self, RunConfig, Solution};
use basket_etd::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Unstable = 4,
    OutOfDomain = 5,
    Numerical = 6,
    Io = 7,
    NotRun = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Step-size diagnostics of a configured run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BetdStability {
    pub h_max: f64,
    pub k_max: f64,
    pub h_used: f64,
    pub k_used: f64,
    pub h_satisfied: bool,
    pub k_satisfied: bool,
    pub satisfied: bool,
    pub mu_inf: f64,
    pub metzler: bool,
}

/// Opaque pricer handle.
pub struct BetdPricer {
    config: RunConfig,
    solution: Option<Solution>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> BetdStatus {
    match e.root() {
        Error::Config(_) => BetdStatus::Config,
        Error::Unstable { .. } => BetdStatus::Unstable,
        Error::OutOfDomain { .. } => BetdStatus::OutOfDomain,
        Error::ConvergenceFailure { .. }
        | Error::BoundaryDrift { .. }
        | Error::InvalidProbabilities(_) => BetdStatus::Numerical,
        Error::Io(_) => BetdStatus::Io,
        _ => BetdStatus::InvalidInput,
    }
}

struct Failure(BetdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BetdStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BetdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            BetdStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(BetdStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(BetdStatus::InvalidInput, format!("invalid UTF-8: {e}")))
}

unsafe fn pricer_ref<'a>(p: *const BetdPricer) -> Result<&'a BetdPricer, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn pricer_mut<'a>(p: *mut BetdPricer) -> Result<&'a mut BetdPricer, Failure> {
    p.as_mut().ok_or_else(null)
}

fn solution(p: &BetdPricer) -> Result<&Solution, Failure> {
    p.solution
        .as_ref()
        .ok_or_else(|| Failure(BetdStatus::NotRun, "pricer has not been run".into()))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn betd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn betd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates `config_toml`; on success stores a new handle in
/// `*out`, which must be released with [`betd_pricer_free`].
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_new(
    config_toml: *const c_char,
    out: *mut *mut BetdPricer,
) -> BetdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = ptr::null_mut();
        let src = str_arg(config_toml)?;
        let config = RunConfig::from_toml_str(src)?;
        *out = Box::into_raw(Box::new(BetdPricer {
            config,
            solution: None,
        }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `pricer` must come from [`betd_pricer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_free(pricer: *mut BetdPricer) {
    if !pricer.is_null() {
        drop(Box::from_raw(pricer));
    }
}

/// Allows runs that violate the step-size conditions.
///
/// # Safety
/// `pricer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_set_override_stability(
    pricer: *mut BetdPricer,
    enabled: bool,
) -> BetdStatus {
    guard(|| {
        pricer_mut(pricer)?.config.flags.override_stability = enabled;
        Ok(())
    })
}

/// Stability report for the configured grid and time step, available
/// before [`betd_pricer_run`].
///
/// # Safety
/// `pricer` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_stability(
    pricer: *const BetdPricer,
    out: *mut BetdStability,
) -> BetdStatus {
    guard(|| {
        let p = pricer_ref(pricer)?;
        let out = out.as_mut().ok_or_else(null)?;
        let r = cli::plan(&p.config)?.stability;
        *out = BetdStability {
            h_max: r.h_max,
            k_max: r.k_max,
            h_used: r.h_used,
            k_used: r.k_used,
            h_satisfied: r.h_satisfied,
            k_satisfied: r.k_satisfied,
            satisfied: r.satisfied,
            mu_inf: r.mu_inf,
            metzler: r.metzler,
        };
        Ok(())
    })
}

/// Runs the time stepping. Returns `BETD_STATUS_UNSTABLE` if the step
/// conditions fail and the override is off.
///
/// # Safety
/// `pricer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_run(pricer: *mut BetdPricer) -> BetdStatus {
    guard(|| {
        let p = pricer_mut(pricer)?;
        p.solution = None;
        p.solution = Some(cli::run(&p.config)?);
        Ok(())
    })
}

/// Interpolated price at `spot` (`len` asset prices).
///
/// # Safety
/// `pricer` must be a live handle, `spot` readable for `len` values and
/// `price` writable.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_query(
    pricer: *const BetdPricer,
    spot: *const f64,
    len: usize,
    price: *mut f64,
) -> BetdStatus {
    guard(|| {
        let p = pricer_ref(pricer)?;
        if spot.is_null() || price.is_null() {
            return Err(null());
        }
        let sol = solution(p)?;
        let dim = sol.summary.dim;
        if len != dim {
            return Err(Failure(
                BetdStatus::InvalidInput,
                format!("expected {dim} spot prices, got {len}"),
            ));
        }
        *price = sol.price_at(slice::from_raw_parts(spot, len))?;
        Ok(())
    })
}

/// Number of grid nodes of the last run.
///
/// # Safety
/// `pricer` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_node_count(
    pricer: *const BetdPricer,
    out: *mut usize,
) -> BetdStatus {
    guard(|| {
        let p = pricer_ref(pricer)?;
        let out = out.as_mut().ok_or_else(null)?;
        *out = solution(p)?.u.len();
        Ok(())
    })
}

/// Copies the price at every node, in flat-index order, into `out`.
///
/// # Safety
/// `pricer` must be a live handle and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_surface(
    pricer: *const BetdPricer,
    out: *mut f64,
    len: usize,
) -> BetdStatus {
    guard(|| {
        let p = pricer_ref(pricer)?;
        if out.is_null() {
            return Err(null());
        }
        let sol = solution(p)?;
        if len < sol.u.len() {
            return Err(Failure(
                BetdStatus::BufferTooSmall,
                format!("need {} values, got {len}", sol.u.len()),
            ));
        }
        let strike = sol.problem.option.strike;
        let dst = slice::from_raw_parts_mut(out, sol.u.len());
        for (d, &u) in dst.iter_mut().zip(&sol.u) {
            *d = u * strike;
        }
        Ok(())
    })
}

/// Writes the surface CSV of the last run to `path`.
///
/// # Safety
/// `pricer` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn betd_pricer_write_surface(
    pricer: *const BetdPricer,
    path: *const c_char,
) -> BetdStatus {
    guard(|| {
        let p = pricer_ref(pricer)?;
        let path = str_arg(path)?;
        let sol = solution(p)?;
        let pr = &sol.problem;
        cli::emit_surface(&sol.u, &pr.grid, &pr.tp, &pr.option, Path::new(path))?;
        Ok(())
    })
}
