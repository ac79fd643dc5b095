//! C ABI over `densbranch`.
//!
//! Laws and `h` tables are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`DbStatus`]; on failure the
//! message is available from [`db_last_error`] on the same thread. Output
//! pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use densbranch::schroeder::{compute_h, h_eval, h_inverse, import_table, IteratedMap, SchroederH};
use densbranch::simulator::simulate_replicate;
use densbranch::stats::ks_two_sample;
use densbranch::wlimit::{extinction_probability, sample_w, w_moments};
use densbranch::{Error, OffspringLaw, SimConfig, SimMode};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Overflow = 3,
    OutOfRange = 4,
    NoConvergence = 5,
    BufferTooSmall = 6,
    Io = 7,
    Panic = 8,
}

/// An offspring law.
pub struct DbLaw(OffspringLaw);

/// A tabulated limit function `h`.
pub struct DbHTable(SchroederH);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> DbStatus {
    match e {
        Error::Invalid { .. }
        | Error::Config(_)
        | Error::EmptySample
        | Error::IndexBeyondHorizon { .. } => DbStatus::InvalidArgument,
        Error::Overflow { .. } | Error::Infeasible(_) => DbStatus::Overflow,
        Error::OutOfRange { .. } => DbStatus::OutOfRange,
        Error::NonMonotone { .. } | Error::NoConvergence { .. } => DbStatus::NoConvergence,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => DbStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Status(DbStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(DbStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> DbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DbStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            DbStatus::Panic
        }
    }
}

unsafe fn law_ref<'a>(law: *const DbLaw) -> Result<&'a OffspringLaw, Fail> {
    unsafe { law.as_ref() }
        .map(|l| &l.0)
        .ok_or_else(|| null("law"))
}

unsafe fn table_ref<'a>(h: *const DbHTable) -> Result<&'a SchroederH, Fail> {
    unsafe { h.as_ref() }
        .map(|t| &t.0)
        .ok_or_else(|| null("table"))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, len) })
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|_| Fail::Status(DbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn emit_law(law: Result<OffspringLaw, Error>, out: *mut *mut DbLaw) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let law = Box::into_raw(Box::new(DbLaw(law?)));
    unsafe { out.write(law) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn db_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn db_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Binary splitting: one or two offspring, two with probability
/// `p0 (1 - kappa/sqrt(K)) / (1 + beta x)`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn db_law_binary_split(
    p0: f64,
    beta: f64,
    kappa: f64,
    out: *mut *mut DbLaw,
) -> DbStatus {
    guard(|| unsafe {
        emit_law(
            OffspringLaw::binary_split(p0, beta).and_then(|l| l.with_kappa(kappa)),
            out,
        )
    })
}

/// Poisson offspring with mean `a (1 - kappa/sqrt(K)) / (1 + b x)`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn db_law_beverton_holt(
    a: f64,
    b: f64,
    kappa: f64,
    out: *mut *mut DbLaw,
) -> DbStatus {
    guard(|| unsafe {
        emit_law(
            OffspringLaw::beverton_holt_poisson(a, b).and_then(|l| l.with_kappa(kappa)),
            out,
        )
    })
}

/// Any law from its JSON form, e.g. `{"family":"binary_split","p0":0.5,"beta":1}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn db_law_from_json(json: *const c_char, out: *mut *mut DbLaw) -> DbStatus {
    guard(|| unsafe {
        let json = text(json, "json")?;
        let law = serde_json::from_str(json)
            .map_err(|e| Fail::Status(DbStatus::InvalidArgument, format!("law json: {e}")))?;
        emit_law(Ok(law), out)
    })
}

/// # Safety
/// `law` must come from a `db_law_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn db_law_free(law: *mut DbLaw) {
    if !law.is_null() {
        drop(unsafe { Box::from_raw(law) });
    }
}

/// Growth rate `a = m(0)` of the limiting law.
///
/// # Safety
/// `law` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_law_growth(law: *const DbLaw, out: *mut f64) -> DbStatus {
    guard(|| unsafe { write(out, law_ref(law)?.malthusian()) })
}

/// Offspring mean at density `x` and capacity `k` (`k = INFINITY` for the limit).
///
/// # Safety
/// `law` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_law_mean(law: *const DbLaw, x: f64, k: f64, out: *mut f64) -> DbStatus {
    guard(|| unsafe { write(out, law_ref(law)?.offspring_mean(x, k)) })
}

/// # Safety
/// `law` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_law_variance(
    law: *const DbLaw,
    x: f64,
    k: f64,
    out: *mut f64,
) -> DbStatus {
    guard(|| unsafe { write(out, law_ref(law)?.offspring_variance(x, k)) })
}

/// Offspring count at quantile `u` in (0, 1].
///
/// # Safety
/// `law` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_law_sample(
    law: *const DbLaw,
    x: f64,
    k: f64,
    u: f64,
    out: *mut u64,
) -> DbStatus {
    guard(|| unsafe {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Fail::Status(
                DbStatus::InvalidArgument,
                "u must lie in (0, 1]".into(),
            ));
        }
        write(out, law_ref(law)?.sample_offspring(x, k, u))
    })
}

/// `f^K` applied `n` times to `x0`.
///
/// # Safety
/// `law` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_iterate_f(
    law: *const DbLaw,
    k: f64,
    x0: f64,
    n: usize,
    out: *mut f64,
) -> DbStatus {
    guard(|| unsafe {
        let law = law_ref(law)?;
        write(out, IteratedMap::at_capacity(law, k).iterate(x0, n))
    })
}

/// Tabulate `h` on `[0, x_max]` with `knots` uniform knots to tolerance `tol`.
///
/// # Safety
/// `law` must be a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn db_h_compute(
    law: *const DbLaw,
    x_max: f64,
    knots: usize,
    tol: f64,
    out: *mut *mut DbHTable,
) -> DbStatus {
    guard(|| unsafe {
        let h = compute_h(&IteratedMap::limit(law_ref(law)?), x_max, knots, tol)?;
        write(out, Box::into_raw(Box::new(DbHTable(h))))
    })
}

/// Load a table written by the command-line `compute-h`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn db_h_import(path: *const c_char, out: *mut *mut DbHTable) -> DbStatus {
    guard(|| unsafe {
        let (h, _) = import_table(Path::new(text(path, "path")?))?;
        write(out, Box::into_raw(Box::new(DbHTable(h))))
    })
}

/// # Safety
/// `h` must come from `db_h_compute` or `db_h_import` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn db_h_free(h: *mut DbHTable) {
    if !h.is_null() {
        drop(unsafe { Box::from_raw(h) });
    }
}

/// # Safety
/// `h` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_h_eval(h: *const DbHTable, x: f64, out: *mut f64) -> DbStatus {
    guard(|| unsafe { write(out, h_eval(table_ref(h)?, x)?) })
}

/// # Safety
/// `h` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_h_inverse(h: *const DbHTable, y: f64, out: *mut f64) -> DbStatus {
    guard(|| unsafe { write(out, h_inverse(table_ref(h)?, y)?) })
}

/// Upper end of the tabulated range.
///
/// # Safety
/// `h` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_h_x_max(h: *const DbHTable, out: *mut f64) -> DbStatus {
    guard(|| unsafe { write(out, table_ref(h)?.x_max) })
}

/// Mean and variance of the martingale limit `W(z0)`.
///
/// # Safety
/// `law` must be a live handle; `mean` and `variance` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn db_w_moments(
    law: *const DbLaw,
    z0: u64,
    mean: *mut f64,
    variance: *mut f64,
) -> DbStatus {
    guard(|| unsafe {
        let (m, v) = w_moments(law_ref(law)?, z0);
        if mean.is_null() || variance.is_null() {
            return Err(null("output pointer"));
        }
        write(mean, m)?;
        write(variance, v)
    })
}

/// Extinction probability of the comparison process from one individual.
///
/// # Safety
/// `law` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn db_extinction_probability(law: *const DbLaw, out: *mut f64) -> DbStatus {
    guard(|| unsafe { write(out, extinction_probability(law_ref(law)?)?) })
}

/// Counts `Z_0..Z_n` of replicate `replicate` into `buf`, `n = len - 1`.
/// `exact` selects the per-individual construction; otherwise aggregate
/// draws are used.
///
/// # Safety
/// `law` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn db_simulate_path(
    law: *const DbLaw,
    capacity: f64,
    z0: u64,
    seed: u64,
    replicate: u64,
    exact: bool,
    buf: *mut u64,
    len: usize,
) -> DbStatus {
    guard(|| unsafe {
        let law = law_ref(law)?;
        let buf = slice_mut(buf, len, "buf")?;
        if buf.is_empty() {
            return Err(Fail::Status(
                DbStatus::BufferTooSmall,
                "buf must hold at least Z_0".into(),
            ));
        }
        let mode = if exact { SimMode::Exact } else { SimMode::Fast };
        let mut cfg = SimConfig::new(law, capacity, z0)
            .with_seed(seed)
            .with_mode(mode);
        cfg.n_max = cfg.n_max.max(len as u32 - 1);
        let path = simulate_replicate(law, &cfg, replicate, len as u32 - 1)?;
        buf.copy_from_slice(&path.counts);
        Ok(())
    })
}

/// `len` samples of `W(z0)` truncated at generation `n_trunc`.
///
/// # Safety
/// `law` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn db_sample_w(
    law: *const DbLaw,
    z0: u64,
    n_trunc: u32,
    seed: u64,
    buf: *mut f64,
    len: usize,
) -> DbStatus {
    guard(|| unsafe {
        let law = law_ref(law)?;
        let buf = slice_mut(buf, len, "buf")?;
        for (slot, s) in buf.iter_mut().zip(sample_w(law, z0, n_trunc, seed, len)?) {
            *slot = s.value;
        }
        Ok(())
    })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
///
/// # Safety
/// `a` and `b` valid for `na` and `nb` reads; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn db_ks_two_sample(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    statistic: *mut f64,
    p_value: *mut f64,
) -> DbStatus {
    guard(|| unsafe {
        if statistic.is_null() || p_value.is_null() {
            return Err(null("output pointer"));
        }
        let ks = ks_two_sample(slice(a, na, "a")?, slice(b, nb, "b")?)?;
        write(statistic, ks.statistic)?;
        write(p_value, ks.p_value)
    })
}
