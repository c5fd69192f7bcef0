//! C interface to the audit engine.
//!
//! Every fallible call returns an [`RlaStatus`]; on failure the message is
//! kept per thread and read with [`rla_last_error_message`]. Handles are
//! opaque and released with their `_free` function. Strings returned to
//! the caller are released with [`rla_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rla_core::engine::{load_state, measure_all, AuditDecision, AuditState};
use rla_core::nonneg_mean::{FloatTest, TestKind};
use rla_core::rational;
use rla_core::AuditError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    NotFound = 5,
    Conflict = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlaTestKind {
    /// Kaplan-Kolmogorov product test; takes a shift.
    Kk = 0,
    /// Kaplan-martingale integral test; ignores the shift.
    Km = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlaDecision {
    InProgress = 0,
    Certified = 1,
    FullHandCount = 2,
}

/// Sequential test fed one value at a time.
pub struct RlaTest {
    test: FloatTest,
    population: Option<u64>,
}

/// An audit loaded from its state file.
pub struct RlaAudit {
    state: AuditState,
}

struct Failure(RlaStatus, String);

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        let status = match e.code() {
            "parse_error" => RlaStatus::ParseError,
            "io_error" => RlaStatus::IoError,
            "not_found" | "unknown_contest" => RlaStatus::NotFound,
            "conflict" | "round_error" => RlaStatus::Conflict,
            _ => RlaStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(RlaStatus::InvalidArgument, message.into())
}

fn null(name: &str) -> Failure {
    Failure(RlaStatus::NullPointer, format!("`{name}` is null"))
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> RlaStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (RlaStatus::Ok, None),
        Ok(Err(Failure(status, message))) => (status, Some(message)),
        Err(_) => (RlaStatus::Panic, Some("internal panic".to_string())),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
    status
}

fn new_test(kind: RlaTestKind, shift: f64, population: u64, null_mean: f64) -> Result<RlaTest, Failure> {
    if !(null_mean.is_finite() && null_mean > 0.0) {
        return Err(invalid("null mean must be positive and finite"));
    }
    let kind = match kind {
        RlaTestKind::Kk => {
            if !(shift.is_finite() && shift >= 0.0) {
                return Err(invalid("shift must be nonnegative and finite"));
            }
            TestKind::kk(rational::from_f64(shift)?)
        }
        RlaTestKind::Km => TestKind::KaplanMartingale,
    };
    let population = (population > 0).then_some(population);
    Ok(RlaTest { test: FloatTest::new(&kind, population, null_mean), population })
}

fn push(test: &mut RlaTest, x: f64) -> Result<(), Failure> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(invalid(format!("value {x} is not a nonnegative number")));
    }
    if test.population.is_some_and(|n| test.test.draws() >= n) {
        return Err(invalid("more draws than the population holds"));
    }
    test.test.push(x);
    Ok(())
}

unsafe fn slice<'a>(values: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if values.is_null() {
        return Err(null("values"));
    }
    Ok(std::slice::from_raw_parts(values, len))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(text: String) -> Result<*mut c_char, Failure> {
    CString::new(text).map(CString::into_raw).map_err(|_| invalid("string holds a NUL byte"))
}

/// Message of the last failed call on this thread, or null. Free with
/// [`rla_string_free`].
#[no_mangle]
pub extern "C" fn rla_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(m) => CString::new(m.replace('\0', " ")).map(CString::into_raw).unwrap_or(std::ptr::null_mut()),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rla_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn one_shot(
    kind: RlaTestKind,
    values: *const f64,
    len: usize,
    population: u64,
    null_mean: f64,
    shift: f64,
    out_p: *mut f64,
) -> RlaStatus {
    run(|| {
        let values = slice(values, len)?;
        let mut test = new_test(kind, shift, population, null_mean)?;
        for x in values {
            push(&mut test, *x)?;
        }
        write(out_p, test.test.p_value())
    })
}

/// Kaplan-Kolmogorov p-value for "mean <= null_mean" from `len` draws.
/// `population` 0 means sampling with replacement.
///
/// # Safety
/// `values` must point to `len` doubles and `out_p` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn rla_kk_pvalue(
    values: *const f64,
    len: usize,
    population: u64,
    null_mean: f64,
    shift: f64,
    out_p: *mut f64,
) -> RlaStatus {
    one_shot(RlaTestKind::Kk, values, len, population, null_mean, shift, out_p)
}

/// Kaplan-martingale p-value for "mean <= null_mean" from `len` draws.
/// `population` 0 means sampling with replacement.
///
/// # Safety
/// `values` must point to `len` doubles and `out_p` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn rla_km_pvalue(
    values: *const f64,
    len: usize,
    population: u64,
    null_mean: f64,
    out_p: *mut f64,
) -> RlaStatus {
    one_shot(RlaTestKind::Km, values, len, population, null_mean, 0.0, out_p)
}

/// Starts a sequential test of "mean <= null_mean".
///
/// # Safety
/// `out` must point to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn rla_test_new(
    kind: RlaTestKind,
    shift: f64,
    population: u64,
    null_mean: f64,
    out: *mut *mut RlaTest,
) -> RlaStatus {
    run(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let test = new_test(kind, shift, population, null_mean)?;
        write(out, Box::into_raw(Box::new(test)))
    })
}

/// Feeds the next draw.
///
/// # Safety
/// `test` must be a live handle from [`rla_test_new`].
#[no_mangle]
pub unsafe extern "C" fn rla_test_push(test: *mut RlaTest, x: f64) -> RlaStatus {
    run(|| push(test.as_mut().ok_or_else(|| null("test"))?, x))
}

/// Current p-value (max-so-far rule).
///
/// # Safety
/// `test` must be a live handle and `out_p` writable.
#[no_mangle]
pub unsafe extern "C" fn rla_test_pvalue(test: *const RlaTest, out_p: *mut f64) -> RlaStatus {
    run(|| write(out_p, test.as_ref().ok_or_else(|| null("test"))?.test.p_value()))
}

/// Number of draws consumed so far; 0 for a null handle.
///
/// # Safety
/// `test` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rla_test_draws(test: *const RlaTest) -> u64 {
    test.as_ref().map_or(0, |t| t.test.draws())
}

/// # Safety
/// `test` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rla_test_free(test: *mut RlaTest) {
    if !test.is_null() {
        drop(Box::from_raw(test));
    }
}

/// Loads an audit from the state file at `path` (UTF-8).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rla_audit_open(path: *const c_char, out: *mut *mut RlaAudit) -> RlaStatus {
    run(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let state = load_state(Path::new(path))?;
        write(out, Box::into_raw(Box::new(RlaAudit { state })))
    })
}

/// Overall decision of the audit.
///
/// # Safety
/// `audit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rla_audit_decision(audit: *const RlaAudit, out: *mut RlaDecision) -> RlaStatus {
    run(|| {
        let audit = audit.as_ref().ok_or_else(|| null("audit"))?;
        let decision = match audit.state.decision {
            AuditDecision::InProgress => RlaDecision::InProgress,
            AuditDecision::Certified => RlaDecision::Certified,
            AuditDecision::FullHandCount => RlaDecision::FullHandCount,
        };
        write(out, decision)
    })
}

/// Status report as JSON: decision, per-contest measured risk and
/// per-assertion p-values. Free with [`rla_string_free`].
///
/// # Safety
/// `audit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rla_audit_status_json(audit: *const RlaAudit, out: *mut *mut c_char) -> RlaStatus {
    run(|| {
        let audit = audit.as_ref().ok_or_else(|| null("audit"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = measure_all(&audit.state)?.to_json()?;
        write(out, to_c_string(json)?)
    })
}

/// # Safety
/// `audit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rla_audit_free(audit: *mut RlaAudit) {
    if !audit.is_null() {
        drop(Box::from_raw(audit));
    }
}
