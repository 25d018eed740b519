//! C ABI over the collabrl harness.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns a [`CrlStatus`]; on
//! failure `crl_last_error_message` describes the most recent error on the
//! calling thread.

use collabrl::instances::{coherence, gen_tabular_instance, Bundle, BundleKind, TabularParams};
use collabrl::report::RunReport;
use collabrl::tabular::{run_tabular_pipeline_with, PipelineConfig};
use collabrl::Error;
use nalgebra::DMatrix;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrlStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Schema = 3,
    Phase = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

/// A tabular instance: shared MDP and per-step user reward matrices.
pub struct CrlTabularInstance {
    bundle: Bundle,
}

/// Report of one pipeline run, complete or partial.
pub struct CrlReport {
    report: RunReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CrlStatus {
    match e.exit_code() {
        2 => CrlStatus::Config,
        3 => CrlStatus::Schema,
        4 => CrlStatus::Phase,
        _ => CrlStatus::Io,
    }
}

fn fail(e: Error) -> CrlStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn guard(f: impl FnOnce() -> CrlStatus) -> CrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("panic inside collabrl");
            CrlStatus::Panic
        }
    }
}

fn null_arg(name: &str) -> CrlStatus {
    set_error(&format!("{name} is null"));
    CrlStatus::NullPointer
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, CrlStatus> {
    if p.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        CrlStatus::InvalidUtf8
    })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn crl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by a `crl_*_to_json` call that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn crl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generate a tabular instance.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn crl_tabular_instance_generate(
    num_users: usize,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rank: usize,
    seed: u64,
    out: *mut *mut CrlTabularInstance,
) -> CrlStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let params = TabularParams::new(num_users, num_states, num_actions, horizon, rank, seed);
        match gen_tabular_instance(&params) {
            Ok((mdp, rewards)) => {
                let inst = CrlTabularInstance {
                    bundle: Bundle::tabular(params, mdp, rewards),
                };
                *out = Box::into_raw(Box::new(inst));
                CrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Parse a tabular bundle document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crl_tabular_instance_from_json(json: *const c_char, out: *mut *mut CrlTabularInstance) -> CrlStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let text = match read_str(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match Bundle::from_json(text) {
            Ok(b) if b.kind == BundleKind::Tabular => {
                *out = Box::into_raw(Box::new(CrlTabularInstance { bundle: b }));
                CrlStatus::Ok
            }
            Ok(_) => fail(Error::Schema("bundle is not tabular".into())),
            Err(e) => fail(e),
        }
    })
}

/// Serialize an instance; free the result with `crl_string_free`.
///
/// # Safety
/// `inst` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crl_tabular_instance_to_json(inst: *const CrlTabularInstance, out: *mut *mut c_char) -> CrlStatus {
    guard(|| {
        if inst.is_null() {
            return null_arg("inst");
        }
        if out.is_null() {
            return null_arg("out");
        }
        match (*inst).bundle.to_json() {
            Ok(s) => {
                *out = into_c_string(s);
                CrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `inst` must be null or a handle that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn crl_tabular_instance_free(inst: *mut CrlTabularInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Run the collaborative tabular pipeline with the exact reward-free backend.
/// A non-positive `mask_rate` selects the theorem rate. On a phase failure the
/// partial report is still written to `out` and `CrlStatus::Phase` is returned.
///
/// # Safety
/// `inst` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crl_tabular_run(
    inst: *const CrlTabularInstance,
    epsilon: f64,
    mask_rate: f64,
    seed: u64,
    out: *mut *mut CrlReport,
) -> CrlStatus {
    guard(|| {
        if inst.is_null() {
            return null_arg("inst");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let b = &(*inst).bundle;
        let mut cfg = PipelineConfig::new(epsilon, seed);
        cfg.mask_rate = (mask_rate > 0.0).then_some(mask_rate);
        let mut last: Option<RunReport> = None;
        let rewards = b.rewards.as_ref().expect("tabular bundle has rewards");
        let res = run_tabular_pipeline_with(&b.mdp, rewards, &cfg, &mut |r| last = Some(r.clone()));
        match res {
            Ok(run) => {
                *out = Box::into_raw(Box::new(CrlReport { report: run.report }));
                CrlStatus::Ok
            }
            Err(e) => {
                if let Some(report) = last {
                    *out = Box::into_raw(Box::new(CrlReport { report }));
                }
                fail(e)
            }
        }
    })
}

/// Largest true suboptimality over users; NaN when no user was planned.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crl_report_max_subopt(report: *const CrlReport, out: *mut f64) -> CrlStatus {
    guard(|| {
        if report.is_null() {
            return null_arg("report");
        }
        if out.is_null() {
            return null_arg("out");
        }
        *out = (*report).report.max_user_subopt();
        CrlStatus::Ok
    })
}

/// Trajectories spent in `phase` (e.g. `"phase2"`, or `"total"`).
///
/// # Safety
/// `report` must be a live handle, `phase` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crl_report_phase_trajectories(
    report: *const CrlReport,
    phase: *const c_char,
    out: *mut u64,
) -> CrlStatus {
    guard(|| {
        if report.is_null() {
            return null_arg("report");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let name = match read_str(phase, "phase") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let r = &(*report).report;
        let value = if name == "total" {
            Some(r.total_trajectories())
        } else {
            r.phase_trajectories(name)
        };
        match value {
            Some(v) => {
                *out = v;
                CrlStatus::Ok
            }
            None => fail(Error::Config(format!("report has no phase {name}"))),
        }
    })
}

/// Serialize a report; free the result with `crl_string_free`.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crl_report_to_json(report: *const CrlReport, out: *mut *mut c_char) -> CrlStatus {
    guard(|| {
        if report.is_null() {
            return null_arg("report");
        }
        if out.is_null() {
            return null_arg("out");
        }
        match (*report).report.to_json() {
            Ok(s) => {
                *out = into_c_string(s);
                CrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `report` must be null or a handle that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn crl_report_free(report: *mut CrlReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Coherence `(μ0, μ1)` of a row-major `rows x cols` matrix at rank `rank`.
///
/// # Safety
/// `data` must point to `rows * cols` doubles; `mu0` and `mu1` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crl_coherence(
    data: *const f64,
    rows: usize,
    cols: usize,
    rank: usize,
    mu0: *mut f64,
    mu1: *mut f64,
) -> CrlStatus {
    guard(|| {
        if data.is_null() {
            return null_arg("data");
        }
        if mu0.is_null() || mu1.is_null() {
            return null_arg("mu0/mu1");
        }
        let len = match rows.checked_mul(cols) {
            Some(l) if l > 0 => l,
            _ => return fail(Error::Config("matrix shape must be non-empty".into())),
        };
        let m = DMatrix::from_row_slice(rows, cols, std::slice::from_raw_parts(data, len));
        match coherence(&m, rank) {
            Ok(c) => {
                *mu0 = c.mu0;
                *mu1 = c.mu1;
                CrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
