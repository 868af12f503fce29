//! C ABI over `otafeel`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style calls and released with the matching `*_free`. Fallible calls return
//! an [`OtafeelStatus`]; the message of the last failure on the calling thread
//! is available from [`otafeel_last_error`]. No call unwinds into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use otafeel::config::{load_scenario, ScenarioConfig};
use otafeel::export::{export_metrics, RoundRow};
use otafeel::feel::{run_baseline, Baseline, RunOptions, RunOutput, World};
use otafeel::Error;

/// Result of a fallible call. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OtafeelStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Infeasible = 4,
    InvalidParameter = 5,
    Io = 6,
    OutOfRange = 7,
    Internal = 8,
    Panic = 9,
}

impl From<&Error> for OtafeelStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Json { .. } => OtafeelStatus::Config,
            Error::Infeasible { .. } => OtafeelStatus::Infeasible,
            Error::Parameter(_) | Error::Dimension(_) => OtafeelStatus::InvalidParameter,
            Error::Io { .. } | Error::Csv { .. } => OtafeelStatus::Io,
            _ => OtafeelStatus::Internal,
        }
    }
}

/// Scenario configuration.
pub struct OtafeelScenario {
    cfg: ScenarioConfig,
}

/// Per-round metrics of one finished run.
pub struct OtafeelRun {
    out: RunOutput,
}

/// One round of a run. NaN marks metrics the baseline does not produce.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OtafeelRoundLog {
    /// 1-based.
    pub round: u64,
    pub sensing_mse: f64,
    pub agg_mse: f64,
    pub task_loss: f64,
    pub task_accuracy: f64,
    pub crb_l: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn fail(status: OtafeelStatus, msg: impl Into<String>) -> OtafeelStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> OtafeelStatus {
    let status = OtafeelStatus::from(&e);
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into [`OtafeelStatus::Panic`].
fn guard(f: impl FnOnce() -> OtafeelStatus) -> OtafeelStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(OtafeelStatus::Panic, "internal panic"))
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, OtafeelStatus> {
    if s.is_null() {
        return Err(fail(OtafeelStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(OtafeelStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn otafeel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn otafeel_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Built-in default scenario. Never null.
#[no_mangle]
pub extern "C" fn otafeel_scenario_default() -> *mut OtafeelScenario {
    Box::into_raw(Box::new(OtafeelScenario { cfg: ScenarioConfig::default() }))
}

/// Parses and validates a scenario document.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otafeel_scenario_from_json(json: *const c_char, out: *mut *mut OtafeelScenario) -> OtafeelStatus {
    guard(|| {
        if out.is_null() {
            return fail(OtafeelStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ScenarioConfig::from_json(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(OtafeelScenario { cfg }));
                OtafeelStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otafeel_scenario_load(path: *const c_char, out: *mut *mut OtafeelScenario) -> OtafeelStatus {
    guard(|| {
        if out.is_null() {
            return fail(OtafeelStatus::NullPointer, "null output pointer");
        }
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scenario(Path::new(path)) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(OtafeelScenario { cfg }));
                OtafeelStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Overrides the number of protocol rounds.
///
/// # Safety
/// `scenario` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn otafeel_scenario_set_rounds(scenario: *mut OtafeelScenario, rounds: u64) -> OtafeelStatus {
    let Some(s) = scenario.as_mut() else { return fail(OtafeelStatus::NullPointer, "null scenario") };
    if rounds == 0 {
        return fail(OtafeelStatus::InvalidParameter, "rounds must be positive");
    }
    s.cfg.protocol.rounds = rounds as usize;
    OtafeelStatus::Ok
}

/// Serializes the scenario; free the string with [`otafeel_string_free`].
///
/// # Safety
/// `scenario` is null or a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otafeel_scenario_to_json(scenario: *const OtafeelScenario, out: *mut *mut c_char) -> OtafeelStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(OtafeelStatus::NullPointer, "null scenario or output pointer");
        };
        match CString::new(s.cfg.to_json()) {
            Ok(c) => {
                *out = c.into_raw();
                OtafeelStatus::Ok
            }
            Err(_) => fail(OtafeelStatus::Internal, "serialized scenario contains NUL"),
        }
    })
}

/// # Safety
/// `scenario` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn otafeel_scenario_free(scenario: *mut OtafeelScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn otafeel_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs one baseline (`"collabsensefed"`, `"perfect_feel"`, `"ota_feel"`,
/// `"single_shot"`, `"sensing_perfect"`, `"sensing_ota"`) on one seed.
///
/// # Safety
/// `scenario` is a live handle, `baseline` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otafeel_run(
    scenario: *const OtafeelScenario,
    seed: u64,
    baseline: *const c_char,
    out: *mut *mut OtafeelRun,
) -> OtafeelStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(OtafeelStatus::NullPointer, "null scenario or output pointer");
        };
        let name = match read_str(baseline) {
            Ok(n) => n,
            Err(st) => return st,
        };
        let result = name.parse::<Baseline>().and_then(|b| {
            let world = World::new(&s.cfg, seed)?;
            let task = world.synthetic_task()?;
            run_baseline(&world, &task, b, RunOptions::default())
        });
        match result {
            Ok(run) => {
                *out = Box::into_raw(Box::new(OtafeelRun { out: run }));
                OtafeelStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of logged rounds; zero for a null handle.
///
/// # Safety
/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn otafeel_run_rounds(run: *const OtafeelRun) -> usize {
    run.as_ref().map_or(0, |r| r.out.logs.len())
}

/// Copies round `index` (0-based) into `out`.
///
/// # Safety
/// `run` is null or a live handle; `out` is null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn otafeel_run_round(run: *const OtafeelRun, index: usize, out: *mut OtafeelRoundLog) -> OtafeelStatus {
    let (Some(r), Some(dst)) = (run.as_ref(), out.as_mut()) else {
        return fail(OtafeelStatus::NullPointer, "null run or output pointer");
    };
    let Some(l) = r.out.logs.get(index) else {
        return fail(OtafeelStatus::OutOfRange, format!("round index {index} out of {}", r.out.logs.len()));
    };
    *dst = OtafeelRoundLog {
        round: l.round as u64,
        sensing_mse: l.sensing_mse,
        agg_mse: l.agg_mse,
        task_loss: l.task_loss,
        task_accuracy: l.task_accuracy,
        crb_l: l.crb_l,
    };
    OtafeelStatus::Ok
}

/// Writes the run's rounds as CSV.
///
/// # Safety
/// `run` is a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn otafeel_run_write_csv(run: *const OtafeelRun, path: *const c_char) -> OtafeelStatus {
    guard(|| {
        let Some(r) = run.as_ref() else { return fail(OtafeelStatus::NullPointer, "null run") };
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let rows: Vec<RoundRow> = r.out.logs.iter().map(|l| RoundRow::new(l, r.out.baseline, r.out.seed)).collect();
        match export_metrics(&rows, Path::new(path)) {
            Ok(()) => OtafeelStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `run` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn otafeel_run_free(run: *mut OtafeelRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Real scalars forwarded when raw echoes are centralized.
#[no_mangle]
pub extern "C" fn otafeel_ssl_centralized(k: u64, m: u64, s: u64) -> u64 {
    otafeel::ssl::ssl_centralized(k, m, s)
}

/// Real scalars sent for sensing by the distributed protocol.
#[no_mangle]
pub extern "C" fn otafeel_ssl_distributed(d: u64, rounds: u64, tau: u64) -> u64 {
    otafeel::ssl::ssl_distributed(d, rounds, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_status_codes() {
        assert_eq!(OtafeelStatus::from(&Error::Config(vec![])), OtafeelStatus::Config);
        assert_eq!(OtafeelStatus::from(&Error::Infeasible { epsilon_inv: 2.0, budget: 1.0 }), OtafeelStatus::Infeasible);
        assert_eq!(OtafeelStatus::from(&Error::ZeroEnergy), OtafeelStatus::Internal);
    }

    #[test]
    fn panics_are_contained() {
        assert_eq!(guard(|| panic!("boom")), OtafeelStatus::Panic);
        let msg = unsafe { CStr::from_ptr(otafeel_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }
}
