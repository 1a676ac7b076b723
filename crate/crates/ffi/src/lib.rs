//! C interface to the experiment harness and the enumeration oracles.
//!
//! Handles are opaque and owned by the caller once returned; free each with
//! its `_free` function. Every fallible call returns a [`LogoptStatus`] and
//! leaves a message for [`logopt_last_error`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use logopt_core::harness::{
    results_csv, run_experiment, summarize, summary_csv, ExperimentConfig, MethodKind, ResultRow,
};
use logopt_core::interleaving::PiConfig;
use logopt_core::model::Ranking;
use logopt_core::oracles::{enum_expected_outcome, OracleMethod, SmallInstance};
use logopt_core::policy::UniformPolicy;
use logopt_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Parse = 4,
    EnumerationCap = 5,
    SupportViolation = 6,
    DegenerateTraining = 7,
    Infeasible = 8,
    Io = 9,
    OutOfRange = 10,
    Panic = 11,
}

impl From<&Error> for LogoptStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => LogoptStatus::InvalidInput,
            Error::Parse { .. } => LogoptStatus::Parse,
            Error::EnumerationCap(_) => LogoptStatus::EnumerationCap,
            Error::SupportViolation { .. } => LogoptStatus::SupportViolation,
            Error::DegenerateTraining(_) => LogoptStatus::DegenerateTraining,
            Error::Infeasible(_) => LogoptStatus::Infeasible,
            Error::Io(_) => LogoptStatus::Io,
        }
    }
}

/// Comparison methods, numbered as in the harness configuration.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogoptMethod {
    Ab = 0,
    Tdi = 1,
    Pi = 2,
    Oi = 3,
    IpsUniform = 4,
    IpsAb = 5,
    IpsLogopt = 6,
    IpsOracleLogopt = 7,
}

impl From<MethodKind> for LogoptMethod {
    fn from(m: MethodKind) -> Self {
        match m {
            MethodKind::Ab => LogoptMethod::Ab,
            MethodKind::Tdi => LogoptMethod::Tdi,
            MethodKind::Pi => LogoptMethod::Pi,
            MethodKind::Oi => LogoptMethod::Oi,
            MethodKind::IpsUniform => LogoptMethod::IpsUniform,
            MethodKind::IpsAb => LogoptMethod::IpsAb,
            MethodKind::IpsLogopt => LogoptMethod::IpsLogopt,
            MethodKind::IpsOracleLogopt => LogoptMethod::IpsOracleLogopt,
        }
    }
}

/// Methods the enumeration oracle can evaluate on a small instance.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogoptOracleMethod {
    /// A/B split with equal assignment.
    Ab = 0,
    Tdi = 1,
    /// Probabilistic interleaving with τ = 4.
    Pi = 2,
    Oi = 3,
    /// IPS with uniformly random logging.
    IpsUniform = 4,
}

/// One result row. Metric fields are NaN when `is_error` is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogoptRow {
    pub pair: u64,
    pub method: LogoptMethod,
    pub queries: u64,
    pub binary_error: f64,
    pub absolute_error: f64,
    pub mse: f64,
    pub true_delta: f64,
    pub delta_hat: f64,
    pub wall_clock: f64,
    pub is_error: bool,
}

impl From<&ResultRow> for LogoptRow {
    fn from(r: &ResultRow) -> Self {
        let m = r.metrics;
        LogoptRow {
            pair: r.pair as u64,
            method: r.method.into(),
            queries: r.queries,
            binary_error: m.map_or(f64::NAN, |m| f64::from(m.binary_error)),
            absolute_error: m.map_or(f64::NAN, |m| m.absolute_error),
            mse: m.map_or(f64::NAN, |m| m.mse),
            true_delta: r.true_delta,
            delta_hat: r.delta_hat.unwrap_or(f64::NAN),
            wall_clock: r.wall_clock,
            is_error: r.is_error(),
        }
    }
}

/// Experiment configuration handle.
pub struct LogoptConfig(ExperimentConfig);

/// Rows of a finished experiment.
pub struct LogoptResults(Vec<ResultRow>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LogoptStatus, msg: &str) -> LogoptStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> LogoptStatus {
    fail(LogoptStatus::from(&e), &e.to_string())
}

/// Runs `f`, turning panics into [`LogoptStatus::Panic`].
fn guard(f: impl FnOnce() -> LogoptStatus) -> LogoptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LogoptStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, LogoptStatus> {
    if s.is_null() {
        return Err(fail(LogoptStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(LogoptStatus::InvalidUtf8, "string argument is not valid UTF-8"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("interior nul removed")
        .into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn logopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn logopt_config_new() -> *mut LogoptConfig {
    Box::into_raw(Box::new(LogoptConfig(ExperimentConfig::default())))
}

/// Parses line-oriented `key = value` text into a new configuration.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn logopt_config_parse(text: *const c_char, out: *mut *mut LogoptConfig) -> LogoptStatus {
    guard(|| {
        if out.is_null() {
            return fail(LogoptStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::parse(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(LogoptConfig(c)));
                LogoptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sets one configuration key.
///
/// # Safety
/// `config` must come from this library; `key` and `value` must be
/// nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn logopt_config_set(
    config: *mut LogoptConfig,
    key: *const c_char,
    value: *const c_char,
) -> LogoptStatus {
    guard(|| {
        let Some(config) = config.as_mut() else {
            return fail(LogoptStatus::NullPointer, "null configuration");
        };
        let (key, value) = match (read_str(key), read_str(value)) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match config.0.set(key, value) {
            Ok(()) => LogoptStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// The configuration as `key = value` text. Free with [`logopt_string_free`].
///
/// # Safety
/// `config` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn logopt_config_to_text(config: *const LogoptConfig) -> *mut c_char {
    match config.as_ref() {
        Some(c) => into_c_string(c.0.to_text()),
        None => {
            set_error("null configuration");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `config` must come from this library or be null, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn logopt_config_free(config: *mut LogoptConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the configured experiment. A failing (pair, method) cell becomes an
/// error row; only an invalid configuration fails the call.
///
/// # Safety
/// `config` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn logopt_run(config: *const LogoptConfig, out: *mut *mut LogoptResults) -> LogoptStatus {
    guard(|| {
        let Some(config) = config.as_ref() else {
            return fail(LogoptStatus::NullPointer, "null configuration");
        };
        if out.is_null() {
            return fail(LogoptStatus::NullPointer, "null output pointer");
        }
        match run_experiment(&config.0) {
            Ok(rows) => {
                *out = Box::into_raw(Box::new(LogoptResults(rows)));
                LogoptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `results` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn logopt_results_len(results: *const LogoptResults) -> usize {
    results.as_ref().map_or(0, |r| r.0.len())
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `results` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn logopt_results_get(
    results: *const LogoptResults,
    index: usize,
    out: *mut LogoptRow,
) -> LogoptStatus {
    let (Some(results), false) = (results.as_ref(), out.is_null()) else {
        return fail(LogoptStatus::NullPointer, "null results or output pointer");
    };
    match results.0.get(index) {
        Some(row) => {
            *out = LogoptRow::from(row);
            LogoptStatus::Ok
        }
        None => fail(LogoptStatus::OutOfRange, &format!("row {index} of {}", results.0.len())),
    }
}

/// Error message of row `index`, or null when the row succeeded. Free with
/// [`logopt_string_free`].
///
/// # Safety
/// `results` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn logopt_results_error(results: *const LogoptResults, index: usize) -> *mut c_char {
    results
        .as_ref()
        .and_then(|r| r.0.get(index))
        .and_then(|row| row.error.clone())
        .map_or(ptr::null_mut(), into_c_string)
}

/// The rows as `results.csv` text. Free with [`logopt_string_free`].
///
/// # Safety
/// `results` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn logopt_results_csv(results: *const LogoptResults) -> *mut c_char {
    match results.as_ref() {
        Some(r) => into_c_string(results_csv(&r.0)),
        None => {
            set_error("null results");
            ptr::null_mut()
        }
    }
}

/// Per-method summary as `summary.csv` text, or null on empty results.
/// Free with [`logopt_string_free`].
///
/// # Safety
/// `results` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn logopt_results_summary_csv(results: *const LogoptResults) -> *mut c_char {
    let Some(r) = results.as_ref() else {
        set_error("null results");
        return ptr::null_mut();
    };
    match summarize(&r.0) {
        Ok(s) => into_c_string(summary_csv(&s)),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `results` must come from this library or be null, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn logopt_results_free(results: *mut LogoptResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// # Safety
/// `s` must be a string returned by this library or null.
#[no_mangle]
pub unsafe extern "C" fn logopt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Exact expected per-interaction outcome of `method` on a small instance:
/// `num_docs` documents (at most five) with attractions `zeta`, examination
/// `theta` over `display_length` ranks, and two complete rankers given as
/// document permutations.
///
/// # Safety
/// `theta` must point to `display_length` values, `zeta`, `ranker1` and
/// `ranker2` to `num_docs` values each, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn logopt_oracle_expected_outcome(
    method: LogoptOracleMethod,
    theta: *const f64,
    display_length: usize,
    zeta: *const f64,
    ranker1: *const usize,
    ranker2: *const usize,
    num_docs: usize,
    out: *mut f64,
) -> LogoptStatus {
    guard(|| {
        if theta.is_null() || zeta.is_null() || ranker1.is_null() || ranker2.is_null() || out.is_null() {
            return fail(LogoptStatus::NullPointer, "null array argument");
        }
        let build = || -> logopt_core::Result<f64> {
            let inst = SmallInstance::new(
                slice::from_raw_parts(theta, display_length).to_vec(),
                slice::from_raw_parts(zeta, num_docs).to_vec(),
                Ranking::new(slice::from_raw_parts(ranker1, num_docs).to_vec())?,
                Ranking::new(slice::from_raw_parts(ranker2, num_docs).to_vec())?,
            )?;
            let m = match method {
                LogoptOracleMethod::Ab => OracleMethod::Ab(0.5),
                LogoptOracleMethod::Tdi => OracleMethod::Tdi,
                LogoptOracleMethod::Pi => OracleMethod::Pi(PiConfig::default()),
                LogoptOracleMethod::Oi => OracleMethod::Oi,
                LogoptOracleMethod::IpsUniform => OracleMethod::Ips(&UniformPolicy),
            };
            enum_expected_outcome(m, &inst)
        };
        match build() {
            Ok(v) => {
                *out = v;
                LogoptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// True CTR difference of the same small instance.
///
/// # Safety
/// As for [`logopt_oracle_expected_outcome`].
#[no_mangle]
pub unsafe extern "C" fn logopt_oracle_delta(
    theta: *const f64,
    display_length: usize,
    zeta: *const f64,
    ranker1: *const usize,
    ranker2: *const usize,
    num_docs: usize,
    out: *mut f64,
) -> LogoptStatus {
    guard(|| {
        if theta.is_null() || zeta.is_null() || ranker1.is_null() || ranker2.is_null() || out.is_null() {
            return fail(LogoptStatus::NullPointer, "null array argument");
        }
        let build = || -> logopt_core::Result<f64> {
            Ok(SmallInstance::new(
                slice::from_raw_parts(theta, display_length).to_vec(),
                slice::from_raw_parts(zeta, num_docs).to_vec(),
                Ranking::new(slice::from_raw_parts(ranker1, num_docs).to_vec())?,
                Ranking::new(slice::from_raw_parts(ranker2, num_docs).to_vec())?,
            )?
            .delta())
        };
        match build() {
            Ok(v) => {
                *out = v;
                LogoptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
