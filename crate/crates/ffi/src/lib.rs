//! C interface to `etherm`.
//!
//! Objects are opaque heap handles released with the matching `_free` function. Every
//! fallible call returns an [`EthermStatus`]; on failure the message is available from
//! [`etherm_last_error`] on the same thread.

#![allow(clippy::missing_safety_doc, clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use etherm::{
    find_equilibrium, linearize, simulate, DelayedLinearModel, Error, Feedback, OperatingPoint, PidParams,
    ScenarioFile, SimulationTrace, SystemParams,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EthermStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    NoConvergence = 4,
    Infeasible = 5,
    SimulationAborted = 6,
    AnalysisFailed = 7,
    NotFound = 8,
    Panic = 99,
}

/// Which temperature the controller regulates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EthermFeedback {
    AfterStack = 0,
    BeforeStack = 1,
}

impl From<EthermFeedback> for Feedback {
    fn from(f: EthermFeedback) -> Self {
        match f {
            EthermFeedback::AfterStack => Feedback::AfterStack,
            EthermFeedback::BeforeStack => Feedback::BeforeStack,
        }
    }
}

/// Opaque system parameter set.
pub struct EthermParams(SystemParams);
/// Opaque delayed linear model.
pub struct EthermModel(DelayedLinearModel);
/// Opaque simulation trace.
pub struct EthermTrace(SimulationTrace);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EthermEquilibrium {
    pub t_stack: f64,
    pub t_sep: f64,
    pub t_cool: f64,
    pub valve: f64,
    pub residual: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EthermTraceRow {
    pub t: f64,
    pub current: f64,
    pub t_stack: f64,
    pub t_sep: f64,
    pub t_cool: f64,
    pub valve: f64,
    pub t_aim: f64,
    pub q_ele: f64,
    pub q_dis_total: f64,
    pub flags: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> EthermStatus {
    match e {
        e if e.is_validation() => EthermStatus::InvalidArgument,
        Error::NoConvergence { .. } => EthermStatus::NoConvergence,
        Error::InfeasibleCooling { .. } | Error::TafelDomain { .. } | Error::LmtdDomain { .. } => {
            EthermStatus::Infeasible
        }
        Error::NonFiniteState { .. } | Error::Aborted { .. } => EthermStatus::SimulationAborted,
        _ => EthermStatus::AnalysisFailed,
    }
}

struct Failure(EthermStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EthermStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_last_error();
            EthermStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            EthermStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(EthermStatus::NullPointer, format!("{what} is null")))
}

unsafe fn output<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(EthermStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(EthermStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EthermStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn etherm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn etherm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn etherm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default parameter set. Never fails.
#[no_mangle]
pub extern "C" fn etherm_params_default() -> *mut EthermParams {
    Box::into_raw(Box::new(EthermParams(SystemParams::default())))
}

#[no_mangle]
pub unsafe extern "C" fn etherm_params_from_json(json: *const c_char, out: *mut *mut EthermParams) -> EthermStatus {
    guard(|| {
        let out = output(out, "out")?;
        let p = SystemParams::from_json(string(json, "json")?)?;
        *out = Box::into_raw(Box::new(EthermParams(p)));
        Ok(())
    })
}

/// Serializes parameters; release the result with `etherm_string_free`.
#[no_mangle]
pub unsafe extern "C" fn etherm_params_to_json(params: *const EthermParams, out: *mut *mut c_char) -> EthermStatus {
    guard(|| {
        let out = output(out, "out")?;
        let p = reference(params, "params")?;
        let text =
            serde_json::to_string_pretty(&p.0).map_err(|e| Failure(EthermStatus::AnalysisFailed, e.to_string()))?;
        *out = owned_string(text);
        Ok(())
    })
}

/// Sets both transport delays (s).
#[no_mangle]
pub unsafe extern "C" fn etherm_params_set_delays(params: *mut EthermParams, tau1: f64, tau2: f64) -> EthermStatus {
    guard(|| {
        let p = output(params, "params")?;
        let next = p.0.with_delays(tau1, tau2);
        next.validate()?;
        p.0 = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn etherm_params_free(params: *mut EthermParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

fn operating_point(current: f64, temp: f64, feedback: EthermFeedback) -> OperatingPoint {
    OperatingPoint {
        current,
        controlled_temp: temp,
        feedback: feedback.into(),
        t_amb: 25.0,
        t_cool_in: 30.0,
    }
}

/// Steady state at `current` (A) with the fed-back temperature pinned at `temp` (°C),
/// 25 °C ambient and 30 °C coolant inlet.
#[no_mangle]
pub unsafe extern "C" fn etherm_find_equilibrium(
    params: *const EthermParams,
    current: f64,
    temp: f64,
    feedback: EthermFeedback,
    out: *mut EthermEquilibrium,
) -> EthermStatus {
    guard(|| {
        let p = reference(params, "params")?;
        let out = output(out, "out")?;
        let eq = find_equilibrium(&p.0, &operating_point(current, temp, feedback))?;
        *out = EthermEquilibrium {
            t_stack: eq.state.t_stack,
            t_sep: eq.state.t_sep,
            t_cool: eq.state.t_cool,
            valve: eq.valve,
            residual: eq.residual,
        };
        Ok(())
    })
}

/// Linearizes about the after-stack equilibrium at `current` and `t_stack`.
#[no_mangle]
pub unsafe extern "C" fn etherm_linearize(
    params: *const EthermParams,
    current: f64,
    t_stack: f64,
    out: *mut *mut EthermModel,
) -> EthermStatus {
    guard(|| {
        let p = reference(params, "params")?;
        let out = output(out, "out")?;
        let eq = find_equilibrium(&p.0, &operating_point(current, t_stack, EthermFeedback::AfterStack))?;
        let model = linearize(&p.0, &eq)?;
        *out = Box::into_raw(Box::new(EthermModel(model)));
        Ok(())
    })
}

/// Copies the model matrices in row-major order. Any output pointer may be NULL.
/// `a` and `a1` take 9 values, `e2` takes 3.
#[no_mangle]
pub unsafe extern "C" fn etherm_model_matrices(
    model: *const EthermModel,
    a: *mut f64,
    a1: *mut f64,
    e2: *mut f64,
    tau1: *mut f64,
    tau2: *mut f64,
) -> EthermStatus {
    guard(|| {
        let m = &reference(model, "model")?.0;
        for (dst, src) in [(a, &m.a), (a1, &m.a1)] {
            if !dst.is_null() {
                for i in 0..3 {
                    for j in 0..3 {
                        *dst.add(3 * i + j) = src[(i, j)];
                    }
                }
            }
        }
        if !e2.is_null() {
            for i in 0..3 {
                *e2.add(i) = m.e2[i];
            }
        }
        if let Some(t) = tau1.as_mut() {
            *t = m.tau1;
        }
        if let Some(t) = tau2.as_mut() {
            *t = m.tau2;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn etherm_model_free(model: *mut EthermModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Closed-loop stability of PID gains (SI units) under the first-order delay approximation.
/// Writes 1 (stable) or 0 to `stable`.
#[no_mangle]
pub unsafe extern "C" fn etherm_is_stable(
    model: *const EthermModel,
    feedback: EthermFeedback,
    kp: f64,
    ki: f64,
    kd: f64,
    stable: *mut i32,
) -> EthermStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let stable = output(stable, "stable")?;
        let pid = PidParams::new(kp, ki, kd, feedback.into());
        *stable = i32::from(etherm::is_stable(&pid, &m.0)?.0);
        Ok(())
    })
}

/// Runs one controller of a scenario given as JSON. `controller` may be NULL when the
/// scenario has exactly one controller.
#[no_mangle]
pub unsafe extern "C" fn etherm_simulate_json(
    params: *const EthermParams,
    scenario_json: *const c_char,
    controller: *const c_char,
    out: *mut *mut EthermTrace,
) -> EthermStatus {
    guard(|| {
        let p = reference(params, "params")?;
        let out = output(out, "out")?;
        let scenario = ScenarioFile::from_json(string(scenario_json, "scenario_json")?)?;
        let runs = scenario.resolve(&p.0, None)?;
        let config = if controller.is_null() {
            if runs.len() != 1 {
                return Err(Failure(
                    EthermStatus::InvalidArgument,
                    "scenario has several controllers; name one".into(),
                ));
            }
            &runs[0].1
        } else {
            let name = string(controller, "controller")?;
            &runs
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Failure(EthermStatus::NotFound, format!("no controller named {name:?}")))?
                .1
        };
        let trace = simulate(config, &p.0)?;
        *out = Box::into_raw(Box::new(EthermTrace(trace)));
        Ok(())
    })
}

/// Number of rows in a trace; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn etherm_trace_len(trace: *const EthermTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.rows.len())
}

#[no_mangle]
pub unsafe extern "C" fn etherm_trace_row(
    trace: *const EthermTrace,
    index: usize,
    out: *mut EthermTraceRow,
) -> EthermStatus {
    guard(|| {
        let t = reference(trace, "trace")?;
        let out = output(out, "out")?;
        let r =
            t.0.rows
                .get(index)
                .ok_or_else(|| Failure(EthermStatus::InvalidArgument, format!("row {index} out of range")))?;
        *out = EthermTraceRow {
            t: r.t,
            current: r.current,
            t_stack: r.t_stack,
            t_sep: r.t_sep,
            t_cool: r.t_cool,
            valve: r.valve,
            t_aim: r.t_aim,
            q_ele: r.q_ele,
            q_dis_total: r.q_dis_total,
            flags: r.flags.bits(),
        };
        Ok(())
    })
}

/// CSV text of every `decimation`-th row; release with `etherm_string_free`.
#[no_mangle]
pub unsafe extern "C" fn etherm_trace_to_csv(
    trace: *const EthermTrace,
    decimation: usize,
    out: *mut *mut c_char,
) -> EthermStatus {
    guard(|| {
        let t = reference(trace, "trace")?;
        let out = output(out, "out")?;
        if decimation == 0 {
            return Err(Failure(EthermStatus::InvalidArgument, "decimation must be >= 1".into()));
        }
        *out = owned_string(t.0.to_csv(decimation));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn etherm_trace_free(trace: *mut EthermTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
