//! C ABI for the lqterm solvers.
//!
//! Handles are opaque pointers created and released by the `lqt_*_free`
//! functions; every fallible call returns an [`LqtStatus`] and leaves a
//! human-readable message retrievable with [`lqt_last_error_message`] on the
//! calling thread. Buffers are caller-allocated; the `*_dim` and `*_len`
//! queries size them.

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lqterm::centralized::CentralizedSolution;
use lqterm::consensus::{solve_consensus, ConsensusSolution};
use lqterm::distributed::{solve_distributed, DistributedOptions, DistributedSolution};
use lqterm::model::{validate_decomposition, validate_gamma, DECOMPOSITION_TOL};
use lqterm::numerics::spectral_norm;
use lqterm::scenario::{LqScenario, LqScenarioFile, UgvScenario, UgvScenarioFile};
use lqterm::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqtStatus {
    Ok = 0,
    ValidationFailed = 1,
    Schema = 2,
    Solver = 3,
    Topology = 4,
    NullArgument = 5,
    BadBuffer = 6,
    BadIndex = 7,
    Internal = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(err: &Error) -> LqtStatus {
    match err {
        Error::Scenario(_) | Error::Json(_) => LqtStatus::Schema,
        Error::Topology(_) | Error::GammaInvalid { .. } => LqtStatus::Topology,
        _ => LqtStatus::Solver,
    }
}

fn fail(err: &Error) -> LqtStatus {
    set_error(&err.to_string());
    status_for(err)
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call from the same thread.
#[no_mangle]
pub extern "C" fn lqt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, LqtStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(LqtStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        LqtStatus::BadBuffer
    })
}

fn guard(body: impl FnOnce() -> LqtStatus) -> LqtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            LqtStatus::Internal
        }
    }
}

/// Opaque parsed finite-horizon scenario.
pub struct LqtScenario {
    inner: LqScenario,
}

/// Opaque full-information solution.
pub struct LqtSolution {
    inner: CentralizedSolution,
}

/// Opaque per-agent distributed solution.
pub struct LqtDistributedSolution {
    inner: DistributedSolution,
}

/// Opaque parsed fleet scenario.
pub struct LqtUgvScenario {
    inner: UgvScenario,
}

/// Opaque consensus solution.
pub struct LqtConsensusSolution {
    inner: ConsensusSolution,
}

macro_rules! free_fn {
    ($name:ident, $ty:ty) => {
        /// Releases a handle; a null pointer is ignored.
        #[no_mangle]
        pub unsafe extern "C" fn $name(handle: *mut $ty) {
            if !handle.is_null() {
                drop(unsafe { Box::from_raw(handle) });
            }
        }
    };
}

free_fn!(lqt_scenario_free, LqtScenario);
free_fn!(lqt_solution_free, LqtSolution);
free_fn!(lqt_distributed_free, LqtDistributedSolution);
free_fn!(lqt_ugv_scenario_free, LqtUgvScenario);
free_fn!(lqt_consensus_free, LqtConsensusSolution);

fn parse_scenario(text: &str) -> Result<LqScenario, Error> {
    LqScenarioFile::parse(text)?.to_scenario()
}

/// Parses a finite-horizon scenario from a JSON document.
#[no_mangle]
pub unsafe extern "C" fn lqt_scenario_from_json(
    json: *const c_char,
    out: *mut *mut LqtScenario,
) -> LqtStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output argument");
            return LqtStatus::NullArgument;
        }
        let text = match unsafe { read_str(json) } {
            Ok(t) => t,
            Err(status) => return status,
        };
        match parse_scenario(text) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(LqtScenario { inner })) };
                LqtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Parses a finite-horizon scenario from a file path.
#[no_mangle]
pub unsafe extern "C" fn lqt_scenario_load(
    path: *const c_char,
    out: *mut *mut LqtScenario,
) -> LqtStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output argument");
            return LqtStatus::NullArgument;
        }
        let path = match unsafe { read_str(path) } {
            Ok(t) => t,
            Err(status) => return status,
        };
        match LqScenarioFile::load(Path::new(path)).and_then(|f| f.to_scenario()) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(LqtScenario { inner })) };
                LqtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// State dimension of the scenario's system.
#[no_mangle]
pub unsafe extern "C" fn lqt_scenario_state_dim(scenario: *const LqtScenario) -> usize {
    if scenario.is_null() {
        return 0;
    }
    unsafe { &*scenario }.inner.problem.state_dim()
}

/// Input dimension of the scenario's system.
#[no_mangle]
pub unsafe extern "C" fn lqt_scenario_input_dim(scenario: *const LqtScenario) -> usize {
    if scenario.is_null() {
        return 0;
    }
    unsafe { &*scenario }.inner.problem.input_dim()
}

/// Number of agent views carried by the scenario (zero when absent).
#[no_mangle]
pub unsafe extern "C" fn lqt_scenario_num_agents(scenario: *const LqtScenario) -> usize {
    if scenario.is_null() {
        return 0;
    }
    unsafe { &*scenario }
        .inner
        .views
        .as_ref()
        .map_or(0, |v| v.len())
}

/// Runs the structural validators; `all_pass` receives 1 when every
/// decomposition check and the coupling condition hold.
#[no_mangle]
pub unsafe extern "C" fn lqt_scenario_validate(
    scenario: *const LqtScenario,
    all_pass: *mut i32,
) -> LqtStatus {
    guard(|| {
        if scenario.is_null() || all_pass.is_null() {
            set_error("null argument");
            return LqtStatus::NullArgument;
        }
        let scenario = &unsafe { &*scenario }.inner;
        let mut pass = true;
        if let Some(views) = &scenario.views {
            match validate_decomposition(views, &scenario.problem, DECOMPOSITION_TOL) {
                Ok(report) => pass &= report.all_pass(),
                Err(e) => return fail(&e),
            }
        }
        if let Some(topology) = &scenario.topology {
            match validate_gamma(topology) {
                Ok(check) => pass &= check.valid,
                Err(e) => return fail(&e),
            }
        }
        unsafe { *all_pass = pass as i32 };
        LqtStatus::Ok
    })
}

/// Full-information solve.
#[no_mangle]
pub unsafe extern "C" fn lqt_solve_centralized(
    scenario: *const LqtScenario,
    out: *mut *mut LqtSolution,
) -> LqtStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            set_error("null argument");
            return LqtStatus::NullArgument;
        }
        let scenario = &unsafe { &*scenario }.inner;
        match lqterm::centralized::solve(&scenario.problem, scenario.grid, &scenario.schedule) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(LqtSolution { inner })) };
                LqtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Integral cost of the solved trajectory.
#[no_mangle]
pub unsafe extern "C" fn lqt_solution_cost(solution: *const LqtSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    unsafe { &*solution }.inner.cost
}

/// Norm of `x(T) - x_T`.
#[no_mangle]
pub unsafe extern "C" fn lqt_solution_terminal_error(solution: *const LqtSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    unsafe { &*solution }.inner.terminal_error
}

/// Outer iterations the Riccati stage used.
#[no_mangle]
pub unsafe extern "C" fn lqt_solution_iterations(solution: *const LqtSolution) -> usize {
    if solution.is_null() {
        return 0;
    }
    unsafe { &*solution }.inner.iterations_used
}

unsafe fn fill(buffer: *mut f64, len: usize, values: &[f64]) -> LqtStatus {
    if buffer.is_null() {
        set_error("null buffer");
        return LqtStatus::NullArgument;
    }
    if len < values.len() {
        set_error("buffer too small");
        return LqtStatus::BadBuffer;
    }
    unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len()) };
    LqtStatus::Ok
}

/// Terminal multiplier; the buffer needs `state_dim` entries.
#[no_mangle]
pub unsafe extern "C" fn lqt_solution_lambda(
    solution: *const LqtSolution,
    buffer: *mut f64,
    len: usize,
) -> LqtStatus {
    guard(|| {
        if solution.is_null() {
            set_error("null solution");
            return LqtStatus::NullArgument;
        }
        let lambda = &unsafe { &*solution }.inner.lambda;
        unsafe { fill(buffer, len, lambda.as_slice()) }
    })
}

/// Optimal state at time `t` (clamped to the grid); `state_dim` entries.
#[no_mangle]
pub unsafe extern "C" fn lqt_solution_state_at(
    solution: *const LqtSolution,
    t: f64,
    buffer: *mut f64,
    len: usize,
) -> LqtStatus {
    guard(|| {
        if solution.is_null() {
            set_error("null solution");
            return LqtStatus::NullArgument;
        }
        let value = unsafe { &*solution }.inner.x_star.eval(t);
        unsafe { fill(buffer, len, value.as_slice()) }
    })
}

/// Optimal control at time `t`; `input_dim` entries.
#[no_mangle]
pub unsafe extern "C" fn lqt_solution_control_at(
    solution: *const LqtSolution,
    t: f64,
    buffer: *mut f64,
    len: usize,
) -> LqtStatus {
    guard(|| {
        if solution.is_null() {
            set_error("null solution");
            return LqtStatus::NullArgument;
        }
        let value = unsafe { &*solution }.inner.u_star.eval(t);
        unsafe { fill(buffer, len, value.as_slice()) }
    })
}

/// Partial-information solve over the scenario's graph; the scenario must
/// carry agent views and a topology.
#[no_mangle]
pub unsafe extern "C" fn lqt_solve_distributed(
    scenario: *const LqtScenario,
    out: *mut *mut LqtDistributedSolution,
) -> LqtStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            set_error("null argument");
            return LqtStatus::NullArgument;
        }
        let scenario = &unsafe { &*scenario }.inner;
        let (views, topology) = match (&scenario.views, &scenario.topology) {
            (Some(v), Some(t)) => (v, t),
            _ => {
                set_error("scenario has no agents/topology blocks");
                return LqtStatus::Schema;
            }
        };
        match solve_distributed(
            views,
            &scenario.problem.r,
            topology,
            &scenario.schedule,
            scenario.grid,
            &DistributedOptions::default(),
        ) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(LqtDistributedSolution { inner })) };
                LqtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of agents in the distributed solution.
#[no_mangle]
pub unsafe extern "C" fn lqt_distributed_num_agents(
    solution: *const LqtDistributedSolution,
) -> usize {
    if solution.is_null() {
        return 0;
    }
    unsafe { &*solution }.inner.agents.len()
}

/// Largest cross-agent deviation over all tracked quantities.
#[no_mangle]
pub unsafe extern "C" fn lqt_distributed_max_pairwise(
    solution: *const LqtDistributedSolution,
) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    unsafe { &*solution }
        .inner
        .pairwise
        .values()
        .fold(0.0f64, |acc, v| acc.max(*v))
}

/// Agent `agent`'s reconstructed state at time `t`; `state_dim` entries.
#[no_mangle]
pub unsafe extern "C" fn lqt_distributed_state_at(
    solution: *const LqtDistributedSolution,
    agent: usize,
    t: f64,
    buffer: *mut f64,
    len: usize,
) -> LqtStatus {
    guard(|| {
        if solution.is_null() {
            set_error("null solution");
            return LqtStatus::NullArgument;
        }
        let agents = &unsafe { &*solution }.inner.agents;
        let Some(record) = agents.get(agent) else {
            set_error("agent index out of range");
            return LqtStatus::BadIndex;
        };
        let value = record.x.eval(t);
        unsafe { fill(buffer, len, value.as_slice()) }
    })
}

/// Agent `agent`'s controller at time `t`; `input_dim` entries.
#[no_mangle]
pub unsafe extern "C" fn lqt_distributed_control_at(
    solution: *const LqtDistributedSolution,
    agent: usize,
    t: f64,
    buffer: *mut f64,
    len: usize,
) -> LqtStatus {
    guard(|| {
        if solution.is_null() {
            set_error("null solution");
            return LqtStatus::NullArgument;
        }
        let agents = &unsafe { &*solution }.inner.agents;
        let Some(record) = agents.get(agent) else {
            set_error("agent index out of range");
            return LqtStatus::BadIndex;
        };
        let value = record.u.eval(t);
        unsafe { fill(buffer, len, value.as_slice()) }
    })
}

/// Parses a fleet scenario from a JSON document.
#[no_mangle]
pub unsafe extern "C" fn lqt_ugv_scenario_from_json(
    json: *const c_char,
    out: *mut *mut LqtUgvScenario,
) -> LqtStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output argument");
            return LqtStatus::NullArgument;
        }
        let text = match unsafe { read_str(json) } {
            Ok(t) => t,
            Err(status) => return status,
        };
        match UgvScenarioFile::parse(text).and_then(|f| f.to_scenario()) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(LqtUgvScenario { inner })) };
                LqtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Solves the fleet consensus problem along both routes.
#[no_mangle]
pub unsafe extern "C" fn lqt_solve_consensus(
    scenario: *const LqtUgvScenario,
    out: *mut *mut LqtConsensusSolution,
) -> LqtStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            set_error("null argument");
            return LqtStatus::NullArgument;
        }
        let scenario = &unsafe { &*scenario }.inner;
        match solve_consensus(&scenario.system, &scenario.schedule, scenario.sim_grid) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(LqtConsensusSolution { inner })) };
                LqtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Spectral norm of the stacked Riccati solution.
#[no_mangle]
pub unsafe extern "C" fn lqt_consensus_p_norm(solution: *const LqtConsensusSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    spectral_norm(&unsafe { &*solution }.inner.p)
}

/// Total cost of the distributed controller (quadrature plus tail).
#[no_mangle]
pub unsafe extern "C" fn lqt_consensus_cost(solution: *const LqtConsensusSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    unsafe { &*solution }.inner.cost_distributed.total
}

/// Relative gap between the simulated cost and `x(0)' P x(0)`.
#[no_mangle]
pub unsafe extern "C" fn lqt_consensus_value_identity(
    solution: *const LqtConsensusSolution,
) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    unsafe { &*solution }.inner.value_identity
}

/// Max pairwise state deviation at the end of the simulated horizon.
#[no_mangle]
pub unsafe extern "C" fn lqt_consensus_final_residual(
    solution: *const LqtConsensusSolution,
) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    *unsafe { &*solution }
        .inner
        .consensus_residual
        .last()
        .unwrap_or(&f64::NAN)
}
