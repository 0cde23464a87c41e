//! C interface to the popharvest solver.
//!
//! Models and solutions are opaque handles created by `ph_*` constructors
//! and released with the matching `*_free`. Every fallible call returns a
//! [`PhStatus`]; on failure the message is kept per thread and can be copied
//! out with [`ph_last_error`]. No call unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use popharvest::kernel::{build_grid, Grid, TransitionKernel};
use popharvest::model::{make_preset, Model, PresetId};
use popharvest::simulate::{estimate_value, EstimateOptions, Strategy};
use popharvest::solver::{extract_thresholds_1d, solve, SolveOptions, SolveReport};
use popharvest::verify::{audit, AuditOptions};
use popharvest::{Error, Scenario};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A model assumption (price gap, absorbing origin, ...) does not hold.
    Assumption = 3,
    /// The approximating chain could not be built on the requested grid.
    Numerical = 4,
    /// A simulated policy kept acting without letting time pass.
    RunawayPolicy = 5,
    /// The output buffer is too small; nothing was written.
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct PhModel {
    model: Model,
    /// Present when built from a scenario document.
    scenario: Option<Scenario>,
}

/// Opaque handle to a solved value function and policy.
pub struct PhSolution {
    grid: Grid,
    report: SolveReport,
}

/// Monte Carlo payoff estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    pub truncation_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> PhStatus {
    match err {
        Error::Assumption { .. } => PhStatus::Assumption,
        Error::NegativeQ { .. } | Error::InvalidProbability { .. } | Error::EmptyActionSet { .. } => {
            PhStatus::Numerical
        }
        Error::RunawayPolicy { .. } => PhStatus::RunawayPolicy,
        _ => PhStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PhStatus>) -> PhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PhStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            PhStatus::Panic
        }
    }
}

fn fail(err: Error) -> PhStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null(what: &str) -> PhStatus {
    set_error(format!("{what} is null"));
    PhStatus::NullPointer
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, PhStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not UTF-8"));
        PhStatus::InvalidArgument
    })
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PhStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, PhStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PhStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap - 1` bytes. Returns the full
/// message length without the terminator; an empty message means the last
/// call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn ph_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a preset with its default parameters. `preset` is one of
/// `"logistic_1d"`, `"competition_2d"`, `"predator_prey_2d"`.
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_preset(preset: *const c_char, out: *mut *mut PhModel) -> PhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let id: PresetId = read_str(preset, "preset")?.parse().map_err(fail)?;
        let model = make_preset(&id.default_params()).map_err(fail)?;
        *out = Box::into_raw(Box::new(PhModel { model, scenario: None }));
        Ok(())
    })
}

/// Builds the model of a scenario document (the JSON accepted by the
/// command-line tool). Model assumptions are checked on the scenario grid.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_from_scenario(json: *const c_char, out: *mut *mut PhModel) -> PhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let scenario = Scenario::from_json_str(read_str(json, "json")?).map_err(fail)?;
        let (model, _) = scenario.checked_model().map_err(fail)?;
        *out = Box::into_raw(Box::new(PhModel { model, scenario: Some(scenario) }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from a `ph_model_*` constructor that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn ph_model_free(model: *mut PhModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of species, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ph_model_dim(model: *const PhModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.dim())
}

/// Solves on the lattice `{0, h, ..., upper}^d` with the given stopping
/// tolerance and iteration cap. A run that hits the cap still yields a
/// solution; check [`ph_solution_converged`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_solve(
    model: *const PhModel,
    h: f64,
    upper: f64,
    tolerance: f64,
    max_iters: usize,
    out: *mut *mut PhSolution,
) -> PhStatus {
    guard(|| {
        let m = in_ref(model, "model")?;
        let out = out_ref(out, "out")?;
        let grid = build_grid(h, upper, m.model.dim()).map_err(fail)?;
        let opts = SolveOptions { tolerance, max_iters, ..SolveOptions::default() };
        *out = Box::into_raw(Box::new(solve_on(&m.model, grid, &opts)?));
        Ok(())
    })
}

/// Solves with the grid and solver settings of the scenario the model was
/// built from.
///
/// # Safety
/// `model` must be a live handle from [`ph_model_from_scenario`]; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_solve_scenario(model: *const PhModel, out: *mut *mut PhSolution) -> PhStatus {
    guard(|| {
        let m = in_ref(model, "model")?;
        let out = out_ref(out, "out")?;
        let Some(s) = &m.scenario else {
            set_error("model was not built from a scenario".into());
            return Err(PhStatus::InvalidArgument);
        };
        let grid = s.build_grid().map_err(fail)?;
        *out = Box::into_raw(Box::new(solve_on(&m.model, grid, &s.solver.options())?));
        Ok(())
    })
}

fn solve_on(model: &Model, grid: Grid, opts: &SolveOptions) -> Result<PhSolution, PhStatus> {
    let kernel = TransitionKernel::build(model, &grid).map_err(fail)?;
    let report = solve(model, &grid, &kernel, opts).map_err(fail)?;
    Ok(PhSolution { grid, report })
}

/// # Safety
/// `solution` must be null or a live handle from a `ph_solve*` call.
#[no_mangle]
pub unsafe extern "C" fn ph_solution_free(solution: *mut PhSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Number of lattice states, or 0 for a null handle. States are ordered
/// row-major with the last species varying fastest.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ph_solution_len(solution: *const PhSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.grid.len())
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ph_solution_iterations(solution: *const PhSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.report.iterations)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ph_solution_converged(solution: *const PhSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.report.converged)
}

/// Copies the value function into `out`, which must hold
/// [`ph_solution_len`] doubles.
///
/// # Safety
/// `solution` must be a live handle; `out` must be valid for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ph_solution_values(solution: *const PhSolution, out: *mut f64, cap: usize) -> PhStatus {
    guard(|| {
        let s = in_ref(solution, "solution")?;
        copy_out(&s.report.values, out, cap)
    })
}

/// Copies the policy as signed action codes: `i` harvests species `i`,
/// `-i` seeds it, `0` lets the population diffuse.
///
/// # Safety
/// `solution` must be a live handle; `out` must be valid for `cap` ints.
#[no_mangle]
pub unsafe extern "C" fn ph_solution_policy(solution: *const PhSolution, out: *mut i32, cap: usize) -> PhStatus {
    guard(|| {
        let s = in_ref(solution, "solution")?;
        let codes: Vec<i32> = s.report.policy.iter().map(|a| a.code()).collect();
        copy_out(&codes, out, cap)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, cap: usize) -> Result<(), PhStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    if cap < src.len() {
        set_error(format!("buffer holds {cap} entries, need {}", src.len()));
        return Err(PhStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Value at the lattice state nearest to `x` (`dim` coordinates).
///
/// # Safety
/// `solution` must be a live handle; `x` valid for `dim` doubles; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ph_solution_value_at(
    solution: *const PhSolution,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> PhStatus {
    guard(|| {
        let s = in_ref(solution, "solution")?;
        let x = in_slice(x, dim, "x")?;
        let out = out_ref(out, "out")?;
        if dim != s.grid.dim() {
            return Err(fail(Error::DimensionMismatch { expected: s.grid.dim(), got: dim }));
        }
        *out = s.report.values[s.grid.nearest(x)];
        Ok(())
    })
}

/// Barrier levels of a one-species policy: seed below `lower`, harvest from
/// `upper`; `contiguous` tells whether the policy has exactly that shape.
///
/// # Safety
/// `solution` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_thresholds_1d(
    solution: *const PhSolution,
    lower: *mut f64,
    upper: *mut f64,
    contiguous: *mut bool,
) -> PhStatus {
    guard(|| {
        let s = in_ref(solution, "solution")?;
        let (lower, upper, contiguous) =
            (out_ref(lower, "lower")?, out_ref(upper, "upper")?, out_ref(contiguous, "contiguous")?);
        let t = extract_thresholds_1d(&s.report.policy, &s.grid).map_err(fail)?;
        (*lower, *upper, *contiguous) = (t.lower, t.upper, t.contiguous);
        Ok(())
    })
}

/// Monte Carlo estimate of the solved policy's discounted payoff from `x0`.
/// Path `k` is seeded with `seed + k`.
///
/// # Safety
/// Handles must be live; `x0` valid for `dim` doubles; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ph_estimate_value(
    model: *const PhModel,
    solution: *const PhSolution,
    x0: *const f64,
    dim: usize,
    paths: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    out: *mut PhEstimate,
) -> PhStatus {
    guard(|| {
        let m = in_ref(model, "model")?;
        let s = in_ref(solution, "solution")?;
        let x0 = in_slice(x0, dim, "x0")?;
        let out = out_ref(out, "out")?;
        let strategy = Strategy::from_policy(s.grid.clone(), s.report.policy.clone()).map_err(fail)?;
        let opts = EstimateOptions { paths, horizon, dt, base_seed: seed };
        let e = estimate_value(&m.model, &strategy, x0, &opts).map_err(fail)?;
        *out =
            PhEstimate { mean: e.mean, std_error: e.std_error, paths: e.paths, truncation_bound: e.truncation_bound };
        Ok(())
    })
}

/// Runs the structural audit and writes whether every check passed. The
/// JSON report is copied into `json` when it is non-null; `json_len`
/// receives its length without the terminator, so a first call with a null
/// buffer sizes the second.
///
/// # Safety
/// Handles must be live; `passed` writable; `json` null or valid for `cap`
/// bytes; `json_len` null or writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ph_audit(
    model: *const PhModel,
    solution: *const PhSolution,
    pairs: usize,
    seed: u64,
    passed: *mut bool,
    json: *mut c_char,
    cap: usize,
    json_len: *mut usize,
) -> PhStatus {
    guard(|| {
        let m = in_ref(model, "model")?;
        let s = in_ref(solution, "solution")?;
        let passed = out_ref(passed, "passed")?;
        let kernel = TransitionKernel::build(&m.model, &s.grid).map_err(fail)?;
        let report = audit(&m.model, &s.grid, &kernel, &s.report, &AuditOptions { pairs, seed }).map_err(fail)?;
        *passed = report.passed();
        let text = report.to_json();
        if let Some(len) = json_len.as_mut() {
            *len = text.len();
        }
        if !json.is_null() {
            if cap <= text.len() {
                set_error(format!("buffer holds {cap} bytes, need {}", text.len() + 1));
                return Err(PhStatus::BufferTooSmall);
            }
            ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), json, text.len());
            *json.add(text.len()) = 0;
        }
        Ok(())
    })
}
