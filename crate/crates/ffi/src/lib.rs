//! C ABI over `manifold-reach`.
//!
//! Objects cross the boundary as opaque handles created by `mr_*_new`/`mr_*_load`
//! and released with the matching `mr_*_free`. Every fallible call returns an
//! [`MrStatus`]; on failure [`mr_last_error_message`] describes the error for the
//! calling thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use manifold_reach::geometry::ManifoldConstraint;
use manifold_reach::hamiltonian::{constrained_hamiltonian_reach, optimal_control_reach, ControlBounds};
use manifold_reach::oracle::{geodesic_value, CircleReachSpec};
use manifold_reach::planner::{plan_step, AgentModel, PlanConfig, PlanStatus, SafetyModel};
use manifold_reach::trainer::ReachabilityProblem;
use manifold_reach::value_net::ValueNetwork;
use manifold_reach::{ReachError, Vector};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Precondition = 3,
    Singularity = 4,
    RetractionFailure = 5,
    Config = 6,
    Model = 7,
    Io = 8,
    Runtime = 9,
    Panic = 10,
    BufferTooSmall = 11,
}

/// Plan outcome reported by [`mr_plan_step`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrPlanStatus {
    Optimal = 0,
    Feasible = 1,
    FailSafe = 2,
}

/// Planner settings; obtain defaults from [`mr_plan_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrPlanConfig {
    pub t_plan: f64,
    pub dt: f64,
    /// Negative selects `t_plan + 0.2`.
    pub t_safe: f64,
    pub epsilon: f64,
    pub max_iterations: u32,
    pub goal_tolerance: f64,
    pub safety: bool,
}

/// Opaque equality-constraint manifold.
pub struct MrConstraint(ManifoldConstraint);

/// Opaque trained value network.
pub struct MrValueNetwork(ValueNetwork);

/// Opaque reachability problem.
pub struct MrProblem(ReachabilityProblem);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &ReachError) -> MrStatus {
    match err {
        ReachError::InvalidInput(_) | ReachError::Sampling(_) => MrStatus::InvalidInput,
        ReachError::Precondition(_) => MrStatus::Precondition,
        ReachError::Singularity(_) => MrStatus::Singularity,
        ReachError::RetractionFailure { .. } => MrStatus::RetractionFailure,
        ReachError::Config { .. } => MrStatus::Config,
        ReachError::Model { .. } | ReachError::Json(_) => MrStatus::Model,
        ReachError::Io(_) => MrStatus::Io,
        _ => MrStatus::Runtime,
    }
}

enum Failure {
    Status(MrStatus, String),
    Reach(ReachError),
}

impl From<ReachError> for Failure {
    fn from(e: ReachError) -> Self {
        Failure::Reach(e)
    }
}

fn null() -> Failure {
    Failure::Status(MrStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MrStatus::Ok
        }
        Ok(Err(Failure::Reach(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            MrStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, n: usize) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(p: *mut f64, n: usize) -> Result<&'a mut [f64], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn dim_check(c: &ManifoldConstraint, n: usize) -> Result<(), Failure> {
    if n != c.ambient_dim() {
        return Err(Failure::Status(
            MrStatus::InvalidInput,
            format!("expected dimension {}, got {n}", c.ambient_dim()),
        ));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn mr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- constraints ----

/// Circle `‖x - c‖ - r = 0` in the plane.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_circle(radius: f64, cx: f64, cy: f64, out: *mut *mut MrConstraint) -> MrStatus {
    guard(|| {
        let c = ManifoldConstraint::circle(radius, [cx, cy])?;
        store(out, MrConstraint(c))
    })
}

/// Sphere `‖x - c‖ - r = 0` in `dim` dimensions.
///
/// # Safety
/// `center` must point to `dim` doubles; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_sphere(
    radius: f64,
    center: *const f64,
    dim: usize,
    out: *mut *mut MrConstraint,
) -> MrStatus {
    guard(|| {
        let c = ManifoldConstraint::sphere(radius, input(center, dim)?.to_vec())?;
        store(out, MrConstraint(c))
    })
}

/// Releases a constraint handle; null is ignored.
///
/// # Safety
/// `c` must come from an `mr_constraint_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_free(c: *mut MrConstraint) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Ambient dimension, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_ambient_dim(c: *const MrConstraint) -> usize {
    c.as_ref().map_or(0, |c| c.0.ambient_dim())
}

/// Number of scalar constraints, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_count(c: *const MrConstraint) -> usize {
    c.as_ref().map_or(0, |c| c.0.constraint_count())
}

/// Writes `C(x)` into `out` (length = constraint count).
///
/// # Safety
/// `x` must hold `n` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_evaluate(
    c: *const MrConstraint,
    x: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> MrStatus {
    guard(|| {
        let c = &handle(c)?.0;
        dim_check(c, n)?;
        let v = c.evaluate(&Vector::from_column_slice(input(x, n)?))?;
        if out_len < v.len() {
            return Err(Failure::Status(MrStatus::BufferTooSmall, format!("need {} values", v.len())));
        }
        output(out, v.len())?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Writes the `n × n` tangent projector at `x` (row-major) into `out`.
///
/// # Safety
/// `x` must hold `n` doubles and `out` room for `n * n`.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_tangent_projection(
    c: *const MrConstraint,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> MrStatus {
    guard(|| {
        let c = &handle(c)?.0;
        dim_check(c, n)?;
        let p = c.tangent_projection(&Vector::from_column_slice(input(x, n)?))?;
        let dst = output(out, n * n)?;
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = p.matrix[(i, j)];
            }
        }
        Ok(())
    })
}

/// Pulls `x` back onto the manifold; result written to `out` (length `n`).
///
/// # Safety
/// `x` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mr_constraint_retract(c: *const MrConstraint, x: *const f64, n: usize, out: *mut f64) -> MrStatus {
    guard(|| {
        let c = &handle(c)?.0;
        dim_check(c, n)?;
        let r = c.retract(&Vector::from_column_slice(input(x, n)?))?;
        output(out, n)?.copy_from_slice(r.as_slice());
        Ok(())
    })
}

// ---- value networks ----

/// Loads a model file written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mr_value_network_load(path: *const c_char, out: *mut *mut MrValueNetwork) -> MrStatus {
    guard(|| {
        if path.is_null() {
            return Err(null());
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::Status(MrStatus::InvalidInput, "path is not valid UTF-8".into()))?;
        let net = ValueNetwork::load(&PathBuf::from(p))?;
        store(out, MrValueNetwork(net))
    })
}

/// Releases a network handle; null is ignored.
///
/// # Safety
/// `net` must come from [`mr_value_network_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mr_value_network_free(net: *mut MrValueNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_value_network_state_dim(net: *const MrValueNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.state_dim())
}

/// Horizon `T`, or NaN for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_value_network_horizon(net: *const MrValueNetwork) -> f64 {
    net.as_ref().map_or(f64::NAN, |n| n.0.horizon())
}

/// `V(t, x)`.
///
/// # Safety
/// `x` must hold `n` doubles; `value` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mr_value_network_evaluate(
    net: *const MrValueNetwork,
    t: f64,
    x: *const f64,
    n: usize,
    value: *mut f64,
) -> MrStatus {
    guard(|| {
        let net = &handle(net)?.0;
        let v = net.value(t, &Vector::from_column_slice(input(x, n)?))?;
        *output(value, 1)?.first_mut().expect("one slot") = v;
        Ok(())
    })
}

/// `V`, `∂V/∂t` and `∇ₓV` (length `n`) at `(t, x)`.
///
/// # Safety
/// `x` and `dv_dx` must hold `n` doubles; `value`, `dv_dt` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mr_value_network_gradient(
    net: *const MrValueNetwork,
    t: f64,
    x: *const f64,
    n: usize,
    value: *mut f64,
    dv_dt: *mut f64,
    dv_dx: *mut f64,
) -> MrStatus {
    guard(|| {
        let net = &handle(net)?.0;
        let g = net.value_and_gradient(t, &Vector::from_column_slice(input(x, n)?))?;
        output(value, 1)?[0] = g.value;
        output(dv_dt, 1)?[0] = g.dv_dt;
        output(dv_dx, n)?.copy_from_slice(g.dv_dx.as_slice());
        Ok(())
    })
}

// ---- problems ----

/// Circle reach problem with goal `(0.5, 0)` on the radius-0.5 circle.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mr_problem_circle_reach(horizon: f64, constrained: bool, out: *mut *mut MrProblem) -> MrStatus {
    guard(|| {
        let p = ReachabilityProblem::circle_reach(horizon, constrained);
        p.validate()?;
        store(out, MrProblem(p))
    })
}

/// Two agents sharing one circle.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mr_problem_circle_pair_game(
    radius: f64,
    agent_radius: f64,
    horizon: f64,
    out: *mut *mut MrProblem,
) -> MrStatus {
    guard(|| {
        let p = ReachabilityProblem::circle_pair_game(radius, agent_radius, horizon);
        p.validate()?;
        store(out, MrProblem(p))
    })
}

/// Releases a problem handle; null is ignored.
///
/// # Safety
/// `p` must come from an `mr_problem_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mr_problem_free(p: *mut MrProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---- hamiltonian and oracle ----

/// Constrained reach Hamiltonian `-ū‖P∇V‖` and its minimizing control at `x`.
///
/// # Safety
/// `x`, `grad` and `control` must each hold `n` doubles; `h` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mr_hamiltonian_reach(
    c: *const MrConstraint,
    x: *const f64,
    grad: *const f64,
    n: usize,
    u_max: f64,
    h: *mut f64,
    control: *mut f64,
) -> MrStatus {
    guard(|| {
        let c = &handle(c)?.0;
        dim_check(c, n)?;
        let bounds = ControlBounds::new(u_max, 0.0)?;
        let p = c.tangent_projection(&Vector::from_column_slice(input(x, n)?))?;
        let g = Vector::from_column_slice(input(grad, n)?);
        output(h, 1)?[0] = constrained_hamiltonian_reach(&g, &p, &bounds);
        let u = optimal_control_reach(&g, &p, &bounds);
        output(control, n)?.copy_from_slice(u.control.as_slice());
        Ok(())
    })
}

/// Analytic circle reach value `2r sin(max(0, φ - (ū/r)(T - t))/2)` at an on-circle point.
///
/// # Safety
/// `value` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mr_circle_geodesic_value(horizon: f64, t: f64, x0: f64, x1: f64, value: *mut f64) -> MrStatus {
    guard(|| {
        let spec = CircleReachSpec::new(horizon);
        let v = geodesic_value(&spec, t, &Vector::from_column_slice(&[x0, x1]))?;
        output(value, 1)?[0] = v;
        Ok(())
    })
}

// ---- planning ----

#[no_mangle]
pub extern "C" fn mr_plan_config_default() -> MrPlanConfig {
    let d = PlanConfig::default();
    MrPlanConfig {
        t_plan: d.t_plan,
        dt: d.dt,
        t_safe: -1.0,
        epsilon: d.epsilon,
        max_iterations: d.max_iterations as u32,
        goal_tolerance: d.goal_tolerance,
        safety: d.safety,
    }
}

impl MrPlanConfig {
    fn to_config(self) -> PlanConfig {
        PlanConfig {
            t_plan: self.t_plan,
            dt: self.dt,
            t_safe: (self.t_safe >= 0.0).then_some(self.t_safe),
            epsilon: self.epsilon,
            max_iterations: self.max_iterations as usize,
            goal_tolerance: self.goal_tolerance,
            safety: self.safety,
            ..PlanConfig::default()
        }
    }
}

/// One receding-horizon solve for the ego agent of a pairwise game problem.
///
/// `others` holds `n_others` states of length `n` back to back. `net` may be
/// null when there are no others or `config.safety` is false. Controls are
/// written to `controls` (`capacity` doubles, at least `steps * n`), the step
/// count to `steps`, the smallest predicted safety value to `min_value` (NaN
/// without others).
///
/// # Safety
/// All pointers must be valid for the stated lengths; `problem` and `net` must
/// be live handles (or `net` null).
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mr_plan_step(
    problem: *const MrProblem,
    net: *const MrValueNetwork,
    config: *const MrPlanConfig,
    ego: *const f64,
    others: *const f64,
    n_others: usize,
    goal: *const f64,
    n: usize,
    u_max: f64,
    controls: *mut f64,
    capacity: usize,
    steps: *mut usize,
    status: *mut MrPlanStatus,
    min_value: *mut f64,
) -> MrStatus {
    guard(|| {
        let problem = &handle(problem)?.0;
        let config = handle(config)?.to_config();
        dim_check(&problem.ego, n)?;
        let ego = Vector::from_column_slice(input(ego, n)?);
        let goal = Vector::from_column_slice(input(goal, n)?);
        let flat = input(others, n_others * n)?;
        let others: Vec<Vector> = flat.chunks(n).map(Vector::from_column_slice).collect();
        let safety = match net.as_ref() {
            Some(net) => Some(SafetyModel::new(problem, &net.0)?),
            None => None,
        };
        let agent = AgentModel {
            constraint: &problem.ego,
            u_max,
        };
        let r = plan_step(&ego, &others, &goal, agent, safety, &config, None)?;
        let need = r.controls.len() * n;
        if capacity < need {
            return Err(Failure::Status(MrStatus::BufferTooSmall, format!("need {need} doubles")));
        }
        let dst = output(controls, need)?;
        for (k, u) in r.controls.iter().enumerate() {
            dst[k * n..(k + 1) * n].copy_from_slice(u.as_slice());
        }
        output(min_value, 1)?[0] = r.min_safety_value.unwrap_or(f64::NAN);
        if steps.is_null() || status.is_null() {
            return Err(null());
        }
        *steps = r.controls.len();
        *status = match r.status {
            PlanStatus::Optimal => MrPlanStatus::Optimal,
            PlanStatus::Feasible => MrPlanStatus::Feasible,
            PlanStatus::FailSafe => MrPlanStatus::FailSafe,
        };
        Ok(())
    })
}
