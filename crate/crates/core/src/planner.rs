//! Decentralized receding-horizon planner with a learned pairwise safety constraint.
//!
//! Each agent solves, over a short control horizon,
//!
//! ```text
//! min  Σ_k Δt ‖x_{k+1} - goal‖²
//! s.t. x_{k+1} = retract(x_k + u_k Δt),  ‖u_k‖ ≤ ū
//!      y_{k+1} = retract(y_k + d_k Δt),  d_k = worst-case adversary velocity at (x_k, y_k)
//!      V(T - t_safe, x_K, y_K) > ε       for every other agent
//! ```
//!
//! by projected gradient descent with an exact quadratic penalty on the safety
//! rows. Retraction inside the rollout keeps every predicted state on the
//! manifold. When no safe plan is found the agent falls back to the tangent
//! control that ascends the safety value fastest.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geometry::ManifoldConstraint;
use crate::hamiltonian::{safest_control, split_joint, worst_case_disturbance, HamiltonianMode};
use crate::trainer::ReachabilityProblem;
use crate::value_net::ValueNetwork;
use crate::{ReachError, Result, Vector};

/// Planner inputs must lie this close to their manifolds.
pub const STATE_MANIFOLD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    /// Control horizon in seconds.
    pub t_plan: f64,
    /// Discretization step in seconds.
    pub dt: f64,
    /// Safety lookahead; `None` means `t_plan + 0.2`.
    pub t_safe: Option<f64>,
    /// Required margin on the learned safety value.
    pub epsilon: f64,
    /// Projected-gradient iterations per penalty round.
    pub max_iterations: usize,
    pub goal_tolerance: f64,
    /// Initial penalty weight `μ`.
    pub penalty_weight: f64,
    /// Escalation rounds (`μ ← 10 μ`) after the first solve.
    pub penalty_rounds: usize,
    /// The penalty targets `ε + penalty_margin` so that penalized optima clear `ε`.
    pub penalty_margin: f64,
    /// `false` drops the safety rows (the no-safety ablation).
    pub safety: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            t_plan: 0.3,
            dt: 0.05,
            t_safe: None,
            epsilon: 0.05,
            max_iterations: 60,
            goal_tolerance: 0.05,
            penalty_weight: 100.0,
            penalty_rounds: 3,
            penalty_margin: 0.01,
            safety: true,
        }
    }
}

impl PlanConfig {
    pub fn safety_lookahead(&self) -> f64 {
        self.t_safe.unwrap_or(self.t_plan + 0.2)
    }

    pub fn steps(&self) -> usize {
        (self.t_plan / self.dt).round().max(1.0) as usize
    }

    /// Checks `0 < Δt ≤ t_plan ≤ t_safe ≤ T` and `ε ≥ 0`.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let t_safe = self.safety_lookahead();
        if !(self.dt > 0.0 && self.dt <= self.t_plan) {
            return Err(ReachError::config("planning.dt", "need 0 < dt <= t_plan"));
        }
        if !(self.t_plan <= t_safe) {
            return Err(ReachError::config("planning.t_safe", "need t_plan <= t_safe"));
        }
        if t_safe > horizon + 1e-12 {
            return Err(ReachError::config(
                "planning.t_safe",
                format!("t_safe {t_safe} exceeds the value-function horizon {horizon}"),
            ));
        }
        if !(self.epsilon >= 0.0) {
            return Err(ReachError::config("planning.epsilon", "must be nonnegative"));
        }
        if self.max_iterations == 0 {
            return Err(ReachError::config("planning.max_iterations", "must be positive"));
        }
        if !(self.goal_tolerance > 0.0) {
            return Err(ReachError::config("planning.goal_tolerance", "must be positive"));
        }
        if !(self.penalty_weight > 0.0) || !(self.penalty_margin >= 0.0) {
            return Err(ReachError::config("planning.penalty_weight", "penalty settings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStatus {
    Optimal,
    Feasible,
    FailSafe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub controls: Vec<Vector>,
    /// Predicted ego states `x_1 .. x_K`.
    pub states: Vec<Vector>,
    pub status: PlanStatus,
    /// Smallest predicted pairwise safety value at `t_plan`; `None` without others.
    pub min_safety_value: Option<f64>,
    pub iterations: usize,
    /// Seconds spent in `plan_step`.
    pub wall_time: f64,
}

impl PlanResult {
    pub fn first_control(&self) -> &Vector {
        &self.controls[0]
    }
}

/// Fail-safe control with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FailSafeControl {
    pub control: Vector,
    /// The projected safety gradient vanished.
    pub degenerate: bool,
    /// No other agent to evade.
    pub not_applicable: bool,
    pub min_value: Option<f64>,
}

/// The learned pairwise safety value together with the game it was trained on.
#[derive(Debug, Clone, Copy)]
pub struct SafetyModel<'a> {
    pub problem: &'a ReachabilityProblem,
    pub net: &'a ValueNetwork,
}

impl<'a> SafetyModel<'a> {
    pub fn new(problem: &'a ReachabilityProblem, net: &'a ValueNetwork) -> Result<Self> {
        if problem.mode != HamiltonianMode::AvoidGame {
            return Err(ReachError::invalid("safety model needs a pairwise game problem"));
        }
        if net.state_dim() != problem.state_dim() {
            return Err(ReachError::invalid("safety network does not match the game state dimension"));
        }
        Ok(SafetyModel { problem, net })
    }

    fn adversary(&self) -> &ManifoldConstraint {
        self.problem.adversary.as_ref().unwrap_or(&self.problem.ego)
    }

    fn joint(ego: &Vector, other: &Vector) -> Vector {
        let mut j = Vector::zeros(ego.len() + other.len());
        j.rows_mut(0, ego.len()).copy_from(ego);
        j.rows_mut(ego.len(), other.len()).copy_from(other);
        j
    }

    /// `V(t, ego, other)` with gradients split into ego and other blocks.
    pub fn evaluate(&self, t: f64, ego: &Vector, other: &Vector) -> Result<(f64, Vector, Vector)> {
        let g = self.net.value_and_gradient(t, &Self::joint(ego, other))?;
        let (g1, g2) = split_joint(&g.dv_dx, ego.len());
        Ok((g.value, g1, g2))
    }
}

/// Everything a single agent knows about itself.
#[derive(Debug, Clone, Copy)]
pub struct AgentModel<'a> {
    pub constraint: &'a ManifoldConstraint,
    pub u_max: f64,
}

fn clip(u: &mut Vector, u_max: f64) {
    let n = u.norm();
    if n > u_max {
        *u *= u_max / n;
    }
}

fn check_on_manifold(c: &ManifoldConstraint, x: &Vector, what: &str) -> Result<()> {
    let r = c.residual_norm(x)?;
    if r > STATE_MANIFOLD_TOL {
        return Err(ReachError::Precondition(format!("{what} is {r:.3e} off its manifold")));
    }
    Ok(())
}

struct Rollout {
    states: Vec<Vector>,
    others_final: Vec<Vector>,
    values: Vec<f64>,
    ego_grads: Vec<Vector>,
    cost: f64,
}

struct Solver<'a> {
    agent: AgentModel<'a>,
    goal: &'a Vector,
    others: &'a [Vector],
    safety: Option<SafetyModel<'a>>,
    config: &'a PlanConfig,
    ego: &'a Vector,
    k: usize,
}

impl Solver<'_> {
    fn rollout(&self, controls: &[Vector], mu: f64) -> Result<Rollout> {
        let dt = self.config.dt;
        let mut states = Vec::with_capacity(self.k);
        let mut x = self.ego.clone();
        let mut cost = 0.0;
        let mut others = self.others.to_vec();
        for u in controls {
            if let Some(model) = &self.safety {
                let tau = model.problem.horizon - self.config.t_plan;
                let adv = model.adversary();
                for y in others.iter_mut() {
                    let (_, _, g2) = model.evaluate(tau, &x, y)?;
                    let p = adv.tangent_projection(y)?;
                    let d = worst_case_disturbance(&g2, &p, &model.problem.bounds);
                    *y = adv.retract(&(&*y + d.control * dt))?;
                }
            }
            x = self.agent.constraint.retract(&(&x + u * dt))?;
            cost += dt * (&x - self.goal).norm_squared();
            states.push(x.clone());
        }
        let mut values = Vec::new();
        let mut ego_grads = Vec::new();
        if let Some(model) = &self.safety {
            let t_eval = model.problem.horizon - self.config.safety_lookahead();
            let target = self.config.epsilon + self.config.penalty_margin;
            for y in &others {
                let (v, g1, _) = model.evaluate(t_eval, &x, y)?;
                cost += mu * (target - v).max(0.0).powi(2);
                values.push(v);
                ego_grads.push(g1);
            }
        }
        Ok(Rollout {
            states,
            others_final: others,
            values,
            ego_grads,
            cost,
        })
    }

    // Adjoint through x_{k+1} = R(x_k + Δt u_k) with DR ≈ P(x_{k+1}); the
    // adversary response is held fixed.
    fn gradient(&self, roll: &Rollout, mu: f64) -> Result<Vec<Vector>> {
        let dt = self.config.dt;
        let target = self.config.epsilon + self.config.penalty_margin;
        let mut grads = vec![Vector::zeros(self.ego.len()); self.k];
        let mut adj = Vector::zeros(self.ego.len());
        for (v, g1) in roll.values.iter().zip(&roll.ego_grads) {
            let short = (target - v).max(0.0);
            if short > 0.0 {
                adj -= g1 * (2.0 * mu * short);
            }
        }
        for k in (0..self.k).rev() {
            let x = &roll.states[k];
            adj += (x - self.goal) * (2.0 * dt);
            let p = self.agent.constraint.tangent_projection(x)?;
            adj = p.apply(&adj);
            grads[k] = &adj * dt;
        }
        Ok(grads)
    }

    /// Projected gradient with backtracking. Returns (controls, rollout, iterations, converged).
    fn solve(&self, mut controls: Vec<Vector>, mu: f64) -> Result<(Vec<Vector>, Rollout, usize, bool)> {
        let u_max = self.agent.u_max;
        let mut roll = self.rollout(&controls, mu)?;
        let mut step = 1.0;
        for iter in 0..self.config.max_iterations {
            let grads = self.gradient(&roll, mu)?;
            let gmax = grads.iter().map(|g| g.amax()).fold(0.0, f64::max);
            if gmax <= 1e-14 {
                return Ok((controls, roll, iter, true));
            }
            let mut alpha = step * u_max / gmax;
            let mut accepted = None;
            for _ in 0..30 {
                let trial: Vec<Vector> = controls
                    .iter()
                    .zip(&grads)
                    .map(|(u, g)| {
                        let mut v = u - g * alpha;
                        clip(&mut v, u_max);
                        v
                    })
                    .collect();
                let moved: f64 = trial
                    .iter()
                    .zip(&controls)
                    .map(|(a, b)| (a - b).amax())
                    .fold(0.0, f64::max);
                if moved <= 1e-10 {
                    break;
                }
                let decrease: f64 = trial
                    .iter()
                    .zip(&controls)
                    .zip(&grads)
                    .map(|((a, b), g)| g.dot(&(b - a)))
                    .sum();
                let cand = self.rollout(&trial, mu)?;
                if cand.cost <= roll.cost - 1e-4 * decrease {
                    accepted = Some((trial, cand, moved));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, cand, moved)) => {
                    let gain = roll.cost - cand.cost;
                    let scale = 1.0 + roll.cost.abs();
                    controls = trial;
                    roll = cand;
                    step = (alpha * gmax / u_max * 2.0).min(1e8);
                    if moved <= 1e-8 || gain <= 1e-12 * scale {
                        return Ok((controls, roll, iter + 1, true));
                    }
                }
                None => return Ok((controls, roll, iter + 1, true)),
            }
        }
        Ok((controls, roll, self.config.max_iterations, false))
    }
}

/// One receding-horizon solve for the ego agent.
///
/// `warm_start` is the previous plan; it is shifted by one step before use.
/// `safety` may be `None` only when there are no other agents or
/// `config.safety` is off.
#[allow(clippy::too_many_arguments)]
pub fn plan_step(
    ego: &Vector,
    others: &[Vector],
    goal: &Vector,
    agent: AgentModel<'_>,
    safety: Option<SafetyModel<'_>>,
    config: &PlanConfig,
    warm_start: Option<&[Vector]>,
) -> Result<PlanResult> {
    let started = Instant::now();
    check_on_manifold(agent.constraint, ego, "ego state")?;
    let use_safety = config.safety && !others.is_empty();
    let safety = if use_safety {
        let model = safety.ok_or_else(|| ReachError::invalid("safety-constrained planning needs a value network"))?;
        config.validate(model.problem.horizon)?;
        for (i, y) in others.iter().enumerate() {
            check_on_manifold(model.adversary(), y, &format!("agent {i} state"))?;
        }
        Some(model)
    } else {
        config.validate(f64::INFINITY)?;
        None
    };

    let k = config.steps();
    let n = ego.len();
    let mut controls: Vec<Vector> = match warm_start {
        Some(prev) if !prev.is_empty() && prev[0].len() == n => (0..k)
            .map(|i| prev.get(i + 1).or(prev.last()).cloned().unwrap())
            .collect(),
        _ => vec![Vector::zeros(n); k],
    };
    for u in &mut controls {
        clip(u, agent.u_max);
    }

    let solver = Solver {
        agent,
        goal,
        others,
        safety,
        config,
        ego,
        k,
    };

    let mut mu = config.penalty_weight;
    let mut iterations = 0;
    let rounds = if safety.is_some() { config.penalty_rounds + 1 } else { 1 };
    for _ in 0..rounds {
        let (c, roll, iters, converged) = solver.solve(controls, mu)?;
        iterations += iters;
        controls = c;
        let min_value = roll.values.iter().copied().fold(None, |m: Option<f64>, v| {
            Some(m.map_or(v, |m| m.min(v)))
        });
        let safe = min_value.is_none_or(|v| v > config.epsilon);
        if safe {
            let _ = roll.others_final;
            return Ok(PlanResult {
                controls,
                states: roll.states,
                status: if converged { PlanStatus::Optimal } else { PlanStatus::Feasible },
                min_safety_value: min_value,
                iterations,
                wall_time: started.elapsed().as_secs_f64(),
            });
        }
        mu *= 10.0;
    }

    let model = safety.expect("fail-safe only arises with a safety model");
    let fs = failsafe_control(ego, others, agent, model, config)?;
    let fallback = vec![fs.control.clone(); k];
    let roll = solver.rollout(&fallback, 0.0)?;
    Ok(PlanResult {
        controls: fallback,
        states: roll.states,
        status: PlanStatus::FailSafe,
        min_safety_value: roll.values.iter().copied().reduce(f64::min),
        iterations,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// `+ū P(x)∇ₓV / ‖P(x)∇ₓV‖` against the other agent with the smallest safety value
/// at `T - t_safe`.
pub fn failsafe_control(
    ego: &Vector,
    others: &[Vector],
    agent: AgentModel<'_>,
    safety: SafetyModel<'_>,
    config: &PlanConfig,
) -> Result<FailSafeControl> {
    if others.is_empty() {
        return Ok(FailSafeControl {
            control: Vector::zeros(ego.len()),
            degenerate: false,
            not_applicable: true,
            min_value: None,
        });
    }
    let t_eval = safety.problem.horizon - config.safety_lookahead();
    let mut worst: Option<(f64, Vector)> = None;
    for y in others {
        let (v, g1, _) = safety.evaluate(t_eval, ego, y)?;
        if worst.as_ref().is_none_or(|(w, _)| v < *w) {
            worst = Some((v, g1));
        }
    }
    let (v, g1) = worst.expect("at least one other agent");
    let p = agent.constraint.tangent_projection(ego)?;
    let mut bounds = safety.problem.bounds;
    bounds.u_max = agent.u_max;
    let s = safest_control(&g1, &p, &bounds);
    Ok(FailSafeControl {
        control: s.control,
        degenerate: s.degenerate,
        not_applicable: false,
        min_value: Some(v),
    })
}

/// A planner that keeps its own warm start between calls.
#[derive(Debug, Clone)]
pub struct RecedingHorizonPlanner {
    pub config: PlanConfig,
    previous: Option<Vec<Vector>>,
}

impl RecedingHorizonPlanner {
    pub fn new(config: PlanConfig) -> Self {
        RecedingHorizonPlanner { config, previous: None }
    }

    pub fn plan(
        &mut self,
        ego: &Vector,
        others: &[Vector],
        goal: &Vector,
        agent: AgentModel<'_>,
        safety: Option<SafetyModel<'_>>,
    ) -> Result<PlanResult> {
        let result = plan_step(ego, others, goal, agent, safety, &self.config, self.previous.as_deref())?;
        self.previous = Some(result.controls.clone());
        Ok(result)
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> ManifoldConstraint {
        ManifoldConstraint::circle(0.5, [0.0, 0.0]).unwrap()
    }

    fn at(theta: f64) -> Vector {
        Vector::from_column_slice(&[0.5 * theta.cos(), 0.5 * theta.sin()])
    }

    #[test]
    fn lone_agent_makes_geodesic_progress() {
        let c = circle();
        let agent = AgentModel { constraint: &c, u_max: 1.0 };
        let (start, goal) = (at(0.0), at(1.5));
        let r = plan_step(&start, &[], &goal, agent, None, &PlanConfig::default(), None).unwrap();
        assert_eq!(r.controls.len(), 6);
        let before = c.geodesic_distance(&start, &goal).unwrap();
        let after = c.geodesic_distance(r.states.last().unwrap(), &goal).unwrap();
        assert!(after < before - 0.2, "{before} -> {after}");
        assert_eq!(r.status, PlanStatus::Optimal);
        for (u, x) in r.controls.iter().zip(&r.states) {
            assert!(u.norm() <= 1.0 + 1e-9);
            assert!(c.residual_norm(x).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn off_manifold_start_is_rejected() {
        let c = circle();
        let agent = AgentModel { constraint: &c, u_max: 1.0 };
        let bad = Vector::from_column_slice(&[0.7, 0.0]);
        let err = plan_step(&bad, &[], &at(1.0), agent, None, &PlanConfig::default(), None).unwrap_err();
        assert!(matches!(err, ReachError::Precondition(_)));
    }

    #[test]
    fn safety_needs_a_model() {
        let c = circle();
        let agent = AgentModel { constraint: &c, u_max: 1.0 };
        let err = plan_step(&at(0.0), &[at(2.0)], &at(1.0), agent, None, &PlanConfig::default(), None);
        assert!(err.is_err());
        let cfg = PlanConfig { safety: false, ..PlanConfig::default() };
        assert!(plan_step(&at(0.0), &[at(2.0)], &at(1.0), agent, None, &cfg, None).is_ok());
    }

    #[test]
    fn config_validation() {
        let cfg = PlanConfig { dt: 0.5, ..PlanConfig::default() };
        assert!(cfg.validate(1.0).is_err());
        let cfg = PlanConfig { t_safe: Some(2.0), ..PlanConfig::default() };
        assert!(cfg.validate(1.0).is_err());
        assert!(PlanConfig::default().validate(1.0).is_ok());
        assert_eq!(PlanConfig::default().steps(), 6);
    }

    #[test]
    fn warm_start_converges_to_fixed_plan() {
        let c = circle();
        let agent = AgentModel { constraint: &c, u_max: 1.0 };
        let mut planner = RecedingHorizonPlanner::new(PlanConfig::default());
        let (start, goal) = (at(0.3), at(-1.2));
        let mut last: Option<Vec<Vector>> = None;
        let mut change = f64::INFINITY;
        for _ in 0..4 {
            let r = planner.plan(&start, &[], &goal, agent, None).unwrap();
            if let Some(prev) = &last {
                change = prev.iter().zip(&r.controls).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            }
            last = Some(r.controls);
        }
        assert!(change <= 1e-6, "change {change}");
    }
}
