//! Residual training of the value network with a backward time curriculum.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{ManifoldConstraint, ProjectionMatrix};
use crate::hamiltonian::{ControlBounds, HamiltonianMode};
use crate::value_net::{loss_with_param_grad, InputNormalization, NetworkArchitecture, ValueNetwork};
use crate::{ReachError, Result, Vector};

/// Training states of constrained problems must be this close to the manifold.
pub const TRAINING_MANIFOLD_TOL: f64 = 1e-8;
/// Loss evaluation rejects constrained states farther than this.
pub const LOSS_MANIFOLD_TOL: f64 = 1e-6;
/// Half-width multiplier of the ambient sampling box used by unconstrained problems.
pub const AMBIENT_BOX_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCondition {
    /// `l(x) = ‖x - goal‖₂`.
    GoalDistance { goal: Vec<f64> },
    /// `l(x₁, x₂) = ‖x₁ - x₂‖₂ - 2r`; negative exactly when the discs overlap.
    PairwiseSeparation { agent_radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachabilityProblem {
    pub mode: HamiltonianMode,
    /// Manifold of the ego agent (the only agent in `ReachMin` mode).
    pub ego: ManifoldConstraint,
    /// Manifold of the adversary in `AvoidGame` mode.
    #[serde(default)]
    pub adversary: Option<ManifoldConstraint>,
    pub bounds: ControlBounds,
    pub horizon: f64,
    pub terminal: TerminalCondition,
    /// `false` trains the unconstrained ablation (`P = I`, ambient sampling).
    #[serde(default = "default_true")]
    pub constrained: bool,
}

fn default_true() -> bool {
    true
}

/// One training point. `is_terminal` holds exactly when `t = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub t: f64,
    pub x: Vector,
    pub is_terminal: bool,
}

impl ReachabilityProblem {
    /// The circle-constrained goal-reaching particle: radius 0.5 at the origin,
    /// goal `(0.5, 0)`, `ū = 1`.
    pub fn circle_reach(horizon: f64, constrained: bool) -> Self {
        ReachabilityProblem {
            mode: HamiltonianMode::ReachMin,
            ego: ManifoldConstraint::circle(0.5, [0.0, 0.0]).expect("valid circle"),
            adversary: None,
            bounds: ControlBounds { u_max: 1.0, d_max: 0.0 },
            horizon,
            terminal: TerminalCondition::GoalDistance { goal: vec![0.5, 0.0] },
            constrained,
        }
    }

    /// Two agents sharing one circle; the adversary is as fast as the ego.
    pub fn circle_pair_game(radius: f64, agent_radius: f64, horizon: f64) -> Self {
        let c = ManifoldConstraint::circle(radius, [0.0, 0.0]).expect("valid circle");
        ReachabilityProblem {
            mode: HamiltonianMode::AvoidGame,
            ego: c.clone(),
            adversary: Some(c),
            bounds: ControlBounds { u_max: 1.0, d_max: 1.0 },
            horizon,
            terminal: TerminalCondition::PairwiseSeparation { agent_radius },
            constrained: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ReachError::config("problem.horizon", "must be positive"));
        }
        match (self.mode, &self.adversary) {
            (HamiltonianMode::AvoidGame, None) => {
                return Err(ReachError::config("problem.adversary", "game mode needs an adversary manifold"))
            }
            (HamiltonianMode::ReachMin, Some(_)) => {
                return Err(ReachError::config("problem.adversary", "reach mode takes no adversary"))
            }
            _ => {}
        }
        match &self.terminal {
            TerminalCondition::GoalDistance { goal } => {
                if goal.len() != self.state_dim() {
                    return Err(ReachError::config("problem.terminal.goal", "goal dimension mismatch"));
                }
            }
            TerminalCondition::PairwiseSeparation { agent_radius } => {
                if self.mode != HamiltonianMode::AvoidGame {
                    return Err(ReachError::config(
                        "problem.terminal",
                        "pairwise separation needs game mode",
                    ));
                }
                if !(*agent_radius >= 0.0) {
                    return Err(ReachError::config("problem.terminal.agent_radius", "must be nonnegative"));
                }
                if self.ego.ambient_dim() != self.adversary.as_ref().map_or(0, |a| a.ambient_dim()) {
                    return Err(ReachError::config(
                        "problem.adversary",
                        "ego and adversary must share the ambient dimension",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.ego.ambient_dim() + self.adversary.as_ref().map_or(0, |a| a.ambient_dim())
    }

    /// Ego manifold, or the ego × adversary product in game mode.
    pub fn joint_constraint(&self) -> ManifoldConstraint {
        match &self.adversary {
            None => self.ego.clone(),
            Some(adv) => ManifoldConstraint::product(vec![self.ego.clone(), adv.clone()])
                .expect("product of valid constraints"),
        }
    }

    pub fn terminal_value(&self, x: &Vector) -> Result<f64> {
        if x.len() != self.state_dim() {
            return Err(ReachError::invalid("terminal condition evaluated at wrong dimension"));
        }
        Ok(match &self.terminal {
            TerminalCondition::GoalDistance { goal } => {
                x.iter().zip(goal).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            }
            TerminalCondition::PairwiseSeparation { agent_radius } => {
                let n = self.ego.ambient_dim();
                (x.rows(0, n) - x.rows(n, n)).norm() - 2.0 * agent_radius
            }
        })
    }

    /// Per-agent tangent projectors at `x` (identities for the ablation).
    pub fn projections(&self, x: &Vector) -> Result<Vec<ProjectionMatrix>> {
        let n1 = self.ego.ambient_dim();
        let mut out = Vec::with_capacity(2);
        if self.constrained {
            out.push(self.ego.tangent_projection(&x.rows(0, n1).into_owned())?);
            if let Some(adv) = &self.adversary {
                let n2 = adv.ambient_dim();
                out.push(adv.tangent_projection(&x.rows(n1, n2).into_owned())?);
            }
        } else {
            out.push(ProjectionMatrix::identity(n1));
            if let Some(adv) = &self.adversary {
                out.push(ProjectionMatrix::identity(adv.ambient_dim()));
            }
        }
        Ok(out)
    }

    pub(crate) fn check_training_states(&self, batch: &[TrainingSample]) -> Result<()> {
        if !self.constrained {
            return Ok(());
        }
        let joint = self.joint_constraint();
        for s in batch {
            let r = joint.residual_norm(&s.x)?;
            if r > LOSS_MANIFOLD_TOL {
                return Err(ReachError::Precondition(format!(
                    "training state {:?} is {r:.3e} off the manifold",
                    s.x.as_slice()
                )));
            }
        }
        Ok(())
    }

    /// Box the state sampler and input normalization cover: the manifold's bounding
    /// box, or for the ablation that box widened by [`AMBIENT_BOX_FACTOR`].
    pub fn state_box(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.joint_constraint().bounding_box();
        if self.constrained {
            return (lo, hi);
        }
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| {
                let mid = 0.5 * (l + h);
                let half = 0.5 * (h - l) * AMBIENT_BOX_FACTOR;
                (mid - half, mid + half)
            })
            .unzip()
    }

    pub fn normalization(&self) -> Result<InputNormalization> {
        let (lo, hi) = self.state_box();
        InputNormalization::from_box(self.horizon, &lo, &hi)
    }

    /// Draws a training state: on the (joint) manifold, or uniformly in the
    /// ambient box for the ablation.
    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vector> {
        if self.constrained {
            self.joint_constraint().sample_one(rng)
        } else {
            let (lo, hi) = self.state_box();
            Ok(Vector::from_iterator(
                lo.len(),
                lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Peak Adam step size; decays to zero on a cosine schedule.
    pub learning_rate: f64,
    /// Final weight of the residual term.
    pub lambda: f64,
    /// Fraction of steps over which `λ` ramps linearly from 0.
    pub lambda_ramp_fraction: f64,
    /// Leading fraction of steps trained on the terminal slice only.
    pub pretrain_fraction: f64,
    /// Fraction of steps (after pretraining) over which the sampled time window
    /// grows from `[T, T]` to `[0, T]`.
    pub curriculum_fraction: f64,
    /// Fraction of each batch pinned to `t = T`.
    pub terminal_fraction: f64,
    pub log_interval: usize,
    /// Seed of the training-state sampler.
    pub data_seed: u64,
    /// Seed of the network initialization.
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            steps: 60_000,
            learning_rate: 1e-3,
            lambda: 0.1,
            lambda_ramp_fraction: 0.1,
            pretrain_fraction: 0.05,
            curriculum_fraction: 0.6,
            terminal_fraction: 0.5,
            log_interval: 100,
            data_seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64, name: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(ReachError::config(format!("training.{name}"), "must lie in [0, 1]"));
            }
            Ok(())
        };
        if self.batch_size == 0 {
            return Err(ReachError::config("training.batch_size", "must be positive"));
        }
        if self.steps == 0 {
            return Err(ReachError::config("training.steps", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ReachError::config("training.learning_rate", "must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ReachError::config("training.lambda", "must be nonnegative"));
        }
        if self.log_interval == 0 {
            return Err(ReachError::config("training.log_interval", "must be positive"));
        }
        frac(self.lambda_ramp_fraction, "lambda_ramp_fraction")?;
        frac(self.pretrain_fraction, "pretrain_fraction")?;
        frac(self.curriculum_fraction, "curriculum_fraction")?;
        frac(self.terminal_fraction, "terminal_fraction")?;
        Ok(())
    }

    fn pretrain_steps(&self) -> usize {
        (self.pretrain_fraction * self.steps as f64).round() as usize
    }

    /// Fraction `κ ∈ [0, 1]` of the horizon covered by sampled times.
    pub fn curriculum(&self, step: usize) -> f64 {
        let pre = self.pretrain_steps();
        if step < pre {
            return 0.0;
        }
        let ramp = self.curriculum_fraction * self.steps as f64;
        if ramp <= 0.0 {
            return 1.0;
        }
        (((step - pre) as f64 + 1.0) / ramp).min(1.0)
    }

    pub fn lambda_at(&self, step: usize) -> f64 {
        let ramp = self.lambda_ramp_fraction * self.steps as f64;
        if ramp <= 0.0 {
            self.lambda
        } else {
            self.lambda * (step as f64 / ramp).min(1.0)
        }
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.steps as f64;
        0.5 * self.learning_rate * (1.0 + (PI * progress).cos())
    }
}

/// Curriculum batch for `step`: states from the (joint) manifold, times uniform in
/// `[T - κT, T]`, and a `terminal_fraction` share pinned to `t = T`.
pub fn sample_batch<R: Rng + ?Sized>(
    problem: &ReachabilityProblem,
    config: &TrainConfig,
    step: usize,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    if step >= config.steps {
        return Err(ReachError::invalid(format!(
            "step {step} is past the configured {} steps",
            config.steps
        )));
    }
    let horizon = problem.horizon;
    let kappa = config.curriculum(step);
    let pinned = (config.terminal_fraction * config.batch_size as f64).round() as usize;
    (0..config.batch_size)
        .map(|i| {
            let x = problem.sample_state(rng)?;
            let t = if i < pinned || kappa == 0.0 {
                horizon
            } else {
                horizon - kappa * horizon * rng.random::<f64>()
            };
            Ok(TrainingSample {
                t,
                x,
                is_terminal: t >= horizon,
            })
        })
        .collect()
}

/// One logged point of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: ValueNetwork,
    pub history: Vec<LossRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains a fresh network on `problem`. Deterministic in the config seeds.
pub fn train(problem: &ReachabilityProblem, arch: &NetworkArchitecture, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(problem, arch, config, |_| {})
}

pub fn train_with_progress(
    problem: &ReachabilityProblem,
    arch: &NetworkArchitecture,
    config: &TrainConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    problem.validate()?;
    config.validate()?;
    if arch.input_dim != problem.state_dim() + 1 {
        return Err(ReachError::config(
            "architecture.input_dim",
            format!("must be {} for this problem", problem.state_dim() + 1),
        ));
    }
    let mut network = ValueNetwork::new(arch.clone(), problem.normalization()?, config.init_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.data_seed);
    let mut adam = Adam::new(arch.parameter_count());
    let mut history = Vec::new();
    let joint = problem.joint_constraint();

    for step in 0..config.steps {
        let batch = sample_batch(problem, config, step, &mut rng)?;
        if problem.constrained {
            for s in &batch {
                let r = joint.residual_norm(&s.x)?;
                if r > TRAINING_MANIFOLD_TOL {
                    return Err(ReachError::Precondition(format!(
                        "sampled training state is {r:.3e} off the manifold"
                    )));
                }
            }
        }
        let lambda = config.lambda_at(step);
        let eval = loss_with_param_grad(&network, &batch, problem, lambda)?;
        let grad_norm = eval.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !eval.loss.is_finite() || !grad_norm.is_finite() {
            return Err(ReachError::NonFiniteLoss {
                step,
                l1: eval.terminal,
                l2: eval.residual,
                grad_norm,
            });
        }
        if step % config.log_interval == 0 || step + 1 == config.steps {
            let record = LossRecord {
                step,
                l1: eval.terminal,
                l2: eval.residual,
                total: eval.loss,
                grad_norm,
            };
            progress(&record);
            history.push(record);
        }
        adam.step(&mut network.parameters.0, &eval.grad, config.learning_rate_at(step));
    }
    Ok(TrainOutcome { network, history })
}

/// Summary of `|∂V/∂t + min{0, H}|` over probe points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub probes: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

/// PDE residual magnitudes at explicit `(t, x)` points (no terminal term).
pub fn residuals_at(net: &ValueNetwork, problem: &ReachabilityProblem, points: &[(f64, Vector)]) -> Result<Vec<f64>> {
    let grads = net.values_and_gradients(points)?;
    points
        .iter()
        .zip(grads)
        .map(|((_, x), g)| {
            let projections = problem.projections(x)?;
            let (h, _) = crate::hamiltonian::hamiltonian_and_costate_derivative(
                problem.mode,
                &g.dv_dx,
                &projections,
                &problem.bounds,
            );
            Ok((g.dv_dt + h.min(0.0)).abs())
        })
        .collect()
}

/// Residual statistics on `probe_count` fresh states with times uniform in `[0, T]`.
pub fn pde_residual_report(
    net: &ValueNetwork,
    problem: &ReachabilityProblem,
    probe_count: usize,
    seed: u64,
) -> Result<ResidualReport> {
    if probe_count == 0 {
        return Err(ReachError::invalid("probe_count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..probe_count)
        .map(|_| {
            let x = problem.sample_state(&mut rng)?;
            Ok((problem.horizon * rng.random::<f64>(), x))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(residuals_at(net, problem, &points)?))
}

pub(crate) fn summarize(mut values: Vec<f64>) -> ResidualReport {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let q = |p: f64| values[((p * (n - 1) as f64).round() as usize).min(n - 1)];
    ResidualReport {
        probes: n,
        mean: values.iter().sum::<f64>() / n as f64,
        median: q(0.5),
        p95: q(0.95),
        max: values[n - 1],
    }
}
