//! Lockstep multi-agent simulation of velocity-controlled particles on manifolds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::ManifoldConstraint;
use crate::planner::{AgentModel, PlanConfig, PlanStatus, RecedingHorizonPlanner, SafetyModel};
use crate::{ReachError, Result, Vector};

/// Starts and goals must lie this close to their manifolds.
pub const SCENARIO_MANIFOLD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Controller {
    /// Receding-horizon planner with the learned safety constraint.
    Hammar,
    /// Same planner with the safety rows removed.
    NoSafety,
    /// Tangent projection of a fixed ambient velocity, clipped to the speed bound.
    ConstantVelocity { velocity: Vec<f64> },
    /// Replays the listed controls, then stops.
    Scripted { controls: Vec<Vec<f64>> },
}

impl Controller {
    pub fn label(&self) -> &'static str {
        match self {
            Controller::Hammar => "Hammar",
            Controller::NoSafety => "NoSafety",
            Controller::ConstantVelocity { .. } => "ConstantVelocity",
            Controller::Scripted { .. } => "Scripted",
        }
    }

    fn is_planner(&self) -> bool {
        matches!(self, Controller::Hammar | Controller::NoSafety)
    }
}

fn default_radius() -> f64 {
    0.05
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub constraint: ManifoldConstraint,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_speed")]
    pub u_max: f64,
    pub controller: Controller,
}

fn default_dt() -> f64 {
    0.05
}

fn default_max_steps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub agents: Vec<AgentSpec>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(ReachError::config("scenario.agents", "at least one agent is required"));
        }
        if !(self.dt > 0.0) {
            return Err(ReachError::config("scenario.dt", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(ReachError::config("scenario.max_steps", "must be positive"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let n = a.constraint.ambient_dim();
            let field = |f: &str| format!("scenario.agents[{i}].{f}");
            if a.start.len() != n || a.goal.len() != n {
                return Err(ReachError::config(field("start"), "start/goal dimension does not match the constraint"));
            }
            for (name, p) in [("start", &a.start), ("goal", &a.goal)] {
                let r = a.constraint.residual_norm(&Vector::from_column_slice(p))?;
                if r > SCENARIO_MANIFOLD_TOL {
                    return Err(ReachError::config(field(name), format!("{r:.3e} off the manifold")));
                }
            }
            if !(a.radius > 0.0) {
                return Err(ReachError::config(field("radius"), "must be positive"));
            }
            if !(a.u_max > 0.0) {
                return Err(ReachError::config(field("u_max"), "must be positive"));
            }
            match &a.controller {
                Controller::ConstantVelocity { velocity } if velocity.len() != n => {
                    return Err(ReachError::config(field("controller.velocity"), "wrong dimension"));
                }
                Controller::Scripted { controls } if controls.iter().any(|u| u.len() != n) => {
                    return Err(ReachError::config(field("controller.controls"), "wrong dimension"));
                }
                _ => {}
            }
        }
        let starts: Vec<Vector> = self.agents.iter().map(|a| Vector::from_column_slice(&a.start)).collect();
        if let Some(c) = detect_collision(&starts, &self.radii()) {
            return Err(ReachError::config(
                "scenario.agents",
                format!("agents {} and {} start in collision", c.pair.0, c.pair.1),
            ));
        }
        Ok(())
    }

    pub fn radii(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.radius).collect()
    }

    /// Copy with every agent driven by `controller`.
    pub fn with_controller(&self, controller: Controller) -> Scenario {
        let mut s = self.clone();
        for a in &mut s.agents {
            a.controller = controller.clone();
        }
        s
    }

    pub fn method_label(&self) -> String {
        let first = self.agents[0].controller.label();
        if self.agents.iter().all(|a| a.controller.label() == first) {
            first.to_string()
        } else {
            "Mixed".to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub pair: (usize, usize),
    pub distance: f64,
}

/// First pair (in index order) whose centers are strictly closer than `r_i + r_j`.
pub fn detect_collision(states: &[Vector], radii: &[f64]) -> Option<Collision> {
    assert_eq!(states.len(), radii.len(), "one radius per state");
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let d = (&states[i] - &states[j]).norm();
            if d < radii[i] + radii[j] {
                return Some(Collision { pair: (i, j), distance: d });
            }
        }
    }
    None
}

/// Checks the step endpoints and then the segment midpoints.
pub fn detect_step_collision(before: &[Vector], after: &[Vector], radii: &[f64]) -> Option<Collision> {
    if let Some(c) = detect_collision(after, radii) {
        return Some(c);
    }
    let mid: Vec<Vector> = before.iter().zip(after).map(|(a, b)| (a + b) * 0.5).collect();
    detect_collision(&mid, radii)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub statuses: Vec<Option<PlanStatus>>,
    pub predicted_margins: Vec<Option<f64>>,
    pub plan_times: Vec<Option<f64>>,
    /// Smallest learned pairwise safety value over the current states.
    pub min_pair_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub success: bool,
    pub collision: bool,
    pub timeout: bool,
    pub planner_error: Option<String>,
    pub collision_event: Option<Collision>,
    pub steps: usize,
    /// Sum of per-step geodesic displacements.
    pub path_lengths: Vec<f64>,
    pub start_goal_geodesic: Vec<f64>,
    pub start_final_geodesic: Vec<f64>,
    pub mean_plan_time: f64,
    pub max_plan_time: f64,
    pub plan_calls: usize,
    pub max_manifold_residual: f64,
    pub log: Vec<StepLog>,
}

/// Planner settings and the learned safety model shared by every agent.
#[derive(Debug, Clone, Copy)]
pub struct Planning<'a> {
    pub config: &'a PlanConfig,
    pub safety: Option<SafetyModel<'a>>,
}

fn min_pair_value(states: &[Vector], planning: &Planning<'_>) -> Result<Option<f64>> {
    let Some(model) = planning.safety else {
        return Ok(None);
    };
    if states.len() < 2 || model.net.state_dim() != 2 * states[0].len() {
        return Ok(None);
    }
    let t = model.problem.horizon - planning.config.safety_lookahead();
    let mut points = Vec::new();
    for i in 0..states.len() {
        for j in 0..states.len() {
            if i != j {
                let mut z = Vector::zeros(2 * states[i].len());
                z.rows_mut(0, states[i].len()).copy_from(&states[i]);
                z.rows_mut(states[i].len(), states[j].len()).copy_from(&states[j]);
                points.push((t, z));
            }
        }
    }
    Ok(model.net.values(&points)?.into_iter().reduce(f64::min))
}

/// Runs one closed-loop trial. Planner failures end the trial and are recorded.
pub fn run_trial(scenario: &Scenario, planning: Planning<'_>) -> Result<TrialRecord> {
    scenario.validate()?;
    let m = scenario.agents.len();
    let radii = scenario.radii();
    let goals: Vec<Vector> = scenario.agents.iter().map(|a| Vector::from_column_slice(&a.goal)).collect();
    let starts: Vec<Vector> = scenario.agents.iter().map(|a| Vector::from_column_slice(&a.start)).collect();
    let mut states = starts.clone();
    let mut planners: Vec<Option<RecedingHorizonPlanner>> = scenario
        .agents
        .iter()
        .map(|a| {
            let mut cfg = planning.config.clone();
            if a.controller == Controller::NoSafety {
                cfg.safety = false;
            }
            a.controller.is_planner().then(|| RecedingHorizonPlanner::new(cfg))
        })
        .collect();

    let mut record = TrialRecord {
        seed: scenario.seed,
        success: false,
        collision: false,
        timeout: false,
        planner_error: None,
        collision_event: None,
        steps: 0,
        path_lengths: vec![0.0; m],
        start_goal_geodesic: Vec::with_capacity(m),
        start_final_geodesic: Vec::new(),
        mean_plan_time: 0.0,
        max_plan_time: 0.0,
        plan_calls: 0,
        max_manifold_residual: 0.0,
        log: Vec::new(),
    };
    for (a, (s, g)) in scenario.agents.iter().zip(starts.iter().zip(&goals)) {
        record.start_goal_geodesic.push(a.constraint.geodesic_distance(s, g)?);
        record.max_manifold_residual = record.max_manifold_residual.max(a.constraint.residual_norm(s)?);
    }
    let tolerance = planning.config.goal_tolerance;
    let mut plan_time_total = 0.0;

    'outer: for step in 0..=scenario.max_steps {
        let at_goal = states.iter().zip(&goals).all(|(x, g)| (x - g).norm() <= tolerance);
        if at_goal {
            record.success = true;
            break;
        }
        if step == scenario.max_steps {
            record.timeout = true;
            break;
        }
        let mut controls = Vec::with_capacity(m);
        let mut log = StepLog {
            step,
            t: step as f64 * scenario.dt,
            states: states.iter().map(|x| x.as_slice().to_vec()).collect(),
            controls: Vec::with_capacity(m),
            statuses: vec![None; m],
            predicted_margins: vec![None; m],
            plan_times: vec![None; m],
            min_pair_value: min_pair_value(&states, &planning)?,
        };
        for (i, agent) in scenario.agents.iter().enumerate() {
            let x = &states[i];
            let u = match &agent.controller {
                Controller::Hammar | Controller::NoSafety => {
                    let others: Vec<Vector> = states
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, y)| y.clone())
                        .collect();
                    let model = AgentModel {
                        constraint: &agent.constraint,
                        u_max: agent.u_max,
                    };
                    let planner = planners[i].as_mut().expect("planner controller");
                    match planner.plan(x, &others, &goals[i], model, planning.safety) {
                        Ok(plan) => {
                            record.plan_calls += 1;
                            plan_time_total += plan.wall_time;
                            record.max_plan_time = record.max_plan_time.max(plan.wall_time);
                            log.statuses[i] = Some(plan.status);
                            log.predicted_margins[i] = plan.min_safety_value;
                            log.plan_times[i] = Some(plan.wall_time);
                            plan.first_control().clone()
                        }
                        Err(e) => {
                            record.planner_error = Some(format!("agent {i}: {e}"));
                            record.log.push(log);
                            break 'outer;
                        }
                    }
                }
                Controller::ConstantVelocity { velocity } => {
                    let p = agent.constraint.tangent_projection(x)?;
                    let mut u = p.apply(&Vector::from_column_slice(velocity));
                    let n = u.norm();
                    if n > agent.u_max {
                        u *= agent.u_max / n;
                    }
                    u
                }
                Controller::Scripted { controls } => match controls.get(step) {
                    Some(u) => {
                        let mut u = Vector::from_column_slice(u);
                        let n = u.norm();
                        if n > agent.u_max {
                            u *= agent.u_max / n;
                        }
                        u
                    }
                    None => Vector::zeros(x.len()),
                },
            };
            controls.push(u);
        }

        let mut next = Vec::with_capacity(m);
        for (i, agent) in scenario.agents.iter().enumerate() {
            let x = agent.constraint.retract(&(&states[i] + &controls[i] * scenario.dt))?;
            record.path_lengths[i] += agent.constraint.geodesic_distance(&states[i], &x)?;
            record.max_manifold_residual = record.max_manifold_residual.max(agent.constraint.residual_norm(&x)?);
            next.push(x);
        }
        log.controls = controls.iter().map(|u| u.as_slice().to_vec()).collect();
        record.log.push(log);
        record.steps = step + 1;
        let hit = detect_step_collision(&states, &next, &radii);
        states = next;
        if let Some(c) = hit {
            record.collision = true;
            record.collision_event = Some(c);
            break;
        }
    }

    for (a, (s, x)) in scenario.agents.iter().zip(starts.iter().zip(&states)) {
        record.start_final_geodesic.push(a.constraint.geodesic_distance(s, x)?);
    }
    if record.plan_calls > 0 {
        record.mean_plan_time = plan_time_total / record.plan_calls as f64;
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_trials: usize,
    pub seed: u64,
    /// Minimum start-to-goal geodesic distance for randomized agents.
    pub min_goal_distance: f64,
    /// Extra clearance between sampled starts (and between sampled goals).
    pub clearance: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_trials: 100,
            seed: 0,
            min_goal_distance: 0.5,
            clearance: 0.05,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(ReachError::config("benchmark.n_trials", "must be at least 1"));
        }
        if !(self.min_goal_distance >= 0.0) || !(self.clearance >= 0.0) {
            return Err(ReachError::config("benchmark.min_goal_distance", "distances must be nonnegative"));
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(trial as u64)
    }
}

const MAX_SAMPLING_ATTEMPTS: usize = 10_000;

/// New starts and goals for every agent of `base`: on-manifold, pairwise clear,
/// and at least `min_goal_distance` apart along the manifold.
pub fn randomize_scenario(base: &Scenario, config: &BenchmarkConfig, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = base.clone();
    out.seed = seed;
    let radii = base.radii();
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let mut ok = true;
        let mut starts: Vec<Vector> = Vec::new();
        let mut goals: Vec<Vector> = Vec::new();
        for (i, a) in base.agents.iter().enumerate() {
            let s = a.constraint.sample_one(&mut rng)?;
            let g = a.constraint.sample_one(&mut rng)?;
            if a.constraint.geodesic_distance(&s, &g)? < config.min_goal_distance {
                ok = false;
            }
            for j in 0..i {
                let gap = radii[i] + radii[j] + config.clearance;
                if (&s - &starts[j]).norm() <= gap || (&g - &goals[j]).norm() <= gap {
                    ok = false;
                }
            }
            starts.push(s);
            goals.push(g);
        }
        // Consume a fixed amount of randomness per attempt either way.
        let _ = rng.random::<u32>();
        if ok {
            for (a, (s, g)) in out.agents.iter_mut().zip(starts.into_iter().zip(goals)) {
                a.start = s.as_slice().to_vec();
                a.goal = g.as_slice().to_vec();
            }
            return Ok(out);
        }
    }
    Err(ReachError::Sampling(format!(
        "no admissible start/goal draw in {MAX_SAMPLING_ATTEMPTS} attempts"
    )))
}

/// Aggregate metrics in the SR / CR / Time / PL layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub trials: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub planner_errors: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    /// Seconds per planning call.
    pub time_mean: f64,
    pub time_std: f64,
    /// Mean per-agent path length of successful trials.
    pub path_length_mean: f64,
    pub path_length_std: f64,
}

pub const REPORT_HEADER: &str = "Method,SR%,CR%,Time mean,Time std,PL mean,PL std";

impl MethodSummary {
    pub fn from_trials(method: &str, trials: &[TrialRecord]) -> MethodSummary {
        let n = trials.len();
        let successes = trials.iter().filter(|t| t.success).count();
        let collisions = trials.iter().filter(|t| t.collision).count();
        let timeouts = trials.iter().filter(|t| t.timeout).count();
        let planner_errors = trials.iter().filter(|t| t.planner_error.is_some()).count();
        let times: Vec<f64> = trials
            .iter()
            .flat_map(|t| t.log.iter().flat_map(|l| l.plan_times.iter().flatten().copied()))
            .collect();
        let lengths: Vec<f64> = trials
            .iter()
            .filter(|t| t.success)
            .map(|t| t.path_lengths.iter().sum::<f64>() / t.path_lengths.len() as f64)
            .collect();
        let (time_mean, time_std) = mean_std(&times);
        let (path_length_mean, path_length_std) = mean_std(&lengths);
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        MethodSummary {
            method: method.to_string(),
            trials: n,
            successes,
            collisions,
            timeouts,
            planner_errors,
            success_rate: pct(successes),
            collision_rate: pct(collisions),
            time_mean,
            time_std,
            path_length_mean,
            path_length_std,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.1},{:.1},{:.6},{:.6},{:.4},{:.4}",
            self.method,
            self.success_rate,
            self.collision_rate,
            self.time_mean,
            self.time_std,
            self.path_length_mean,
            self.path_length_std
        )
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub summary: MethodSummary,
    pub trials: Vec<TrialRecord>,
}

/// Runs `config.n_trials` randomized copies of `base`. Trial `k` uses the same
/// starts and goals for every method given the same seed.
pub fn run_benchmark(base: &Scenario, config: &BenchmarkConfig, planning: Planning<'_>) -> Result<BenchmarkReport> {
    config.validate()?;
    let scenarios = (0..config.n_trials)
        .map(|k| randomize_scenario(base, config, config.trial_seed(k)))
        .collect::<Result<Vec<_>>>()?;
    let trials = scenarios
        .par_iter()
        .map(|s| run_trial(s, planning))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport {
        summary: MethodSummary::from_trials(&base.method_label(), &trials),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> ManifoldConstraint {
        ManifoldConstraint::circle(0.5, [0.0, 0.0]).unwrap()
    }

    fn at(theta: f64) -> Vec<f64> {
        vec![0.5 * theta.cos(), 0.5 * theta.sin()]
    }

    fn agent(start: f64, goal: f64, controller: Controller) -> AgentSpec {
        AgentSpec {
            constraint: circle(),
            start: at(start),
            goal: at(goal),
            radius: 0.05,
            u_max: 1.0,
            controller,
        }
    }

    fn no_safety() -> PlanConfig {
        PlanConfig {
            safety: false,
            ..PlanConfig::default()
        }
    }

    #[test]
    fn collision_uses_strict_inequality() {
        let a = Vector::from_column_slice(&[0.0, 0.0]);
        let b = Vector::from_column_slice(&[0.1, 0.0]);
        assert!(detect_collision(&[a.clone(), b], &[0.05, 0.05]).is_none());
        let c = Vector::from_column_slice(&[0.1 - 1e-6, 0.0]);
        let hit = detect_collision(&[a, c], &[0.05, 0.05]).unwrap();
        assert_eq!(hit.pair, (0, 1));
    }

    #[test]
    fn crossing_step_is_caught_at_the_midpoint() {
        let before = vec![Vector::from_column_slice(&[-0.2, 0.0]), Vector::from_column_slice(&[0.2, 0.0])];
        let after = vec![Vector::from_column_slice(&[0.2, 0.0]), Vector::from_column_slice(&[-0.2, 0.0])];
        let r = [0.05, 0.05];
        assert!(detect_collision(&before, &r).is_none());
        assert!(detect_collision(&after, &r).is_none());
        assert!(detect_step_collision(&before, &after, &r).is_some());
    }

    #[test]
    fn single_agent_reaches_goal() {
        let s = Scenario {
            agents: vec![agent(0.0, 2.0, Controller::NoSafety)],
            dt: 0.05,
            max_steps: 200,
            seed: 0,
        };
        let cfg = no_safety();
        let rec = run_trial(&s, Planning { config: &cfg, safety: None }).unwrap();
        assert!(rec.success && !rec.collision);
        assert!(rec.path_lengths[0] >= rec.start_final_geodesic[0] - 1e-6);
        assert!(rec.max_manifold_residual <= 1e-6);
        assert!(rec.mean_plan_time > 0.0);
    }

    #[test]
    fn constant_velocity_agents_collide() {
        let s = Scenario {
            agents: vec![
                agent(-0.8, 0.8, Controller::ConstantVelocity { velocity: vec![0.0, 1.0] }),
                agent(0.8, -0.8, Controller::ConstantVelocity { velocity: vec![0.0, -1.0] }),
            ],
            dt: 0.05,
            max_steps: 100,
            seed: 0,
        };
        let cfg = no_safety();
        let rec = run_trial(&s, Planning { config: &cfg, safety: None }).unwrap();
        assert!(rec.collision && !rec.success);
    }

    #[test]
    fn colliding_starts_are_rejected() {
        let s = Scenario {
            agents: vec![agent(0.0, 1.0, Controller::Hammar), agent(0.05, 2.0, Controller::Hammar)],
            dt: 0.05,
            max_steps: 10,
            seed: 0,
        };
        assert!(matches!(s.validate(), Err(ReachError::Config { .. })));
    }

    #[test]
    fn randomized_scenarios_respect_the_generator_rules() {
        let base = Scenario {
            agents: vec![agent(0.0, 1.0, Controller::NoSafety), agent(2.0, 3.0, Controller::NoSafety)],
            dt: 0.05,
            max_steps: 10,
            seed: 0,
        };
        let cfg = BenchmarkConfig::default();
        for k in 0..50 {
            let s = randomize_scenario(&base, &cfg, cfg.trial_seed(k)).unwrap();
            s.validate().unwrap();
            for a in &s.agents {
                let d = a
                    .constraint
                    .geodesic_distance(&Vector::from_column_slice(&a.start), &Vector::from_column_slice(&a.goal))
                    .unwrap();
                assert!(d >= 0.5);
            }
            assert_eq!(s, randomize_scenario(&base, &cfg, cfg.trial_seed(k)).unwrap());
        }
    }

    #[test]
    fn single_trial_benchmark_matches_the_trial() {
        let base = Scenario {
            agents: vec![agent(0.0, 1.0, Controller::NoSafety)],
            dt: 0.05,
            max_steps: 100,
            seed: 0,
        };
        let bench = BenchmarkConfig { n_trials: 1, ..BenchmarkConfig::default() };
        let cfg = no_safety();
        let planning = Planning { config: &cfg, safety: None };
        let report = run_benchmark(&base, &bench, planning).unwrap();
        let trial = run_trial(&randomize_scenario(&base, &bench, bench.trial_seed(0)).unwrap(), planning).unwrap();
        assert_eq!(report.trials.len(), 1);
        assert_eq!(report.trials[0].success, trial.success);
        assert_eq!(report.trials[0].path_lengths, trial.path_lengths);
        assert_eq!(report.summary.success_rate, if trial.success { 100.0 } else { 0.0 });
        assert_eq!(report.summary.trials, 1);
    }

    #[test]
    fn outcomes_partition_the_trials() {
        let base = Scenario {
            agents: vec![agent(0.0, 1.0, Controller::NoSafety), agent(2.0, 3.0, Controller::NoSafety)],
            dt: 0.05,
            max_steps: 60,
            seed: 0,
        };
        let bench = BenchmarkConfig { n_trials: 12, ..BenchmarkConfig::default() };
        let cfg = no_safety();
        let report = run_benchmark(&base, &bench, Planning { config: &cfg, safety: None }).unwrap();
        let s = &report.summary;
        assert_eq!(s.successes + s.collisions + s.timeouts + s.planner_errors, s.trials);
    }
}
