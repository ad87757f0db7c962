//! Planner and closed-loop behaviour against a trained pairwise safety value.

use std::sync::OnceLock;

use manifold_reach::geometry::ManifoldConstraint;
use manifold_reach::planner::*;
use manifold_reach::simulator::*;
use manifold_reach::trainer::{train, ReachabilityProblem, TrainConfig};
use manifold_reach::value_net::{NetworkArchitecture, ValueNetwork};
use manifold_reach::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem() -> &'static ReachabilityProblem {
    static P: OnceLock<ReachabilityProblem> = OnceLock::new();
    P.get_or_init(|| ReachabilityProblem::circle_pair_game(0.5, 0.05, 1.0))
}

fn game_net() -> &'static ValueNetwork {
    static NET: OnceLock<ValueNetwork> = OnceLock::new();
    NET.get_or_init(|| {
        let cfg = TrainConfig {
            steps: 10_000,
            ..TrainConfig::default()
        };
        train(problem(), &NetworkArchitecture::new(5), &cfg).unwrap().network
    })
}

fn safety() -> SafetyModel<'static> {
    SafetyModel::new(problem(), game_net()).unwrap()
}

fn circle() -> ManifoldConstraint {
    ManifoldConstraint::circle(0.5, [0.0, 0.0]).unwrap()
}

fn at(theta: f64) -> Vector {
    Vector::from_vec(vec![0.5 * theta.cos(), 0.5 * theta.sin()])
}

fn arc(a: &Vector, b: &Vector) -> f64 {
    circle().geodesic_distance(a, b).unwrap()
}

#[test]
fn lone_agent_makes_geodesic_progress() {
    let c = circle();
    let agent = AgentModel { constraint: &c, u_max: 1.0 };
    let (ego, goal) = (at(0.0), at(1.5));
    let r = plan_step(&ego, &[], &goal, agent, Some(safety()), &PlanConfig::default(), None).unwrap();
    assert_eq!(r.status, PlanStatus::Optimal);
    assert!(arc(r.states.last().unwrap(), &goal) < arc(&ego, &goal));
    assert!(r.min_safety_value.is_none());
}

#[test]
fn head_on_plan_keeps_the_safety_margin() {
    let c = circle();
    let agent = AgentModel { constraint: &c, u_max: 1.0 };
    let cfg = PlanConfig::default();
    let r = plan_step(&at(0.0), &[at(1.0)], &at(1.3), agent, Some(safety()), &cfg, None).unwrap();
    assert_ne!(r.status, PlanStatus::FailSafe);
    assert!(r.min_safety_value.unwrap() > cfg.epsilon, "{:?}", r.min_safety_value);
}

#[test]
fn unreachable_margin_falls_back_to_failsafe() {
    let c = circle();
    let agent = AgentModel { constraint: &c, u_max: 1.0 };
    let cfg = PlanConfig {
        epsilon: 10.0,
        ..PlanConfig::default()
    };
    let r = plan_step(&at(0.0), &[at(1.0)], &at(1.3), agent, Some(safety()), &cfg, None).unwrap();
    assert_eq!(r.status, PlanStatus::FailSafe);
    let fs = failsafe_control(&at(0.0), &[at(1.0)], agent, safety(), &cfg).unwrap();
    assert!((r.controls[0].clone() - fs.control).norm() <= 1e-12);
}

#[test]
fn failsafe_ascends_the_safety_value() {
    let c = circle();
    let agent = AgentModel { constraint: &c, u_max: 1.0 };
    let cfg = PlanConfig::default();
    let s = safety();
    let tau = problem().horizon - cfg.safety_lookahead();
    for (ego, other) in [(0.0, 0.4), (0.0, -0.4), (1.0, 1.3), (2.0, 1.75)] {
        let (ego, other) = (at(ego), at(other));
        let fs = failsafe_control(&ego, std::slice::from_ref(&other), agent, s, &cfg).unwrap();
        assert!(!fs.degenerate && !fs.not_applicable);
        assert!((fs.control.norm() - 1.0).abs() <= 1e-9);
        let j = c.jacobian(&ego).unwrap();
        assert!((j * &fs.control).amax() <= 1e-9);
        let next = c.retract(&(&ego + &fs.control * cfg.dt)).unwrap();
        let (before, _, _) = s.evaluate(tau, &ego, &other).unwrap();
        let (after, _, _) = s.evaluate(tau, &next, &other).unwrap();
        assert!(after >= before - 1e-3, "{before} -> {after}");
    }
    let alone = failsafe_control(&at(0.0), &[], agent, s, &cfg).unwrap();
    assert!(alone.not_applicable && alone.control.norm() == 0.0);
}

#[test]
fn plans_respect_bounds_manifold_and_margins() {
    let c = circle();
    let agent = AgentModel { constraint: &c, u_max: 1.0 };
    let cfg = PlanConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let e = rng.random_range(-3.0..3.0);
        let o = e + rng.random_range(0.5..2.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let g = e + rng.random_range(-2.0..2.0);
        let r = plan_step(&at(e), &[at(o)], &at(g), agent, Some(safety()), &cfg, None).unwrap();
        assert_eq!(r.controls.len(), cfg.steps());
        for u in &r.controls {
            assert!(u.norm() <= 1.0 + 1e-9);
        }
        for x in &r.states {
            assert!(c.residual_norm(x).unwrap() <= 1e-6);
        }
        if r.status != PlanStatus::FailSafe {
            assert!(r.min_safety_value.unwrap() > cfg.epsilon);
        }
    }
}

#[test]
fn warm_started_replanning_settles() {
    let c = circle();
    let agent = AgentModel { constraint: &c, u_max: 1.0 };
    let mut planner = RecedingHorizonPlanner::new(PlanConfig::default());
    let (ego, other, goal) = (at(0.0), at(1.2), at(0.9));
    let mut last: Option<Vec<Vector>> = None;
    let mut change = f64::INFINITY;
    for _ in 0..4 {
        let r = planner.plan(&ego, std::slice::from_ref(&other), &goal, agent, Some(safety())).unwrap();
        if let Some(prev) = &last {
            // The warm start is shifted by one step; compare like with like.
            let fresh = plan_step(&ego, std::slice::from_ref(&other), &goal, agent, Some(safety()), &planner.config, Some(prev))
                .unwrap();
            change = r
                .controls
                .iter()
                .zip(&fresh.controls)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
        }
        last = Some(r.controls);
    }
    assert!(change <= 1e-6, "{change}");
}

fn agent_spec(start: f64, goal: f64, controller: Controller) -> AgentSpec {
    AgentSpec {
        constraint: circle(),
        start: at(start).as_slice().to_vec(),
        goal: at(goal).as_slice().to_vec(),
        radius: 0.05,
        u_max: 1.0,
        controller,
    }
}

fn head_on(controller: Controller) -> Scenario {
    Scenario {
        agents: vec![agent_spec(0.0, 1.3, controller.clone()), agent_spec(2.4, 1.9, controller)],
        dt: 0.05,
        max_steps: 200,
        seed: 0,
    }
}

#[test]
fn head_on_trial_succeeds_with_a_detour() {
    let cfg = PlanConfig::default();
    let planning = Planning { config: &cfg, safety: Some(safety()) };
    let r = run_trial(&head_on(Controller::Hammar), planning).unwrap();
    assert!(r.success && !r.collision, "{:?}", (r.success, r.collision, r.steps));
    assert!(r.max_manifold_residual <= 1e-6);
    let detours: Vec<f64> = r
        .path_lengths
        .iter()
        .zip(&r.start_goal_geodesic)
        .map(|(pl, g)| pl - g)
        .collect();
    assert!(detours.iter().any(|d| *d > 0.02), "{detours:?}");
    for (pl, g) in r.path_lengths.iter().zip(&r.start_final_geodesic) {
        assert!(pl >= &(g - 1e-6));
    }
    // Identical inputs give an identical record apart from timings.
    let again = run_trial(&head_on(Controller::Hammar), planning).unwrap();
    assert_eq!(again.path_lengths, r.path_lengths);
    assert_eq!(again.steps, r.steps);
}

#[test]
fn paired_small_benchmark_favours_the_safety_constraint() {
    let cfg = PlanConfig::default();
    let planning = Planning { config: &cfg, safety: Some(safety()) };
    let bench = BenchmarkConfig { n_trials: 20, seed: 11, ..BenchmarkConfig::default() };
    let base = head_on(Controller::Hammar);
    let safe = run_benchmark(&base, &bench, planning).unwrap();
    let unsafe_ = run_benchmark(&base.with_controller(Controller::NoSafety), &bench, planning).unwrap();
    for (a, b) in safe.trials.iter().zip(&unsafe_.trials) {
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.start_goal_geodesic, b.start_goal_geodesic);
    }
    assert!(unsafe_.summary.collisions > 0);
    assert!(safe.summary.collisions < unsafe_.summary.collisions);
    for s in [&safe.summary, &unsafe_.summary] {
        assert_eq!(s.successes + s.collisions + s.timeouts + s.planner_errors, s.trials);
    }
}
