//! Finite-difference and re-implementation oracles for the value network.

mod common;

use common::{fd_input_errors, fd_loss_errors, reference_forward, random_arch};
use manifold_reach::trainer::ReachabilityProblem;
use manifold_reach::value_net::{forward, forward_with_input_grad, init_network, NetworkArchitecture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_matches_straight_line_reevaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..50 {
        let arch = random_arch(&mut rng);
        let params = init_network(&arch, case).unwrap();
        let z: Vec<f64> = (0..arch.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = forward(&params, &arch, z[0], &z[1..]).unwrap();
        let r = reference_forward(&params.0, &arch, &z);
        assert!((v - r).abs() <= 1e-12 * r.abs().max(1.0), "case {case}: {v} vs {r}");
    }
}

#[test]
fn input_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let worst = fd_input_errors(&mut rng, 100);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn single_sine_layer_gradient_is_hand_computable() {
    // One hidden unit layer of width 4 with only unit 0 active in the head:
    // V = a sin(ω (w·z + b)) + c, so ∂V/∂z = a ω cos(ω(w·z + b)) w.
    let arch = NetworkArchitecture {
        input_dim: 2,
        hidden_layers: 1,
        hidden_width: 4,
        first_omega: 2.0,
        hidden_omega: 1.0,
    };
    let mut p = init_network(&arch, 0).unwrap();
    let w = [0.3, -0.7];
    let b = 0.1;
    let (a, c) = (1.5, -0.2);
    p.0.iter_mut().for_each(|v| *v = 0.0);
    p.0[0] = w[0];
    p.0[1] = w[1];
    p.0[8] = b;
    p.0[12] = a;
    p.0[16] = c;
    let z = [0.4, -0.25];
    let g = forward_with_input_grad(&p, &arch, z[0], &z[1..]).unwrap();
    let pre = 2.0 * (w[0] * z[0] + w[1] * z[1] + b);
    assert!((g.value - (a * pre.sin() + c)).abs() < 1e-15);
    assert!((g.dv_dt - a * 2.0 * pre.cos() * w[0]).abs() < 1e-15);
    assert!((g.dv_dx[0] - a * 2.0 * pre.cos() * w[1]).abs() < 1e-15);
}

#[test]
fn loss_gradient_matches_central_differences_reach() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let problem = ReachabilityProblem::circle_reach(std::f64::consts::FRAC_PI_2, true);
    let worst = fd_loss_errors(&mut rng, &problem, 10);
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn loss_gradient_matches_central_differences_game() {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let problem = ReachabilityProblem::circle_pair_game(0.5, 0.05, 1.0);
    let worst = fd_loss_errors(&mut rng, &problem, 5);
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn loss_gradient_matches_central_differences_unconstrained() {
    let mut rng = ChaCha8Rng::seed_from_u64(302);
    let problem = ReachabilityProblem::circle_reach(std::f64::consts::FRAC_PI_2, false);
    let worst = fd_loss_errors(&mut rng, &problem, 5);
    assert!(worst <= 1e-3, "worst relative error {worst}");
}
