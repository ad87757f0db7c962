//! Closed-form Hamiltonians against the sampling oracle, plus structural invariants.

#[path = "common/zoo.rs"]
mod zoo;

use manifold_reach::geometry::ManifoldConstraint;
use manifold_reach::hamiltonian::*;
use manifold_reach::Vector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoo::{constraint_zoo, ZOO_KINDS};

fn point_and_grad(c: &ManifoldConstraint, seed: u64) -> (Vector, Vector) {
    let x = c.sample(1, seed).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let g = Vector::from_fn(c.ambient_dim(), |_, _| rng.random_range(-2.0..2.0));
    (x, g)
}

#[test]
fn reach_closed_form_matches_brute_force() {
    let bounds = ControlBounds::new(1.3, 0.0).unwrap();
    for k in 0..1000u64 {
        let c = constraint_zoo(k as usize % ZOO_KINDS, k);
        let (x, g) = point_and_grad(&c, k);
        let p = c.tangent_projection(&x).unwrap();
        let exact = constrained_hamiltonian_reach(&g, &p, &bounds);
        let brute = brute_force_hamiltonian(&g, &c, &x, &bounds, HamiltonianMode::ReachMin, 10_000, k).unwrap();
        let scale = bounds.u_max * p.apply(&g).norm();
        assert!(
            (exact - brute).abs() <= 2e-3 * scale.max(1e-12),
            "case {k}: exact {exact} brute {brute}"
        );
        // Sampling can only under-optimise.
        assert!(brute >= exact - 1e-8 * scale.max(1.0));
    }
}

#[test]
fn game_closed_form_matches_brute_force() {
    let bounds = ControlBounds::new(1.0, 0.7).unwrap();
    for k in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let parts = if k % 2 == 0 {
            vec![
                ManifoldConstraint::circle(rng.random_range(0.2..1.0), [0.0, 0.0]).unwrap(),
                ManifoldConstraint::circle(rng.random_range(0.2..1.0), [0.3, -0.2]).unwrap(),
            ]
        } else {
            vec![
                ManifoldConstraint::sphere(rng.random_range(0.5..1.5), vec![0.0; 3]).unwrap(),
                ManifoldConstraint::sphere(rng.random_range(0.5..1.5), vec![0.1, 0.0, -0.1]).unwrap(),
            ]
        };
        let joint = ManifoldConstraint::product(parts.clone()).unwrap();
        let (x, g) = point_and_grad(&joint, k);
        let half = x.len() / 2;
        let (x1, x2) = (x.rows(0, half).into_owned(), x.rows(half, half).into_owned());
        let p1 = parts[0].tangent_projection(&x1).unwrap();
        let p2 = parts[1].tangent_projection(&x2).unwrap();
        let exact = constrained_hamiltonian_game(&g, &p1, &p2, &bounds);
        let brute = brute_force_hamiltonian(&g, &joint, &x, &bounds, HamiltonianMode::AvoidGame, 10_000, k).unwrap();
        let g1 = g.rows(0, half).into_owned();
        let g2 = g.rows(half, half).into_owned();
        let scale = bounds.u_max * p1.apply(&g1).norm() + bounds.d_max * p2.apply(&g2).norm();
        assert!(
            (exact - brute).abs() <= 2e-3 * scale.max(1e-12),
            "case {k}: exact {exact} brute {brute}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn reach_hamiltonian_is_nonpositive_and_positively_homogeneous(
        kind in 0..ZOO_KINDS, seed in any::<u64>(), alpha in 0.01f64..100.0, u_max in 0.1f64..5.0,
    ) {
        let c = constraint_zoo(kind, seed);
        let (x, g) = point_and_grad(&c, seed);
        let p = c.tangent_projection(&x).unwrap();
        let b = ControlBounds::new(u_max, 0.0).unwrap();
        let h = constrained_hamiltonian_reach(&g, &p, &b);
        prop_assert!(h <= 0.0);
        let scaled = constrained_hamiltonian_reach(&(&g * alpha), &p, &b);
        prop_assert!((scaled - alpha * h).abs() <= 1e-10 * (1.0 + alpha * h.abs()));
        let b2 = ControlBounds::new(u_max * alpha, 0.0).unwrap();
        let h2 = constrained_hamiltonian_reach(&g, &p, &b2);
        prop_assert!((h2 - alpha * h).abs() <= 1e-10 * (1.0 + alpha * h.abs()));
    }

    #[test]
    fn optimal_control_is_tangent_saturated_and_attains_h(kind in 0..ZOO_KINDS, seed in any::<u64>()) {
        let c = constraint_zoo(kind, seed);
        let (x, g) = point_and_grad(&c, seed);
        let p = c.tangent_projection(&x).unwrap();
        let b = ControlBounds::new(0.8, 0.0).unwrap();
        let s = optimal_control_reach(&g, &p, &b);
        prop_assume!(!s.degenerate);
        let j = c.jacobian(&x).unwrap();
        prop_assert!((j * &s.control).amax() <= 1e-8);
        prop_assert!((s.control.norm() - 0.8).abs() <= 1e-12);
        let h = constrained_hamiltonian_reach(&g, &p, &b);
        prop_assert!((g.dot(&s.control) - h).abs() <= 1e-10);
    }

    #[test]
    fn costate_derivative_matches_finite_differences(kind in 0..ZOO_KINDS, seed in any::<u64>()) {
        let c = constraint_zoo(kind, seed);
        let (x, g) = point_and_grad(&c, seed);
        let p = c.tangent_projection(&x).unwrap();
        let b = ControlBounds::new(1.0, 0.0).unwrap();
        prop_assume!(p.apply(&g).norm() > 1e-3);
        let (h, d) = hamiltonian_and_costate_derivative(HamiltonianMode::ReachMin, &g, std::slice::from_ref(&p), &b);
        prop_assert!((h - constrained_hamiltonian_reach(&g, &p, &b)).abs() <= 1e-14);
        let eps = 1e-6;
        for i in 0..g.len() {
            let mut gp = g.clone();
            gp[i] += eps;
            let mut gm = g.clone();
            gm[i] -= eps;
            let fd = (constrained_hamiltonian_reach(&gp, &p, &b) - constrained_hamiltonian_reach(&gm, &p, &b)) / (2.0 * eps);
            prop_assert!((fd - d[i]).abs() <= 1e-5, "component {}: fd {} analytic {}", i, fd, d[i]);
        }
    }
}

#[test]
fn game_controls_ascend_and_descend() {
    let c = ManifoldConstraint::circle(0.5, [0.0, 0.0]).unwrap();
    let x = Vector::from_vec(vec![0.5, 0.0]);
    let p = c.tangent_projection(&x).unwrap();
    let b = ControlBounds::new(1.0, 0.5).unwrap();
    let g = Vector::from_vec(vec![0.2, 0.6]);
    let u = safest_control(&g, &p, &b);
    let d = worst_case_disturbance(&g, &p, &b);
    assert!(g.dot(&u.control) > 0.0 && (u.control.norm() - 1.0).abs() < 1e-12);
    assert!(g.dot(&d.control) < 0.0 && (d.control.norm() - 0.5).abs() < 1e-12);
    // A purely normal gradient has no tangent component to follow.
    let normal = Vector::from_vec(vec![3.0, 0.0]);
    assert!(safest_control(&normal, &p, &b).degenerate);
    assert_eq!(constrained_hamiltonian_reach(&normal, &p, &b), 0.0);
}
