use manifold_reach::geometry::ManifoldConstraint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One of every built-in constraint kind with randomized parameters.
pub fn constraint_zoo(kind: usize, seed: u64) -> ManifoldConstraint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match kind % 6 {
        0 => ManifoldConstraint::circle(r(0.2, 2.0), [r(-1.0, 1.0), r(-1.0, 1.0)]).unwrap(),
        1 => ManifoldConstraint::sphere(r(0.2, 2.0), vec![r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0)]).unwrap(),
        2 => ManifoldConstraint::sphere(r(0.5, 1.5), vec![r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0)])
            .unwrap(),
        3 => {
            let a = vec![r(-1.0, 1.0), r(-1.0, 1.0), r(0.5, 1.0), r(-1.0, 1.0)];
            let b = vec![r(0.5, 1.0), r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0)];
            ManifoldConstraint::affine(vec![a, b], vec![r(-1.0, 1.0), r(-1.0, 1.0)]).unwrap()
        }
        4 => ManifoldConstraint::product(vec![
            ManifoldConstraint::circle(r(0.2, 1.0), [r(-1.0, 1.0), r(-1.0, 1.0)]).unwrap(),
            ManifoldConstraint::circle(r(0.2, 1.0), [r(-1.0, 1.0), r(-1.0, 1.0)]).unwrap(),
        ])
        .unwrap(),
        _ => ManifoldConstraint::product(vec![
            ManifoldConstraint::sphere(r(0.5, 1.5), vec![r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0)]).unwrap(),
            ManifoldConstraint::affine(vec![vec![r(0.5, 1.0), r(-1.0, 1.0)]], vec![r(-1.0, 1.0)]).unwrap(),
        ])
        .unwrap(),
    }
}

pub const ZOO_KINDS: usize = 6;
