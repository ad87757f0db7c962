//! Constrained Hamiltonians for velocity-controlled systems `ẋ = u`, `‖u‖ ≤ ū`.
//!
//! With the tangent projector `P(x)` the constrained minimisation collapses to
//! `H = -ū ‖P ∇V‖` with minimizer `u* = -ū P∇V / ‖P∇V‖`. In the pairwise game the
//! ego maximises the safety value and the adversary minimises it, each restricted
//! to its own manifold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{ManifoldConstraint, ProjectionMatrix};
use crate::{ReachError, Result, Vector};

/// Projected gradients with norm at or below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBounds {
    /// Bound on the ego speed `‖u‖₂`.
    pub u_max: f64,
    /// Bound on the adversary speed `‖d‖₂`; zero for single-agent problems.
    #[serde(default)]
    pub d_max: f64,
}

impl ControlBounds {
    pub fn new(u_max: f64, d_max: f64) -> Result<Self> {
        let b = ControlBounds { u_max, d_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_max.is_finite() && self.u_max > 0.0) {
            return Err(ReachError::invalid(format!("u_max must be positive, got {}", self.u_max)));
        }
        if !(self.d_max.is_finite() && self.d_max >= 0.0) {
            return Err(ReachError::invalid(format!(
                "d_max must be nonnegative, got {}",
                self.d_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianMode {
    /// Single agent, `min_u ⟨∇V, u⟩`.
    ReachMin,
    /// Ego maximises, adversary minimises: `max_u min_d ⟨∇V, (u, d)⟩`.
    AvoidGame,
}

/// A bounded control (or disturbance) together with a degeneracy flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Steering {
    pub control: Vector,
    /// The projected gradient vanished; `control` is zero.
    pub degenerate: bool,
}

/// `-ū ‖P ∇V‖₂`.
pub fn constrained_hamiltonian_reach(grad: &Vector, proj: &ProjectionMatrix, bounds: &ControlBounds) -> f64 {
    -bounds.u_max * proj.apply(grad).norm()
}

/// Minimizer of the reach Hamiltonian; zero with `degenerate` set when `P∇V = 0`.
pub fn optimal_control_reach(grad: &Vector, proj: &ProjectionMatrix, bounds: &ControlBounds) -> Steering {
    steer(grad, proj, -bounds.u_max)
}

/// `ū ‖P₁∇₁V‖ - d̄ ‖P₂∇₂V‖` for a joint gradient `(∇₁V, ∇₂V)`.
pub fn constrained_hamiltonian_game(
    grad_joint: &Vector,
    proj_ego: &ProjectionMatrix,
    proj_adv: &ProjectionMatrix,
    bounds: &ControlBounds,
) -> f64 {
    let (g1, g2) = split_joint(grad_joint, proj_ego.dim());
    bounds.u_max * proj_ego.apply(&g1).norm() - bounds.d_max * proj_adv.apply(&g2).norm()
}

/// The adversary velocity that descends the safety value fastest, `-d̄ P₂∇₂V / ‖P₂∇₂V‖`.
pub fn worst_case_disturbance(grad_adv: &Vector, proj_adv: &ProjectionMatrix, bounds: &ControlBounds) -> Steering {
    steer(grad_adv, proj_adv, -bounds.d_max)
}

/// The ego velocity that ascends the safety value fastest, `+ū P₁∇₁V / ‖P₁∇₁V‖`.
pub fn safest_control(grad_ego: &Vector, proj_ego: &ProjectionMatrix, bounds: &ControlBounds) -> Steering {
    steer(grad_ego, proj_ego, bounds.u_max)
}

fn steer(grad: &Vector, proj: &ProjectionMatrix, scale: f64) -> Steering {
    let pg = proj.apply(grad);
    let n = pg.norm();
    if n <= DEGENERATE_NORM || scale == 0.0 {
        Steering {
            control: Vector::zeros(grad.len()),
            degenerate: true,
        }
    } else {
        Steering {
            control: pg * (scale / n),
            degenerate: false,
        }
    }
}

pub(crate) fn split_joint(grad: &Vector, ego_dim: usize) -> (Vector, Vector) {
    let g1 = grad.rows(0, ego_dim).into_owned();
    let g2 = grad.rows(ego_dim, grad.len() - ego_dim).into_owned();
    (g1, g2)
}

/// Hamiltonian value and its derivative with respect to the spatial gradient.
///
/// `projections` holds one projector per agent block (one for `ReachMin`, two for
/// `AvoidGame`). Where a projected block gradient vanishes the derivative of its
/// norm is taken as zero.
pub fn hamiltonian_and_costate_derivative(
    mode: HamiltonianMode,
    grad: &Vector,
    projections: &[ProjectionMatrix],
    bounds: &ControlBounds,
) -> (f64, Vector) {
    match mode {
        HamiltonianMode::ReachMin => {
            let (n, d) = norm_and_derivative(grad, &projections[0]);
            (-bounds.u_max * n, d * -bounds.u_max)
        }
        HamiltonianMode::AvoidGame => {
            let ego_dim = projections[0].dim();
            let (g1, g2) = split_joint(grad, ego_dim);
            let (n1, d1) = norm_and_derivative(&g1, &projections[0]);
            let (n2, d2) = norm_and_derivative(&g2, &projections[1]);
            let mut d = Vector::zeros(grad.len());
            d.rows_mut(0, ego_dim).copy_from(&(d1 * bounds.u_max));
            d.rows_mut(ego_dim, grad.len() - ego_dim)
                .copy_from(&(d2 * -bounds.d_max));
            (bounds.u_max * n1 - bounds.d_max * n2, d)
        }
    }
}

// ‖P g‖ and d‖P g‖/dg = Pᵀ P g / ‖P g‖.
fn norm_and_derivative(g: &Vector, proj: &ProjectionMatrix) -> (f64, Vector) {
    let pg = proj.apply(g);
    let n = pg.norm();
    if n <= DEGENERATE_NORM {
        (n, Vector::zeros(g.len()))
    } else {
        (n, proj.matrix.transpose() * pg / n)
    }
}

/// Sampling oracle for the constrained Hamiltonian.
///
/// Draws `samples` Gaussian directions in the ambient space, projects them onto
/// the tangent space at `x`, rescales each agent block to its speed bound and
/// optimises `⟨∇V, ·⟩` over the resulting candidate set. In `AvoidGame` mode the
/// constraint must be the joint manifold whose first half of coordinates belongs
/// to the ego; the two players are optimised independently since the objective
/// separates.
pub fn brute_force_hamiltonian(
    grad: &Vector,
    constraint: &ManifoldConstraint,
    x: &Vector,
    bounds: &ControlBounds,
    mode: HamiltonianMode,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 100 {
        return Err(ReachError::invalid("brute-force Hamiltonian needs at least 100 samples"));
    }
    let n = constraint.ambient_dim();
    if grad.len() != n || x.len() != n {
        return Err(ReachError::invalid("gradient and state must match the ambient dimension"));
    }
    let proj = constraint.tangent_projection(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |len: usize| Vector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));

    match mode {
        HamiltonianMode::ReachMin => {
            let mut best = 0.0f64;
            let mut any = false;
            for _ in 0..samples {
                let v = proj.apply(&draw(n));
                let vn = v.norm();
                if vn <= DEGENERATE_NORM {
                    continue;
                }
                let val = grad.dot(&v) * bounds.u_max / vn;
                best = if any { best.min(val) } else { val };
                any = true;
            }
            Ok(best)
        }
        HamiltonianMode::AvoidGame => {
            if n % 2 != 0 {
                return Err(ReachError::invalid("game mode needs an even joint dimension"));
            }
            let half = n / 2;
            let (g1, g2) = split_joint(grad, half);
            let mut ego_best: Option<f64> = None;
            let mut adv_best: Option<f64> = None;
            for _ in 0..samples {
                let v = proj.apply(&draw(n));
                let (v1, v2) = split_joint(&v, half);
                let (n1, n2) = (v1.norm(), v2.norm());
                if n1 > DEGENERATE_NORM {
                    let val = g1.dot(&v1) * bounds.u_max / n1;
                    ego_best = Some(ego_best.map_or(val, |b| b.max(val)));
                }
                if n2 > DEGENERATE_NORM {
                    let val = g2.dot(&v2) * bounds.d_max / n2;
                    adv_best = Some(adv_best.map_or(val, |b| b.min(val)));
                }
            }
            Ok(ego_best.unwrap_or(0.0) + adv_best.unwrap_or(0.0))
        }
    }
}
