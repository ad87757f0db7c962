//! Equality-constraint manifolds `M = {x | C(x) = 0}`.
//!
//! Every built-in constraint kind provides a closed-form Jacobian. The tangent
//! projector `P(x) = I - J^T (J J^T)^{-1} J` and a Gauss-Newton retraction are
//! derived from it, so the same `J` drives both the Hamiltonian and the planner's
//! rollouts.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Matrix, ReachError, Result, Vector};

/// Central finite-difference step used for numerical Jacobians.
pub const FD_STEP: f64 = 1e-6;
/// Singular values of `J_C` below this trigger Tikhonov regularization.
pub const RANK_TOLERANCE: f64 = 1e-8;
/// Tikhonov term added to `J_C J_C^T` when it is (near) singular.
pub const TIKHONOV: f64 = 1e-10;
/// Points farther than this from `M` are rejected by [`ManifoldConstraint::tangent_projection`].
pub const PROJECTION_BASIN: f64 = 1e-3;

const CENTER_EPS: f64 = 1e-12;

/// A block of a [`ConstraintKind::Product`]: `constraint` acts on coordinates
/// `start .. start + constraint.ambient_dim()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductPart {
    pub constraint: ManifoldConstraint,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintKind {
    /// `‖x - center‖ - radius = 0` in the plane.
    Circle { radius: f64, center: [f64; 2] },
    /// `‖x - center‖ - radius = 0` in `R^n`, `n = center.len() ≥ 2`.
    Sphere { radius: f64, center: Vec<f64> },
    /// `A x - b = 0` with one row of `A` per constraint.
    AffinePlane {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
    /// Block-diagonal composition. Coordinates not covered by any part are free.
    Product {
        parts: Vec<ProductPart>,
        ambient_dim: usize,
    },
}

/// An equality-constraint system `C: R^{n_d} -> R^{n_c}`, `0 < n_c < n_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintKind", into = "ConstraintKind")]
pub struct ManifoldConstraint {
    kind: ConstraintKind,
    n_d: usize,
    n_c: usize,
}

impl TryFrom<ConstraintKind> for ManifoldConstraint {
    type Error = ReachError;

    fn try_from(kind: ConstraintKind) -> Result<Self> {
        ManifoldConstraint::new(kind)
    }
}

impl From<ManifoldConstraint> for ConstraintKind {
    fn from(c: ManifoldConstraint) -> Self {
        c.kind
    }
}

/// Orthogonal projector onto the tangent space at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub matrix: Matrix,
    /// `J_C J_C^T` had to be regularized.
    pub rank_deficient: bool,
}

impl ProjectionMatrix {
    pub fn identity(n: usize) -> Self {
        ProjectionMatrix {
            matrix: Matrix::identity(n, n),
            rank_deficient: false,
        }
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.matrix * v
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Knobs for [`ManifoldConstraint::retract`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetractOptions {
    /// Inputs with `‖C(x)‖` above this are rejected.
    pub basin: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RetractOptions {
    fn default() -> Self {
        RetractOptions {
            basin: 0.25,
            tolerance: 1e-10,
            max_iterations: 50,
        }
    }
}

impl ManifoldConstraint {
    pub fn new(kind: ConstraintKind) -> Result<Self> {
        let (n_d, n_c) = match &kind {
            ConstraintKind::Circle { radius, center } => {
                check_radius(*radius)?;
                check_finite(center, "circle center")?;
                (2, 1)
            }
            ConstraintKind::Sphere { radius, center } => {
                check_radius(*radius)?;
                check_finite(center, "sphere center")?;
                if center.len() < 2 {
                    return Err(ReachError::invalid("sphere center needs at least 2 coordinates"));
                }
                (center.len(), 1)
            }
            ConstraintKind::AffinePlane { normals, offsets } => {
                if normals.is_empty() || normals.len() != offsets.len() {
                    return Err(ReachError::invalid(
                        "affine plane needs one offset per normal row and at least one row",
                    ));
                }
                let n_d = normals[0].len();
                if normals.iter().any(|row| row.len() != n_d) {
                    return Err(ReachError::invalid("affine plane normal rows differ in length"));
                }
                for row in normals {
                    check_finite(row, "affine plane normal")?;
                }
                check_finite(offsets, "affine plane offsets")?;
                (n_d, normals.len())
            }
            ConstraintKind::Product { parts, ambient_dim } => {
                if parts.is_empty() {
                    return Err(ReachError::invalid("product constraint has no parts"));
                }
                let mut covered = vec![false; *ambient_dim];
                let mut n_c = 0;
                for part in parts {
                    let end = part.start + part.constraint.n_d;
                    if end > *ambient_dim {
                        return Err(ReachError::invalid(format!(
                            "product part range {}..{end} exceeds ambient dimension {ambient_dim}",
                            part.start
                        )));
                    }
                    for slot in &mut covered[part.start..end] {
                        if *slot {
                            return Err(ReachError::invalid("product part ranges overlap"));
                        }
                        *slot = true;
                    }
                    n_c += part.constraint.n_c;
                }
                (*ambient_dim, n_c)
            }
        };
        if n_c == 0 || n_c >= n_d {
            return Err(ReachError::invalid(format!(
                "need 0 < n_c < n_d, got n_c = {n_c}, n_d = {n_d}"
            )));
        }
        Ok(ManifoldConstraint { kind, n_d, n_c })
    }

    pub fn circle(radius: f64, center: [f64; 2]) -> Result<Self> {
        Self::new(ConstraintKind::Circle { radius, center })
    }

    pub fn sphere(radius: f64, center: Vec<f64>) -> Result<Self> {
        Self::new(ConstraintKind::Sphere { radius, center })
    }

    pub fn affine(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        Self::new(ConstraintKind::AffinePlane { normals, offsets })
    }

    /// Stacks the given constraints on consecutive coordinate blocks.
    pub fn product(constraints: Vec<ManifoldConstraint>) -> Result<Self> {
        let mut start = 0;
        let parts = constraints
            .into_iter()
            .map(|constraint| {
                let part = ProductPart { start, constraint };
                start += part.constraint.n_d;
                part
            })
            .collect();
        Self::new(ConstraintKind::Product {
            parts,
            ambient_dim: start,
        })
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn ambient_dim(&self) -> usize {
        self.n_d
    }

    pub fn constraint_count(&self) -> usize {
        self.n_c
    }

    /// All built-in kinds carry a closed-form Jacobian.
    pub fn analytic_jacobian(&self) -> bool {
        true
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.n_d {
            return Err(ReachError::invalid(format!(
                "expected a point of dimension {}, got {}",
                self.n_d,
                x.len()
            )));
        }
        Ok(())
    }

    /// `C(x)`.
    pub fn evaluate(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        let mut out = Vector::zeros(self.n_c);
        self.evaluate_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `‖C(x)‖₂`.
    pub fn residual_norm(&self, x: &Vector) -> Result<f64> {
        Ok(self.evaluate(x)?.norm())
    }

    fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ConstraintKind::Circle { radius, center } => {
                out[0] = dist(x, center) - radius;
            }
            ConstraintKind::Sphere { radius, center } => {
                out[0] = dist(x, center) - radius;
            }
            ConstraintKind::AffinePlane { normals, offsets } => {
                for (i, (row, b)) in normals.iter().zip(offsets).enumerate() {
                    out[i] = dot(row, x) - b;
                }
            }
            ConstraintKind::Product { parts, .. } => {
                let mut row = 0;
                for part in parts {
                    let c = &part.constraint;
                    c.evaluate_into(
                        &x[part.start..part.start + c.n_d],
                        &mut out[row..row + c.n_c],
                    );
                    row += c.n_c;
                }
            }
        }
    }

    /// Analytic `J_C(x)`, one row per constraint.
    pub fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        self.check_dim(x)?;
        let mut out = Matrix::zeros(self.n_c, self.n_d);
        self.jacobian_into(x.as_slice(), &mut out, 0, 0)?;
        Ok(out)
    }

    fn jacobian_into(&self, x: &[f64], out: &mut Matrix, row0: usize, col0: usize) -> Result<()> {
        match &self.kind {
            ConstraintKind::Circle { center, .. } => radial_row(x, center, out, row0, col0),
            ConstraintKind::Sphere { center, .. } => radial_row(x, center, out, row0, col0),
            ConstraintKind::AffinePlane { normals, .. } => {
                for (i, n) in normals.iter().enumerate() {
                    for (j, v) in n.iter().enumerate() {
                        out[(row0 + i, col0 + j)] = *v;
                    }
                }
                Ok(())
            }
            ConstraintKind::Product { parts, .. } => {
                let mut row = row0;
                for part in parts {
                    let c = &part.constraint;
                    c.jacobian_into(
                        &x[part.start..part.start + c.n_d],
                        out,
                        row,
                        col0 + part.start,
                    )?;
                    row += c.n_c;
                }
                Ok(())
            }
        }
    }

    /// Central finite-difference Jacobian with step [`FD_STEP`].
    pub fn finite_difference_jacobian(&self, x: &Vector) -> Result<Matrix> {
        self.check_dim(x)?;
        let mut out = Matrix::zeros(self.n_c, self.n_d);
        let mut probe = x.clone();
        for j in 0..self.n_d {
            probe[j] = x[j] + FD_STEP;
            let plus = self.evaluate(&probe)?;
            probe[j] = x[j] - FD_STEP;
            let minus = self.evaluate(&probe)?;
            probe[j] = x[j];
            out.set_column(j, &((plus - minus) / (2.0 * FD_STEP)));
        }
        Ok(out)
    }

    /// Tangent-space projector at `x`. Requires `‖C(x)‖ ≤ 1e-3`.
    pub fn tangent_projection(&self, x: &Vector) -> Result<ProjectionMatrix> {
        let residual = self.residual_norm(x)?;
        if residual > PROJECTION_BASIN {
            return Err(ReachError::Precondition(format!(
                "tangent projection requested {residual:.3e} away from the manifold"
            )));
        }
        let j = self.jacobian(x)?;
        Ok(projection_from_jacobian(&j))
    }

    /// Gauss-Newton normal-flow projection back onto `M` with default options.
    pub fn retract(&self, x: &Vector) -> Result<Vector> {
        self.retract_with(x, &RetractOptions::default())
    }

    pub fn retract_with(&self, x: &Vector, opts: &RetractOptions) -> Result<Vector> {
        let mut y = x.clone();
        let mut c = self.evaluate(&y)?;
        let start = c.norm();
        if !start.is_finite() || start > opts.basin {
            return Err(ReachError::Precondition(format!(
                "retraction start point is {start:.3e} from the manifold (basin {:.3e})",
                opts.basin
            )));
        }
        for _ in 0..opts.max_iterations {
            if c.norm() <= opts.tolerance {
                return Ok(y);
            }
            let j = self.jacobian(&y)?;
            let gram = &j * j.transpose();
            let step = gram
                .lu()
                .solve(&c)
                .ok_or_else(|| ReachError::Singularity("J_C J_C^T is singular during retraction".into()))?;
            y -= j.transpose() * step;
            c = self.evaluate(&y)?;
        }
        let residual = c.norm();
        if residual <= opts.tolerance {
            Ok(y)
        } else {
            Err(ReachError::RetractionFailure {
                iterations: opts.max_iterations,
                residual,
            })
        }
    }

    /// Axis-aligned box `(lo, hi)` that contains the manifold (or, for unbounded
    /// kinds, a unit-size neighbourhood of its point closest to the origin).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            ConstraintKind::Circle { radius, center } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            ConstraintKind::Sphere { radius, center } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            ConstraintKind::AffinePlane { .. } => {
                let anchor = self.affine_anchor();
                (
                    anchor.iter().map(|a| a - 1.0).collect(),
                    anchor.iter().map(|a| a + 1.0).collect(),
                )
            }
            ConstraintKind::Product { parts, ambient_dim } => {
                let mut lo = vec![-1.0; *ambient_dim];
                let mut hi = vec![1.0; *ambient_dim];
                for part in parts {
                    let (plo, phi) = part.constraint.bounding_box();
                    lo[part.start..part.start + plo.len()].copy_from_slice(&plo);
                    hi[part.start..part.start + phi.len()].copy_from_slice(&phi);
                }
                (lo, hi)
            }
        }
    }

    // Minimum-norm solution of A x = b.
    fn affine_anchor(&self) -> Vec<f64> {
        let ConstraintKind::AffinePlane { normals, offsets } = &self.kind else {
            unreachable!("affine_anchor on non-affine constraint");
        };
        let a = Matrix::from_fn(normals.len(), self.n_d, |i, j| normals[i][j]);
        let b = Vector::from_column_slice(offsets);
        let gram = &a * a.transpose() + Matrix::identity(self.n_c, self.n_c) * TIKHONOV;
        match gram.lu().solve(&b) {
            Some(y) => (a.transpose() * y).as_slice().to_vec(),
            None => vec![0.0; self.n_d],
        }
    }

    /// Draws `count` points on `M`, deterministic in `seed`.
    ///
    /// Circles and spheres are sampled uniformly in their intrinsic measure; other
    /// kinds sample the bounding box and retract. Products sample each block with
    /// its own rule and fill free coordinates from the box.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vector>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(count, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Vector>> {
        if count == 0 {
            return Err(ReachError::invalid("sample count must be at least 1"));
        }
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vector> {
        let mut out = vec![0.0; self.n_d];
        self.sample_into(rng, &mut out)?;
        Ok(Vector::from_vec(out))
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match &self.kind {
            ConstraintKind::Circle { radius, center } => {
                let theta = rng.random_range(0.0..2.0 * PI);
                out[0] = center[0] + radius * theta.cos();
                out[1] = center[1] + radius * theta.sin();
            }
            ConstraintKind::Sphere { radius, center } => loop {
                for o in out.iter_mut() {
                    *o = rng.sample(StandardNormal);
                }
                let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-9 {
                    for (o, c) in out.iter_mut().zip(center) {
                        *o = c + radius * *o / n;
                    }
                    break;
                }
            },
            ConstraintKind::AffinePlane { .. } => {
                let (lo, hi) = self.bounding_box();
                let opts = RetractOptions {
                    basin: f64::INFINITY,
                    ..RetractOptions::default()
                };
                let mut last = None;
                for _ in 0..10 {
                    let probe = Vector::from_iterator(
                        self.n_d,
                        lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)),
                    );
                    match self.retract_with(&probe, &opts) {
                        Ok(y) => {
                            out.copy_from_slice(y.as_slice());
                            return Ok(());
                        }
                        Err(e) => last = Some(e),
                    }
                }
                return Err(ReachError::Sampling(format!(
                    "10 consecutive retraction failures; last: {}",
                    last.map(|e| e.to_string()).unwrap_or_default()
                )));
            }
            ConstraintKind::Product { parts, ambient_dim } => {
                let mut covered = vec![false; *ambient_dim];
                for part in parts {
                    let c = &part.constraint;
                    c.sample_into(rng, &mut out[part.start..part.start + c.n_d])?;
                    covered[part.start..part.start + c.n_d].fill(true);
                }
                let (lo, hi) = self.bounding_box();
                for i in (0..*ambient_dim).filter(|i| !covered[*i]) {
                    out[i] = rng.random_range(lo[i]..hi[i]);
                }
            }
        }
        Ok(())
    }

    /// Intrinsic distance between two points of `M`: arc length on circles and
    /// spheres, Euclidean on affine planes, block-wise root-sum-square on products.
    pub fn geodesic_distance(&self, a: &Vector, b: &Vector) -> Result<f64> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        Ok(self.geodesic_slices(a.as_slice(), b.as_slice()))
    }

    fn geodesic_slices(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.kind {
            ConstraintKind::Circle { radius, center } => arc(a, b, center, *radius),
            ConstraintKind::Sphere { radius, center } => arc(a, b, center, *radius),
            ConstraintKind::AffinePlane { .. } => dist(a, b),
            ConstraintKind::Product { parts, ambient_dim } => {
                let mut covered = vec![false; *ambient_dim];
                let mut total = 0.0;
                for part in parts {
                    let r = part.start..part.start + part.constraint.n_d;
                    covered[r.clone()].fill(true);
                    total += part.constraint.geodesic_slices(&a[r.clone()], &b[r]).powi(2);
                }
                for i in (0..*ambient_dim).filter(|i| !covered[*i]) {
                    total += (a[i] - b[i]).powi(2);
                }
                total.sqrt()
            }
        }
    }
}

/// `I - J^T (J J^T)^{-1} J`, regularized with [`TIKHONOV`] when the smallest
/// singular value of `J` is below [`RANK_TOLERANCE`].
pub fn projection_from_jacobian(j: &Matrix) -> ProjectionMatrix {
    let n_c = j.nrows();
    let n_d = j.ncols();
    let mut gram = j * j.transpose();
    let min_eig = gram
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let rank_deficient = min_eig.max(0.0).sqrt() < RANK_TOLERANCE;
    if rank_deficient {
        gram += Matrix::identity(n_c, n_c) * TIKHONOV;
    }
    let correction = match gram.clone().cholesky() {
        Some(ch) => j.transpose() * ch.solve(j),
        // Only reachable for an all-zero Jacobian with n_c > 1; fall back to LU.
        None => j.transpose() * gram.lu().solve(j).unwrap_or_else(|| Matrix::zeros(n_c, n_d)),
    };
    let mut p = Matrix::identity(n_d, n_d) - correction;
    let sym = (&p + p.transpose()) * 0.5;
    p.copy_from(&sym);
    ProjectionMatrix {
        matrix: p,
        rank_deficient,
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(ReachError::invalid(format!("radius must be positive, got {radius}")));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ReachError::invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn arc(a: &[f64], b: &[f64], center: &[f64], radius: f64) -> f64 {
    let da: Vec<f64> = a.iter().zip(center).map(|(x, c)| x - c).collect();
    let db: Vec<f64> = b.iter().zip(center).map(|(x, c)| x - c).collect();
    let na = dot(&da, &da).sqrt();
    let nb = dot(&db, &db).sqrt();
    if na < CENTER_EPS || nb < CENTER_EPS {
        return dist(a, b);
    }
    let cos = (dot(&da, &db) / (na * nb)).clamp(-1.0, 1.0);
    // atan2 form keeps precision for nearly coincident points
    let sin = {
        let cross2: f64 = dot(&da, &da) * dot(&db, &db) - dot(&da, &db).powi(2);
        cross2.max(0.0).sqrt() / (na * nb)
    };
    radius * sin.atan2(cos)
}

fn radial_row(x: &[f64], center: &[f64], out: &mut Matrix, row: usize, col0: usize) -> Result<()> {
    let n = dist(x, center);
    if n < CENTER_EPS {
        return Err(ReachError::Singularity(
            "gradient of ‖x - center‖ is undefined at the center".into(),
        ));
    }
    for (j, (xi, ci)) in x.iter().zip(center).enumerate() {
        out[(row, col0 + j)] = (xi - ci) / n;
    }
    Ok(())
}
