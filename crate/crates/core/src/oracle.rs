//! Ground truth for the circle-constrained goal-reaching particle.
//!
//! On a circle of radius `r` with speed bound `ū`, the particle can sweep the
//! angle to the goal down at rate `ū / r`. With `φ` the angle between `x` and the
//! goal and `τ = T - t` the remaining time, the BRT value is the chord length
//! left after optimal travel, `2r sin(max(0, φ - (ū/r) τ) / 2)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::value_net::ValueNetwork;
use crate::{ReachError, Result, Vector};

/// On-circle tolerance for oracle inputs.
pub const ORACLE_MANIFOLD_TOL: f64 = 1e-6;
/// Largest admissible CFL number of the grid solver.
pub const MAX_CFL: f64 = 0.9;
/// Default membership threshold `V ≤ δ`.
pub const DEFAULT_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleReachSpec {
    pub radius: f64,
    pub center: [f64; 2],
    pub goal: [f64; 2],
    pub u_max: f64,
    pub horizon: f64,
}

impl CircleReachSpec {
    pub fn new(horizon: f64) -> Self {
        CircleReachSpec {
            radius: 0.5,
            center: [0.0, 0.0],
            goal: [0.5, 0.0],
            u_max: 1.0,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = (self.goal[0] - self.center[0]).hypot(self.goal[1] - self.center[1]);
        if (g - self.radius).abs() > ORACLE_MANIFOLD_TOL {
            return Err(ReachError::invalid("goal must lie on the circle"));
        }
        if !(self.radius > 0.0 && self.u_max > 0.0 && self.horizon > 0.0) {
            return Err(ReachError::invalid("radius, speed and horizon must be positive"));
        }
        Ok(())
    }

    /// Angular speed `ū / r`.
    pub fn angular_speed(&self) -> f64 {
        self.u_max / self.radius
    }

    fn goal_angle(&self) -> f64 {
        (self.goal[1] - self.center[1]).atan2(self.goal[0] - self.center[0])
    }

    /// Point on the circle at angle `theta` measured from the goal direction.
    pub fn point_at(&self, theta: f64) -> Vector {
        let a = theta + self.goal_angle();
        Vector::from_column_slice(&[
            self.center[0] + self.radius * a.cos(),
            self.center[1] + self.radius * a.sin(),
        ])
    }

    /// Angle `φ ∈ [0, π]` between `x` and the goal, as seen from the center.
    pub fn angle_to_goal(&self, x: &Vector) -> Result<f64> {
        if x.len() != 2 {
            return Err(ReachError::invalid("circle oracle expects planar points"));
        }
        let dx = [x[0] - self.center[0], x[1] - self.center[1]];
        let off = (dx[0].hypot(dx[1]) - self.radius).abs();
        if off > ORACLE_MANIFOLD_TOL {
            return Err(ReachError::Precondition(format!(
                "oracle point is {off:.3e} off the circle"
            )));
        }
        let dg = [self.goal[0] - self.center[0], self.goal[1] - self.center[1]];
        let cos = (dx[0] * dg[0] + dx[1] * dg[1]) / (self.radius * self.radius);
        Ok(cos.clamp(-1.0, 1.0).acos())
    }

    /// Terminal condition `‖x - goal‖` at angle `phi`.
    pub fn terminal_at_angle(&self, phi: f64) -> f64 {
        2.0 * self.radius * (0.5 * phi).sin().abs()
    }
}

/// `½ arccos(2x₁) ≤ T - t` for the default problem; in general `φ r / ū ≤ T - t`.
pub fn ground_truth_brs_member(spec: &CircleReachSpec, t: f64, x: &Vector) -> Result<bool> {
    let phi = spec.angle_to_goal(x)?;
    Ok(phi / spec.angular_speed() <= spec.horizon - t)
}

pub fn geodesic_value(spec: &CircleReachSpec, t: f64, x: &Vector) -> Result<f64> {
    let phi = spec.angle_to_goal(x)?;
    Ok(geodesic_value_at_angle(spec, t, phi))
}

pub fn geodesic_value_at_angle(spec: &CircleReachSpec, t: f64, phi: f64) -> f64 {
    let phi = wrap_angle(phi).abs();
    let left = (phi - spec.angular_speed() * (spec.horizon - t)).max(0.0);
    spec.terminal_at_angle(left)
}

// To (-π, π].
fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Tabulated solution of the intrinsic 1-D BRT problem.
#[derive(Debug, Clone)]
pub struct CircleGridSolution {
    pub spec: CircleReachSpec,
    pub n_theta: usize,
    pub n_time: usize,
    /// `values[k][i]` at `t = k T / n_time`, `θ = 2π i / n_theta` from the goal.
    pub values: Vec<Vec<f64>>,
}

impl CircleGridSolution {
    pub fn dt(&self) -> f64 {
        self.spec.horizon / self.n_time as f64
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    /// Bilinear interpolation, periodic in `θ`, clamped in `t`.
    pub fn interpolate(&self, t: f64, theta: f64) -> f64 {
        let s = (t / self.dt()).clamp(0.0, self.n_time as f64);
        let k0 = (s.floor() as usize).min(self.n_time - 1);
        let ft = s - k0 as f64;
        let u = theta.rem_euclid(2.0 * PI) / self.dtheta();
        let i0 = (u.floor() as usize) % self.n_theta;
        let i1 = (i0 + 1) % self.n_theta;
        let fu = u - u.floor();
        let row = |k: usize| self.values[k][i0] * (1.0 - fu) + self.values[k][i1] * fu;
        row(k0) * (1.0 - ft) + row(k0 + 1) * ft
    }

    /// Interpolated value at an on-circle point.
    pub fn value(&self, t: f64, x: &Vector) -> Result<f64> {
        self.spec.angle_to_goal(x)?;
        let dx = x[0] - self.spec.center[0];
        let dy = x[1] - self.spec.center[1];
        let theta = dy.atan2(dx) - self.spec.goal_angle();
        Ok(self.interpolate(t, theta))
    }
}

/// Solves `V_t + min{0, -(ū/r)|V_θ|} = 0` backward from `V(T, θ) = l(x(θ))` on the
/// periodic angle grid: Lax-Friedrichs flux (dissipation `ū/r`) over second-order
/// ENO one-sided differences, with Heun (TVD-RK2) time stepping.
pub fn grid_solve_circle(spec: &CircleReachSpec, n_theta: usize, n_time: usize) -> Result<CircleGridSolution> {
    spec.validate()?;
    if n_theta < 64 {
        return Err(ReachError::config("oracle.n_theta", "must be at least 64"));
    }
    if n_time == 0 {
        return Err(ReachError::config("oracle.n_time", "must be positive"));
    }
    let alpha = spec.angular_speed();
    let dtheta = 2.0 * PI / n_theta as f64;
    let dt = spec.horizon / n_time as f64;
    let cfl = alpha * dt / dtheta;
    if cfl > MAX_CFL {
        return Err(ReachError::config(
            "oracle.n_time",
            format!("CFL number {cfl:.3} exceeds {MAX_CFL}; increase n_time"),
        ));
    }

    let terminal: Vec<f64> = (0..n_theta)
        .map(|i| spec.terminal_at_angle(i as f64 * dtheta))
        .collect();
    let mut values = vec![Vec::new(); n_time + 1];
    values[n_time] = terminal;
    for k in (0..n_time).rev() {
        let v0 = &values[k + 1];
        let v1 = euler_step(v0, alpha, dtheta, dt);
        let v2 = euler_step(&v1, alpha, dtheta, dt);
        values[k] = v0.iter().zip(&v2).map(|(a, b)| 0.5 * (a + b)).collect();
    }
    Ok(CircleGridSolution {
        spec: *spec,
        n_theta,
        n_time,
        values,
    })
}

// One backward Euler step `V + Δt min{0, Ĥ}` with the Lax-Friedrichs numerical
// Hamiltonian `Ĥ = -α |(p⁻ + p⁺)/2| + (α/2)(p⁺ - p⁻)`.
fn euler_step(v: &[f64], alpha: f64, dtheta: f64, dt: f64) -> Vec<f64> {
    let n = v.len();
    let at = |i: isize| v[i.rem_euclid(n as isize) as usize];
    let d2 = |i: isize| (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (dtheta * dtheta);
    let eno = |a: f64, b: f64| if a.abs() <= b.abs() { a } else { b };
    (0..n as isize)
        .map(|i| {
            let p_minus = (at(i) - at(i - 1)) / dtheta + 0.5 * dtheta * eno(d2(i - 1), d2(i));
            let p_plus = (at(i + 1) - at(i)) / dtheta - 0.5 * dtheta * eno(d2(i), d2(i + 1));
            let h = -alpha * (0.5 * (p_minus + p_plus)).abs() + 0.5 * alpha * (p_plus - p_minus);
            at(i) + dt * h.min(0.0)
        })
        .collect()
}

/// Where classification values come from.
#[derive(Debug, Clone, Copy)]
pub enum ValueSource<'a> {
    Network(&'a ValueNetwork),
    Grid(&'a CircleGridSolution),
    Analytic,
}

impl ValueSource<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            ValueSource::Network(_) => "network",
            ValueSource::Grid(_) => "grid",
            ValueSource::Analytic => "analytic",
        }
    }

    fn values(&self, spec: &CircleReachSpec, t: f64, points: &[Vector]) -> Result<Vec<f64>> {
        match self {
            ValueSource::Network(net) => {
                let pts: Vec<(f64, Vector)> = points.iter().map(|x| (t, x.clone())).collect();
                net.values(&pts)
            }
            ValueSource::Grid(grid) => points.iter().map(|x| grid.value(t, x)).collect(),
            ValueSource::Analytic => points.iter().map(|x| geodesic_value(spec, t, x)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionReport {
    pub t: f64,
    pub n_theta: usize,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl ConfusionReport {
    pub fn from_counts(t: f64, n_theta: usize, threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let recall = pct(tp, tp + fn_);
        let precision = pct(tp, tp + fp);
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        ConfusionReport {
            t,
            n_theta,
            threshold,
            tp,
            fp,
            tn,
            fn_,
            accuracy: pct(tp + tn, tp + fp + tn + fn_),
            recall,
            precision,
            f1,
        }
    }
}

/// One classified angle, for plotting a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DenseSample {
    pub angle: f64,
    pub value: f64,
    pub truth: bool,
    pub prediction: bool,
}

/// Angles `2π (i + ½) / n`, measured from the goal; the half offset keeps grid
/// points off exact BRS boundaries.
pub fn classification_angles(n_theta: usize) -> Vec<f64> {
    (0..n_theta)
        .map(|i| 2.0 * PI * (i as f64 + 0.5) / n_theta as f64)
        .collect()
}

pub fn dense_slice(
    source: ValueSource<'_>,
    spec: &CircleReachSpec,
    t: f64,
    n_theta: usize,
    threshold: f64,
) -> Result<Vec<DenseSample>> {
    let angles = classification_angles(n_theta);
    let points: Vec<Vector> = angles.iter().map(|a| spec.point_at(*a)).collect();
    let values = source.values(spec, t, &points)?;
    angles
        .iter()
        .zip(&points)
        .zip(values)
        .map(|((angle, x), value)| {
            Ok(DenseSample {
                angle: *angle,
                value,
                truth: ground_truth_brs_member(spec, t, x)?,
                prediction: value <= threshold,
            })
        })
        .collect()
}

/// BRS membership `V ≤ δ` on `n_theta` on-circle points against ground truth.
pub fn classify_brs(
    source: ValueSource<'_>,
    spec: &CircleReachSpec,
    t: f64,
    n_theta: usize,
    threshold: f64,
) -> Result<ConfusionReport> {
    if n_theta < 360 {
        return Err(ReachError::config("eval.resolution", "must be at least 360"));
    }
    spec.validate()?;
    let samples = dense_slice(source, spec, t, n_theta, threshold)?;
    Ok(confusion(&samples, t, n_theta, threshold))
}

fn confusion(samples: &[DenseSample], t: f64, n_theta: usize, threshold: f64) -> ConfusionReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in samples {
        match (s.truth, s.prediction) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    ConfusionReport::from_counts(t, n_theta, threshold, tp, fp, tn, fn_)
}

/// Threshold from `candidates` maximising F1 at slice `t` (ties keep the smaller δ).
pub fn calibrate_threshold(
    source: ValueSource<'_>,
    spec: &CircleReachSpec,
    t: f64,
    n_theta: usize,
    candidates: &[f64],
) -> Result<f64> {
    let samples = dense_slice(source, spec, t, n_theta, 0.0)?;
    let mut best = (f64::NEG_INFINITY, DEFAULT_THRESHOLD);
    for &delta in candidates {
        let relabeled: Vec<DenseSample> = samples
            .iter()
            .map(|s| DenseSample {
                prediction: s.value <= delta,
                ..*s
            })
            .collect();
        let f1 = confusion(&relabeled, t, n_theta, delta).f1;
        if f1 > best.0 {
            best = (f1, delta);
        }
    }
    Ok(best.1)
}

/// The three slices `T - π/8`, `T - π/4`, `T - 3π/8`.
pub fn table_slices(horizon: f64) -> [f64; 3] {
    [horizon - PI / 8.0, horizon - PI / 4.0, horizon - 3.0 * PI / 8.0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const T: f64 = PI / 2.0;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_column_slice(&[a, b])
    }

    #[test]
    fn ground_truth_examples() {
        let s = CircleReachSpec::new(T);
        for t in [0.0, 0.5, T] {
            assert!(ground_truth_brs_member(&s, t, &v(0.5, 0.0)).unwrap());
        }
        assert!(!ground_truth_brs_member(&s, T - 3.0 * PI / 8.0, &v(-0.5, 0.0)).unwrap());
        assert!(ground_truth_brs_member(&s, T - PI / 4.0, &v(0.0, 0.5)).unwrap());
    }

    #[test]
    fn off_circle_points_are_rejected() {
        let s = CircleReachSpec::new(T);
        assert!(matches!(
            ground_truth_brs_member(&s, 0.0, &v(0.2, 0.0)),
            Err(ReachError::Precondition(_))
        ));
    }

    #[test]
    fn geodesic_value_examples() {
        let s = CircleReachSpec::new(T);
        assert_eq!(geodesic_value(&s, 0.3, &v(0.5, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(geodesic_value(&s, T, &v(-0.5, 0.0)).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            geodesic_value(&s, T - PI / 4.0, &v(-0.5, 0.0)).unwrap(),
            (PI / 4.0).sin(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn geodesic_value_matches_simulated_optimal_travel() {
        // March toward the goal at 2 rad/s and track the smallest chord distance.
        let s = CircleReachSpec::new(T);
        for &(phi0, tau) in &[(PI, PI / 4.0), (2.0, 0.3), (0.5, 1.0)] {
            let steps = 200_000;
            let dt = tau / steps as f64;
            let mut phi: f64 = phi0;
            let mut best = s.terminal_at_angle(phi);
            for _ in 0..steps {
                phi = (phi - s.angular_speed() * dt).max(0.0);
                best = best.min(s.terminal_at_angle(phi));
            }
            let exact = geodesic_value_at_angle(&s, T - tau, phi0);
            assert_abs_diff_eq!(exact, best, epsilon = 1e-6);
        }
    }

    #[test]
    fn grid_terminal_slice_is_exact() {
        let s = CircleReachSpec::new(T);
        let g = grid_solve_circle(&s, 128, 400).unwrap();
        for (i, v) in g.values[g.n_time].iter().enumerate() {
            assert_eq!(*v, s.terminal_at_angle(i as f64 * g.dtheta()));
        }
    }

    #[test]
    fn grid_rejects_cfl_violation() {
        let s = CircleReachSpec::new(T);
        assert!(matches!(grid_solve_circle(&s, 512, 10), Err(ReachError::Config { .. })));
        assert!(grid_solve_circle(&s, 32, 1000).is_err());
    }

    #[test]
    fn analytic_source_classifies_perfectly() {
        let s = CircleReachSpec::new(T);
        for t in table_slices(T) {
            let r = classify_brs(ValueSource::Analytic, &s, t, 720, 1e-9).unwrap();
            assert_eq!(r.accuracy, 100.0);
            assert_eq!(r.f1, 100.0);
        }
    }

    #[test]
    fn confusion_metrics_are_consistent() {
        let r = ConfusionReport::from_counts(0.0, 10, 0.0, 3, 1, 5, 1);
        assert_abs_diff_eq!(r.accuracy, 80.0);
        assert_abs_diff_eq!(r.recall, 75.0);
        assert_abs_diff_eq!(r.precision, 75.0);
        assert_abs_diff_eq!(r.f1, 75.0);
    }

    #[test]
    fn classify_needs_resolution() {
        let s = CircleReachSpec::new(T);
        assert!(classify_brs(ValueSource::Analytic, &s, 0.0, 100, 0.02).is_err());
    }
}
