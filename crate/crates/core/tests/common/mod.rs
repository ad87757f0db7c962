//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use manifold_reach::hamiltonian::hamiltonian_and_costate_derivative;
use manifold_reach::trainer::{ReachabilityProblem, TrainingSample};
use manifold_reach::value_net::{
    forward_with_input_grad, init_network, loss_with_param_grad, NetworkArchitecture, ValueNetwork,
};
use manifold_reach::Vector;
use rand::Rng;

pub fn random_arch<R: Rng>(rng: &mut R) -> NetworkArchitecture {
    NetworkArchitecture {
        input_dim: rng.random_range(2..6),
        hidden_layers: rng.random_range(1..4),
        hidden_width: rng.random_range(4..17),
        first_omega: 30.0,
        hidden_omega: 1.0,
    }
}

/// Value and input derivatives by straight-line scalar loops, carrying one
/// forward-mode tangent per input coordinate. Independent of the batched GEMM
/// implementation under test.
pub fn reference_value_and_grad(params: &[f64], arch: &NetworkArchitecture, z: &[f64]) -> (f64, Vec<f64>) {
    let n = arch.input_dim;
    let mut h: Vec<f64> = z.to_vec();
    let mut dh: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| (i == j) as u8 as f64).collect()).collect();
    let mut at = 0;
    for k in 0..arch.hidden_layers {
        let inp = h.len();
        let out = arch.hidden_width;
        let omega = if k == 0 { arch.first_omega } else { arch.hidden_omega };
        let w = &params[at..at + out * inp];
        let b = &params[at + out * inp..at + out * inp + out];
        at += out * inp + out;
        let mut nh = vec![0.0; out];
        let mut ndh = vec![vec![0.0; out]; n];
        for r in 0..out {
            let mut a = b[r];
            for c in 0..inp {
                a += w[r * inp + c] * h[c];
            }
            nh[r] = (omega * a).sin();
            let d = omega * (omega * a).cos();
            for j in 0..n {
                let mut da = 0.0;
                for c in 0..inp {
                    da += w[r * inp + c] * dh[j][c];
                }
                ndh[j][r] = d * da;
            }
        }
        h = nh;
        dh = ndh;
    }
    let head = &params[at..at + arch.hidden_width];
    let bias = params[at + arch.hidden_width];
    let v = head.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + bias;
    let g = (0..n)
        .map(|j| head.iter().zip(&dh[j]).map(|(a, b)| a * b).sum())
        .collect();
    (v, g)
}

pub fn reference_forward(params: &[f64], arch: &NetworkArchitecture, z: &[f64]) -> f64 {
    reference_value_and_grad(params, arch, z).0
}

/// Worst component-wise relative error of input gradients against central
/// differences (step 1e-5) of the reference forward pass.
pub fn fd_input_errors<R: Rng>(rng: &mut R, cases: usize) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let arch = random_arch(rng);
        let params = init_network(&arch, 1000 + case as u64).unwrap();
        let z: Vec<f64> = (0..arch.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = forward_with_input_grad(&params, &arch, z[0], &z[1..]).unwrap();
        let analytic: Vec<f64> = std::iter::once(g.dv_dt).chain(g.dv_dx.iter().copied()).collect();
        let fd: Vec<f64> = (0..arch.input_dim)
            .map(|j| {
                let mut zp = z.clone();
                zp[j] += h;
                let mut zm = z.clone();
                zm[j] -= h;
                (reference_forward(&params.0, &arch, &zp) - reference_forward(&params.0, &arch, &zm)) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, f) in analytic.iter().zip(&fd) {
            let err = (a - f).abs() / f.abs().max(1e-2 * scale).max(1e-12);
            worst = worst.max(err);
        }
    }
    worst
}

/// Composite loss computed from the reference forward-mode pass.
pub fn reference_loss(
    params: &[f64],
    net: &ValueNetwork,
    batch: &[TrainingSample],
    problem: &ReachabilityProblem,
    lambda: f64,
) -> f64 {
    let norm = &net.normalization;
    let n_in = net.architecture.input_dim;
    let mut total = 0.0;
    for s in batch {
        let mut z = vec![0.0; n_in];
        norm.normalize_into(s.t, s.x.as_slice(), &mut z);
        let (v, g) = reference_value_and_grad(params, &net.architecture, &z);
        let dv_dt = g[0] / norm.horizon;
        let dv_dx = Vector::from_fn(n_in - 1, |i, _| g[i + 1] * norm.state_scale[i]);
        let projs = problem.projections(&s.x).unwrap();
        let (h, _) = hamiltonian_and_costate_derivative(problem.mode, &dv_dx, &projs, &problem.bounds);
        if s.is_terminal {
            total += (v - problem.terminal_value(&s.x).unwrap()).abs();
        }
        total += lambda * (dv_dt + h.min(0.0)).abs();
    }
    total / batch.len() as f64
}

/// Worst norm-relative error of the parameter gradient of the composite loss
/// against central differences of [`reference_loss`].
pub fn fd_loss_errors<R: Rng>(rng: &mut R, problem: &ReachabilityProblem, configs: usize) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for case in 0..configs {
        let mut arch = random_arch(rng);
        arch.input_dim = problem.state_dim() + 1;
        let net = ValueNetwork::new(arch, problem.normalization().unwrap(), 77 + case as u64).unwrap();
        let batch: Vec<TrainingSample> = (0..6)
            .map(|i| {
                let terminal = i % 3 == 0;
                TrainingSample {
                    t: if terminal { problem.horizon } else { rng.random_range(0.0..problem.horizon) },
                    x: problem.sample_state(rng).unwrap(),
                    is_terminal: terminal,
                }
            })
            .collect();
        let lambda = rng.random_range(0.5..2.0);
        let eval = loss_with_param_grad(&net, &batch, problem, lambda).unwrap();
        let base = reference_loss(&net.parameters.0, &net, &batch, problem, lambda);
        assert!((base - eval.loss).abs() <= 1e-10 * base.abs().max(1.0));
        let mut p = net.parameters.0.clone();
        let fd: Vec<f64> = (0..p.len())
            .map(|i| {
                let orig = p[i];
                p[i] = orig + h;
                let lp = reference_loss(&p, &net, &batch, problem, lambda);
                p[i] = orig - h;
                let lm = reference_loss(&p, &net, &batch, problem, lambda);
                p[i] = orig;
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (a, f) in eval.grad.iter().zip(&fd) {
            worst = worst.max((a - f).abs() / scale);
        }
    }
    worst
}
