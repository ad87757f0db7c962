//! Sinusoidal MLP value function `V_θ(t, x)`.
//!
//! The network sees a normalized input `z = (t / T, (x - offset) ⊙ scale)`. Each
//! hidden layer computes `h = sin(ω (W h_prev + b))`; the head is linear.
//!
//! Input derivatives are propagated forward as tangent columns stacked next to the
//! activations, so a single GEMM per layer advances the value and all `∂/∂z_j`
//! together. The reverse pass runs through that augmented graph, which gives the
//! exact parameter gradient of any loss that consumes both `V` and `∇V`.
//!
//! Flat parameter layout, layer by layer: hidden weights row-major (`width × in`),
//! hidden bias (`width`); then head weights (`width`) and head bias (1).

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hamiltonian::hamiltonian_and_costate_derivative;
use crate::trainer::{ReachabilityProblem, TrainingSample};
use crate::{Matrix, ReachError, Result, Vector};

/// Samples per chunk in batched evaluation; chunk results are reduced in order.
pub const CHUNK: usize = 256;

/// Model file format identifier.
pub const MODEL_FORMAT: &str = "manifold-reach/value-net";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkArchitecture {
    /// `1 + state dimension`.
    pub input_dim: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    /// Frequency scale of the first sinusoidal layer.
    #[serde(default = "default_first_omega")]
    pub first_omega: f64,
    /// Frequency scale of the remaining sinusoidal layers.
    #[serde(default = "default_hidden_omega")]
    pub hidden_omega: f64,
}

fn default_hidden_layers() -> usize {
    3
}
fn default_hidden_width() -> usize {
    64
}
fn default_first_omega() -> f64 {
    10.0
}
fn default_hidden_omega() -> f64 {
    1.0
}

impl NetworkArchitecture {
    pub fn new(input_dim: usize) -> Self {
        NetworkArchitecture {
            input_dim,
            hidden_layers: default_hidden_layers(),
            hidden_width: default_hidden_width(),
            first_omega: default_first_omega(),
            hidden_omega: default_hidden_omega(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 2 {
            return Err(ReachError::invalid("network input_dim must be at least 2"));
        }
        if self.hidden_width < 4 {
            return Err(ReachError::invalid("network hidden_width must be at least 4"));
        }
        if self.hidden_layers < 1 {
            return Err(ReachError::invalid("network needs at least one hidden layer"));
        }
        if !(self.first_omega.is_finite() && self.first_omega > 0.0)
            || !(self.hidden_omega.is_finite() && self.hidden_omega > 0.0)
        {
            return Err(ReachError::invalid("frequency scales must be positive"));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.hidden_layers).map(move |k| {
            if k == 0 {
                (self.hidden_width, self.input_dim, self.first_omega)
            } else {
                (self.hidden_width, self.hidden_width, self.hidden_omega)
            }
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().map(|(o, i, _)| o * i + o).sum::<usize>() + self.hidden_width + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkParameters(pub Vec<f64>);

impl NetworkParameters {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, arch: &NetworkArchitecture) -> Result<()> {
        if self.0.len() != arch.parameter_count() {
            return Err(ReachError::invalid(format!(
                "parameter vector has length {}, architecture needs {}",
                self.0.len(),
                arch.parameter_count()
            )));
        }
        Ok(())
    }
}

/// Sinusoidal-network initialization, deterministic in `seed`.
///
/// The first layer draws from `U(-1/in, 1/in)`; later layers (including the
/// linear head) from `U(-√(6/width)/ω, √(6/width)/ω)` with that layer's `ω`.
pub fn init_network(arch: &NetworkArchitecture, seed: u64) -> Result<NetworkParameters> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(arch.parameter_count());
    for (k, (out, inp, omega)) in arch.layer_shapes().enumerate() {
        let limit = if k == 0 {
            1.0 / inp as f64
        } else {
            (6.0 / inp as f64).sqrt() / omega
        };
        params.extend((0..out * inp + out).map(|_| rng.random_range(-limit..limit)));
    }
    let limit = (6.0 / arch.hidden_width as f64).sqrt() / arch.hidden_omega;
    params.extend((0..arch.hidden_width + 1).map(|_| rng.random_range(-limit..limit)));
    Ok(NetworkParameters(params))
}

struct Layer {
    w: Matrix,
    b: Vector,
    omega: f64,
    offset: usize,
}

struct Unpacked {
    layers: Vec<Layer>,
    head: Vector,
    head_bias: f64,
    head_offset: usize,
}

fn unpack(params: &[f64], arch: &NetworkArchitecture) -> Unpacked {
    let mut at = 0;
    let layers = arch
        .layer_shapes()
        .map(|(out, inp, omega)| {
            let offset = at;
            let w = DMatrix::from_row_slice(out, inp, &params[at..at + out * inp]);
            at += out * inp;
            let b = Vector::from_column_slice(&params[at..at + out]);
            at += out;
            Layer { w, b, omega, offset }
        })
        .collect();
    let head_offset = at;
    let head = Vector::from_column_slice(&params[at..at + arch.hidden_width]);
    let head_bias = params[at + arch.hidden_width];
    Unpacked {
        layers,
        head,
        head_bias,
        head_offset,
    }
}

/// Activations of one batched evaluation.
///
/// `xs[k]` is `width × (blocks · B)`: block 0 holds the activations of layer `k`,
/// block `j ≥ 1` their derivative with respect to input coordinate `j - 1`.
struct Tape {
    batch: usize,
    blocks: usize,
    xs: Vec<Matrix>,
    pre: Vec<Matrix>,
    sin: Vec<Matrix>,
    cos: Vec<Matrix>,
    out: Vec<f64>,
}

fn run_forward(net: &Unpacked, inputs: &Matrix, with_tangents: bool) -> Tape {
    let n_in = inputs.nrows();
    let batch = inputs.ncols();
    let blocks = if with_tangents { n_in + 1 } else { 1 };

    let mut x0 = Matrix::zeros(n_in, blocks * batch);
    x0.columns_mut(0, batch).copy_from(inputs);
    for j in 1..blocks {
        x0.columns_mut(j * batch, batch).row_mut(j - 1).fill(1.0);
    }

    let mut xs = vec![x0];
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut sin = Vec::with_capacity(net.layers.len());
    let mut cos = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let mut y = &layer.w * xs.last().unwrap();
        let width = y.nrows();
        let omega = layer.omega;
        for mut col in y.columns_mut(0, batch).column_iter_mut() {
            col += &layer.b;
        }
        let s = y.columns(0, batch).map(|a| (omega * a).sin());
        let co = y.columns(0, batch).map(|a| (omega * a).cos());
        let mut next = Matrix::zeros(width, blocks * batch);
        next.columns_mut(0, batch).copy_from(&s);
        for j in 1..blocks {
            let mut dst = next.columns_mut(j * batch, batch);
            let src = y.columns(j * batch, batch);
            for c in 0..batch {
                for r in 0..width {
                    dst[(r, c)] = omega * co[(r, c)] * src[(r, c)];
                }
            }
        }
        pre.push(y);
        sin.push(s);
        cos.push(co);
        xs.push(next);
    }
    let last = xs.last().unwrap();
    let out_row = net.head.transpose() * last;
    let mut out: Vec<f64> = out_row.iter().copied().collect();
    for v in &mut out[..batch] {
        *v += net.head_bias;
    }
    Tape {
        batch,
        blocks,
        xs,
        pre,
        sin,
        cos,
        out,
    }
}

/// Reverse pass. `upstream` has `blocks · B` entries: `∂L/∂V` per sample followed by
/// `∂L/∂(∂V/∂z_j)` per input coordinate. Accumulates into `grad`.
fn run_backward(net: &Unpacked, tape: &Tape, upstream: &[f64], grad: &mut [f64]) {
    let batch = tape.batch;
    let blocks = tape.blocks;
    let width = net.head.len();
    let up = Matrix::from_row_slice(1, blocks * batch, upstream);

    let last = tape.xs.last().unwrap();
    let head_grad = last * up.transpose();
    for (g, v) in grad[net.head_offset..net.head_offset + width]
        .iter_mut()
        .zip(head_grad.iter())
    {
        *g += v;
    }
    grad[net.head_offset + width] += upstream[..batch].iter().sum::<f64>();

    let mut x_bar = &net.head * &up;
    for (k, layer) in net.layers.iter().enumerate().rev() {
        let omega = layer.omega;
        let y = &tape.pre[k];
        let s = &tape.sin[k];
        let c = &tape.cos[k];
        let mut y_bar = Matrix::zeros(width, blocks * batch);
        let mut c_bar = Matrix::zeros(width, batch);
        for j in 1..blocks {
            let xb = x_bar.columns(j * batch, batch);
            let yj = y.columns(j * batch, batch);
            let mut yb = y_bar.columns_mut(j * batch, batch);
            for col in 0..batch {
                for r in 0..width {
                    c_bar[(r, col)] += omega * xb[(r, col)] * yj[(r, col)];
                    yb[(r, col)] = omega * c[(r, col)] * xb[(r, col)];
                }
            }
        }
        {
            let xb = x_bar.columns(0, batch);
            let mut ab = y_bar.columns_mut(0, batch);
            for col in 0..batch {
                for r in 0..width {
                    ab[(r, col)] = omega * (xb[(r, col)] * c[(r, col)] - s[(r, col)] * c_bar[(r, col)]);
                }
            }
        }
        let w_grad = &y_bar * tape.xs[k].transpose();
        let (out, inp) = (layer.w.nrows(), layer.w.ncols());
        let off = layer.offset;
        for r in 0..out {
            for cidx in 0..inp {
                grad[off + r * inp + cidx] += w_grad[(r, cidx)];
            }
        }
        let b_off = off + out * inp;
        for r in 0..out {
            grad[b_off + r] += y_bar.row(r).columns(0, batch).sum();
        }
        if k > 0 {
            x_bar = layer.w.transpose() * y_bar;
        }
    }
}

fn check_input(arch: &NetworkArchitecture, t: f64, x: &[f64]) -> Result<()> {
    if x.len() + 1 != arch.input_dim {
        return Err(ReachError::invalid(format!(
            "network expects {} state coordinates, got {}",
            arch.input_dim - 1,
            x.len()
        )));
    }
    if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(ReachError::invalid("non-finite network input"));
    }
    Ok(())
}

fn single_input(t: f64, x: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(x.len() + 1, 1);
    m[(0, 0)] = t;
    for (i, v) in x.iter().enumerate() {
        m[(i + 1, 0)] = *v;
    }
    m
}

/// `V_θ(t, x)` on normalized inputs.
pub fn forward(params: &NetworkParameters, arch: &NetworkArchitecture, t: f64, x: &[f64]) -> Result<f64> {
    params.check(arch)?;
    check_input(arch, t, x)?;
    let net = unpack(&params.0, arch);
    Ok(run_forward(&net, &single_input(t, x), false).out[0])
}

/// Value with exact input derivatives, on normalized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub value: f64,
    pub dv_dt: f64,
    pub dv_dx: Vec<f64>,
}

pub fn forward_with_input_grad(
    params: &NetworkParameters,
    arch: &NetworkArchitecture,
    t: f64,
    x: &[f64],
) -> Result<InputGradient> {
    params.check(arch)?;
    check_input(arch, t, x)?;
    let net = unpack(&params.0, arch);
    let tape = run_forward(&net, &single_input(t, x), true);
    Ok(InputGradient {
        value: tape.out[0],
        dv_dt: tape.out[1],
        dv_dx: tape.out[2..].to_vec(),
    })
}

/// Batched evaluation on normalized inputs (`input_dim × B`, time in row 0).
/// Returns values and, if requested, the `input_dim × B` input gradients.
pub fn forward_batch(
    params: &NetworkParameters,
    arch: &NetworkArchitecture,
    inputs: &Matrix,
    with_grad: bool,
) -> Result<(Vec<f64>, Option<Matrix>)> {
    params.check(arch)?;
    if inputs.nrows() != arch.input_dim {
        return Err(ReachError::invalid("batched input has the wrong row count"));
    }
    let net = unpack(&params.0, arch);
    let n = inputs.ncols();
    let mut values = Vec::with_capacity(n);
    let mut grads = with_grad.then(|| Matrix::zeros(arch.input_dim, n));
    for start in (0..n).step_by(CHUNK) {
        let len = CHUNK.min(n - start);
        let tape = run_forward(&net, &inputs.columns(start, len).into_owned(), with_grad);
        values.extend_from_slice(&tape.out[..len]);
        if let Some(g) = grads.as_mut() {
            for j in 0..arch.input_dim {
                for c in 0..len {
                    g[(j, start + c)] = tape.out[(j + 1) * len + c];
                }
            }
        }
    }
    Ok((values, grads))
}

/// Fixed affine map from physical `(t, x)` to network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNormalization {
    /// `z_t = t / horizon`.
    pub horizon: f64,
    pub state_offset: Vec<f64>,
    pub state_scale: Vec<f64>,
}

impl InputNormalization {
    /// Maps the box `[lo, hi]` onto `[-1, 1]^n` and `[0, horizon]` onto `[0, 1]`.
    pub fn from_box(horizon: f64, lo: &[f64], hi: &[f64]) -> Result<Self> {
        if !(horizon > 0.0) || lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(h > l)) {
            return Err(ReachError::invalid("normalization box must be non-degenerate"));
        }
        Ok(InputNormalization {
            horizon,
            state_offset: lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            state_scale: lo.iter().zip(hi).map(|(l, h)| 2.0 / (h - l)).collect(),
        })
    }

    pub fn identity(horizon: f64, dim: usize) -> Self {
        InputNormalization {
            horizon,
            state_offset: vec![0.0; dim],
            state_scale: vec![1.0; dim],
        }
    }

    pub fn time_scale(&self) -> f64 {
        1.0 / self.horizon
    }

    pub fn normalize_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = t / self.horizon;
        for (i, v) in x.iter().enumerate() {
            out[i + 1] = (v - self.state_offset[i]) * self.state_scale[i];
        }
    }
}

/// Physical-unit value and derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGradient {
    pub value: f64,
    pub dv_dt: f64,
    pub dv_dx: Vector,
}

/// A trained (or freshly initialized) value function with its input scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueNetwork {
    pub architecture: NetworkArchitecture,
    pub normalization: InputNormalization,
    pub seed: u64,
    pub parameters: NetworkParameters,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    network: ValueNetwork,
}

impl ValueNetwork {
    pub fn new(architecture: NetworkArchitecture, normalization: InputNormalization, seed: u64) -> Result<Self> {
        if normalization.state_offset.len() + 1 != architecture.input_dim
            || normalization.state_scale.len() + 1 != architecture.input_dim
        {
            return Err(ReachError::invalid("normalization dimension does not match the network input"));
        }
        let parameters = init_network(&architecture, seed)?;
        Ok(ValueNetwork {
            architecture,
            normalization,
            seed,
            parameters,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.architecture.input_dim - 1
    }

    pub fn horizon(&self) -> f64 {
        self.normalization.horizon
    }

    fn normalized(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_input(&self.architecture, t, x)?;
        let mut z = vec![0.0; self.architecture.input_dim];
        self.normalization.normalize_into(t, x, &mut z);
        Ok(z)
    }

    pub fn value(&self, t: f64, x: &Vector) -> Result<f64> {
        let z = self.normalized(t, x.as_slice())?;
        forward(&self.parameters, &self.architecture, z[0], &z[1..])
    }

    pub fn value_and_gradient(&self, t: f64, x: &Vector) -> Result<ValueGradient> {
        let z = self.normalized(t, x.as_slice())?;
        let g = forward_with_input_grad(&self.parameters, &self.architecture, z[0], &z[1..])?;
        Ok(ValueGradient {
            value: g.value,
            dv_dt: g.dv_dt * self.normalization.time_scale(),
            dv_dx: Vector::from_iterator(
                g.dv_dx.len(),
                g.dv_dx.iter().zip(&self.normalization.state_scale).map(|(d, s)| d * s),
            ),
        })
    }

    /// Batched physical-unit evaluation at a common time.
    pub fn values(&self, points: &[(f64, Vector)]) -> Result<Vec<f64>> {
        let inputs = self.input_matrix(points)?;
        Ok(forward_batch(&self.parameters, &self.architecture, &inputs, false)?.0)
    }

    /// Batched physical-unit evaluation with gradients.
    pub fn values_and_gradients(&self, points: &[(f64, Vector)]) -> Result<Vec<ValueGradient>> {
        let inputs = self.input_matrix(points)?;
        let (values, grads) = forward_batch(&self.parameters, &self.architecture, &inputs, true)?;
        let grads = grads.expect("requested gradients");
        let ts = self.normalization.time_scale();
        Ok(values
            .into_iter()
            .enumerate()
            .map(|(c, value)| ValueGradient {
                value,
                dv_dt: grads[(0, c)] * ts,
                dv_dx: Vector::from_fn(self.state_dim(), |i, _| {
                    grads[(i + 1, c)] * self.normalization.state_scale[i]
                }),
            })
            .collect())
    }

    fn input_matrix(&self, points: &[(f64, Vector)]) -> Result<Matrix> {
        let n_in = self.architecture.input_dim;
        let mut m = Matrix::zeros(n_in, points.len());
        let mut z = vec![0.0; n_in];
        for (c, (t, x)) in points.iter().enumerate() {
            check_input(&self.architecture, *t, x.as_slice())?;
            self.normalization.normalize_into(*t, x.as_slice(), &mut z);
            m.column_mut(c).copy_from_slice(&z);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            network: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| ReachError::Model {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let fail = |message: String| ReachError::Model {
            path: path.to_path_buf(),
            message,
        };
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(fail(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let net = file.network;
        net.architecture.validate().map_err(|e| fail(e.to_string()))?;
        net.parameters.check(&net.architecture).map_err(|e| fail(e.to_string()))?;
        if net.parameters.0.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite parameters".into()));
        }
        if net.normalization.state_scale.len() + 1 != net.architecture.input_dim {
            return Err(fail("normalization does not match the architecture".into()));
        }
        Ok(net)
    }
}

/// Loss value, its two components, and the exact parameter gradient.
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub loss: f64,
    /// Batch mean of `|V - l| · 1(t = T)`.
    pub terminal: f64,
    /// Batch mean of the PDE residual magnitude.
    pub residual: f64,
    pub grad: Vec<f64>,
}

// Subgradient convention: 0 at the kink.
fn kink_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean(|V - l| 1(t = T) + λ |∂V/∂t + min{0, H(∇V)}|)` and its gradient in `θ`.
///
/// Differentiates through `∇ₓV` and `∂V/∂t`. For constrained problems every state
/// must satisfy `‖C(x)‖ ≤ 1e-6`.
pub fn loss_with_param_grad(
    net: &ValueNetwork,
    batch: &[TrainingSample],
    problem: &ReachabilityProblem,
    lambda: f64,
) -> Result<LossEvaluation> {
    if batch.is_empty() {
        return Err(ReachError::invalid("empty training batch"));
    }
    let arch = &net.architecture;
    net.parameters.check(arch)?;
    problem.check_training_states(batch)?;
    let unpacked = unpack(&net.parameters.0, arch);
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    let chunks: Vec<&[TrainingSample]> = batch.chunks(CHUNK).collect();
    let partials: Vec<Result<(f64, f64, Vec<f64>)>> = chunks
        .par_iter()
        .map(|chunk| chunk_loss(net, &unpacked, chunk, problem, lambda, inv_n))
        .collect();

    let mut terminal = 0.0;
    let mut residual = 0.0;
    let mut grad = vec![0.0; arch.parameter_count()];
    for part in partials {
        let (t, r, g) = part?;
        terminal += t;
        residual += r;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(LossEvaluation {
        loss: terminal + lambda * residual,
        terminal,
        residual,
        grad,
    })
}

fn chunk_loss(
    net: &ValueNetwork,
    unpacked: &Unpacked,
    chunk: &[TrainingSample],
    problem: &ReachabilityProblem,
    lambda: f64,
    inv_n: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let arch = &net.architecture;
    let norm = &net.normalization;
    let n_in = arch.input_dim;
    let b = chunk.len();
    let mut inputs = Matrix::zeros(n_in, b);
    let mut z = vec![0.0; n_in];
    for (c, s) in chunk.iter().enumerate() {
        check_input(arch, s.t, s.x.as_slice())?;
        norm.normalize_into(s.t, s.x.as_slice(), &mut z);
        inputs.column_mut(c).copy_from_slice(&z);
    }
    let tape = run_forward(unpacked, &inputs, true);
    let ts = norm.time_scale();

    let mut upstream = vec![0.0; (n_in + 1) * b];
    let mut terminal = 0.0;
    let mut residual = 0.0;
    for (c, s) in chunk.iter().enumerate() {
        let value = tape.out[c];
        if s.is_terminal {
            let diff = value - problem.terminal_value(&s.x)?;
            terminal += diff.abs() * inv_n;
            upstream[c] = kink_sign(diff) * inv_n;
        }
        let dv_dt = tape.out[b + c] * ts;
        let dv_dx = Vector::from_fn(n_in - 1, |i, _| tape.out[(i + 2) * b + c] * norm.state_scale[i]);
        let projections = problem.projections(&s.x)?;
        let (h, dh) = hamiltonian_and_costate_derivative(problem.mode, &dv_dx, &projections, &problem.bounds);
        let r = dv_dt + h.min(0.0);
        residual += r.abs() * inv_n;
        let w = lambda * kink_sign(r) * inv_n;
        if w != 0.0 {
            upstream[b + c] += w * ts;
            if h < 0.0 {
                for i in 0..n_in - 1 {
                    upstream[(i + 2) * b + c] += w * dh[i] * norm.state_scale[i];
                }
            }
        }
    }
    let mut grad = vec![0.0; arch.parameter_count()];
    run_backward(unpacked, &tape, &upstream, &mut grad);
    Ok((terminal, residual, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(input_dim: usize, layers: usize, width: usize) -> NetworkArchitecture {
        NetworkArchitecture {
            input_dim,
            hidden_layers: layers,
            hidden_width: width,
            first_omega: 30.0,
            hidden_omega: 1.0,
        }
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        assert_eq!(arch(3, 3, 64).parameter_count(), 8641);
        let p = init_network(&arch(3, 3, 64), 0).unwrap();
        assert_eq!(p.len(), 8641);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = arch(3, 2, 16);
        let p1 = init_network(&a, 7).unwrap();
        let p2 = init_network(&a, 7).unwrap();
        let p3 = init_network(&a, 8).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, p3);
    }

    #[test]
    fn init_respects_layer_ranges() {
        let a = arch(3, 2, 16);
        let p = init_network(&a, 1).unwrap();
        let first = &p.0[..16 * 3 + 16];
        assert!(first.iter().all(|v| v.abs() <= 1.0 / 3.0));
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(p.0[16 * 3 + 16..].iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn zero_head_gives_constant_output_and_zero_gradient() {
        let a = arch(3, 2, 8);
        let mut p = init_network(&a, 3).unwrap();
        let n = p.len();
        for v in &mut p.0[n - 9..n - 1] {
            *v = 0.0;
        }
        p.0[n - 1] = 0.75;
        for x in [[0.1, -0.3], [0.9, 0.2]] {
            assert_eq!(forward(&p, &a, 0.4, &x).unwrap(), 0.75);
            let g = forward_with_input_grad(&p, &a, 0.4, &x).unwrap();
            assert_eq!(g.dv_dt, 0.0);
            assert!(g.dv_dx.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn forward_is_pure() {
        let a = arch(3, 3, 16);
        let p = init_network(&a, 5).unwrap();
        let v1 = forward(&p, &a, 0.2, &[0.3, -0.1]).unwrap();
        let v2 = forward(&p, &a, 0.2, &[0.3, -0.1]).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let a = arch(3, 1, 8);
        let p = init_network(&a, 0).unwrap();
        assert!(matches!(forward(&p, &a, f64::NAN, &[0.0, 0.0]), Err(ReachError::InvalidInput(_))));
        assert!(matches!(forward(&p, &a, 0.0, &[0.0]), Err(ReachError::InvalidInput(_))));
    }

    #[test]
    fn batched_matches_single_evaluation() {
        let a = arch(3, 2, 12);
        let p = init_network(&a, 11).unwrap();
        let pts: Vec<[f64; 3]> = (0..300)
            .map(|i| {
                let f = i as f64 / 300.0;
                [f, (7.0 * f).sin(), (3.0 * f).cos()]
            })
            .collect();
        let mut m = Matrix::zeros(3, pts.len());
        for (c, z) in pts.iter().enumerate() {
            m.column_mut(c).copy_from_slice(z);
        }
        let (vals, grads) = forward_batch(&p, &a, &m, true).unwrap();
        let grads = grads.unwrap();
        for (c, z) in pts.iter().enumerate() {
            let g = forward_with_input_grad(&p, &a, z[0], &z[1..]).unwrap();
            assert!((vals[c] - g.value).abs() < 1e-12);
            assert!((grads[(0, c)] - g.dv_dt).abs() < 1e-10);
            assert!((grads[(1, c)] - g.dv_dx[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let net = ValueNetwork::new(
            arch(3, 2, 8),
            InputNormalization::from_box(1.5, &[-0.5, -0.5], &[0.5, 0.5]).unwrap(),
            42,
        )
        .unwrap();
        net.save(&path).unwrap();
        let back = ValueNetwork::load(&path).unwrap();
        assert_eq!(back, net);
        for (a, b) in back.parameters.0.iter().zip(&net.parameters.0) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_model_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let net = ValueNetwork::new(arch(3, 1, 8), InputNormalization::identity(1.0, 2), 1).unwrap();
        net.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(ValueNetwork::load(&path), Err(ReachError::Model { .. })));
    }

    #[test]
    fn kink_sign_is_zero_at_zero() {
        assert_eq!(kink_sign(0.0), 0.0);
        assert_eq!(kink_sign(-0.0), 0.0);
        assert_eq!(kink_sign(2.0), 1.0);
        assert_eq!(kink_sign(-2.0), -1.0);
    }
}
