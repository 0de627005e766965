//! Dense feed-forward network `f_{m+1} ∘ σ_m ∘ f_m ∘ ⋯ ∘ σ_1 ∘ f_1` with exact
//! reverse-mode parameter gradients.
//!
//! Parameters flatten layer by layer, each layer as its row-major weight
//! matrix followed by its bias; the parameter norm is the Euclidean norm of
//! that flat vector.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::ArchitectureSpec;
use crate::error::{invalid, shape, Result};
use crate::math::{norm, norm_sq, pow, sqrt};

mod loss;

pub use loss::LossHead;

/// One affine map `x ↦ W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weight: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.weight) + norm_sq(&self.bias)
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + self.bias[r]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn zeros(widths: &[usize]) -> Self {
        Self { layers: widths.windows(2).map(|w| Layer::zeros(w[1], w[0])).collect() }
    }

    /// Unflattens `flat` for the given widths.
    pub fn from_flat(widths: &[usize], flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(widths);
        if flat.len() != p.len() {
            return Err(shape!("widths {widths:?} need {} parameters, got {}", p.len(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for layer in &mut p.layers {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(p)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// `[ℓ_0, …, ℓ_{m+1}]`
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        if let Some(first) = self.layers.first() {
            w.push(first.cols);
        }
        w.extend(self.layers.iter().map(|l| l.rows));
        w
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, c: f64) {
        for layer in &mut self.layers {
            layer.weight.iter_mut().chain(layer.bias.iter_mut()).for_each(|w| *w *= c);
        }
    }

    pub fn check(&self, arch: &ArchitectureSpec) -> Result<()> {
        if self.widths() != arch.widths {
            return Err(shape!("parameters have widths {:?}, architecture {:?}", self.widths(), arch.widths));
        }
        for (u, layer) in self.layers.iter().enumerate() {
            if layer.weight.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(shape!("layer {} storage does not match {}x{}", u + 1, layer.rows, layer.cols));
            }
        }
        Ok(())
    }
}

/// Euclidean norm of all parameters flattened together.
pub fn param_norm(params: &Params) -> f64 {
    sqrt(params.layers.iter().map(Layer::norm_sq).sum())
}

/// Rescales onto the sphere of radius `shrink · b_omega` when the norm
/// reaches it; otherwise returns the parameters unchanged.
pub fn project_to_ball(params: &Params, b_omega: f64, shrink: f64) -> Params {
    let radius = shrink * b_omega;
    let n = param_norm(params);
    let mut out = params.clone();
    if n >= radius && n > 0.0 {
        out.scale(radius / n);
    }
    out
}

/// Uniform sample from the open ball of radius `b_omega`: a Gaussian
/// direction times `b_omega · U^{1/dim}`.
pub fn init_uniform_ball(widths: &[usize], b_omega: f64, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = Params::zeros(widths).len();
    Params::from_flat(widths, &uniform_ball_point(&mut rng, dim, b_omega)).unwrap()
}

pub(crate) fn uniform_ball_point<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let dir = gaussian_direction(rng, dim);
    let u: f64 = rng.random();
    let r = radius * pow(u, 1.0 / dim as f64);
    dir.into_iter().map(|x| x * r).collect()
}

pub(crate) fn gaussian_direction<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n > 0.0 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    /// May be empty for unsupervised heads.
    #[serde(default)]
    pub y: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }
}

pub fn sample_norms(samples: &[Sample]) -> Vec<f64> {
    samples.iter().map(|s| norm(&s.x)).collect()
}

/// `pre[k] = W_{k+1} a_k + b_{k+1}` for `k = 0..=m` and `post[k] = σ_{k+1}(pre[k])`
/// for the hidden layers; `output = pre[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub post_activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward(params: &Params, arch: &ArchitectureSpec, x: &[f64]) -> Result<ForwardTrace> {
    params.check(arch)?;
    if x.len() != arch.input_dim() {
        return Err(shape!("input has length {}, expected {}", x.len(), arch.input_dim()));
    }
    Ok(forward_unchecked(params, arch, x))
}

fn forward_unchecked(params: &Params, arch: &ArchitectureSpec, x: &[f64]) -> ForwardTrace {
    let m = arch.depth();
    let mut pre = Vec::with_capacity(m + 1);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (k, layer) in params.layers.iter().enumerate() {
        let input = if k == 0 { x } else { &post[k - 1] };
        let mut z = Vec::with_capacity(layer.rows);
        layer.apply(input, &mut z);
        if k < m {
            let kind = arch.activations[k].kind;
            post.push(z.iter().map(|&v| kind.value(v)).collect());
        }
        pre.push(z);
    }
    let output = pre[m].clone();
    ForwardTrace { pre_activations: pre, post_activations: post, output }
}

/// Network output `N_Θ(x)`.
pub fn output(params: &Params, arch: &ArchitectureSpec, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(params, arch, x)?.output)
}

/// Pulls `delta = ∂ℓ/∂output` back through the trace into the flat gradient.
fn backprop(
    params: &Params,
    arch: &ArchitectureSpec,
    x: &[f64],
    trace: &ForwardTrace,
    mut delta: Vec<f64>,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut offsets = Vec::with_capacity(params.layers.len());
    let mut off = 0;
    for layer in &params.layers {
        offsets.push(off);
        off += layer.len();
    }
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let input: &[f64] = if k == 0 { x } else { &trace.post_activations[k - 1] };
        let g = &mut grad[offsets[k]..offsets[k] + layer.len()];
        let (gw, gb) = g.split_at_mut(layer.rows * layer.cols);
        for r in 0..layer.rows {
            for c in 0..layer.cols {
                gw[r * layer.cols + c] = delta[r] * input[c];
            }
            gb[r] = delta[r];
        }
        if k > 0 {
            let kind = arch.activations[k - 1].kind;
            let pre = &trace.pre_activations[k - 1];
            delta = (0..layer.cols)
                .map(|c| {
                    let back: f64 = (0..layer.rows).map(|r| layer.weight[r * layer.cols + c] * delta[r]).sum();
                    back * kind.derivative(pre[c])
                })
                .collect();
        }
    }
    grad
}

/// Per-sample loss `φ(Θ, ζ) = g(N_Θ(ζ_x), ζ_y)`.
pub fn loss_value(params: &Params, arch: &ArchitectureSpec, sample: &Sample, head: &LossHead) -> Result<f64> {
    let out = output(params, arch, &sample.x)?;
    head.check_target(out.len(), &sample.y)?;
    Ok(head.value(&out, &sample.y))
}

/// Exact gradient of `φ(·, ζ)` with respect to the flat parameters.
pub fn grad_params(params: &Params, arch: &ArchitectureSpec, sample: &Sample, head: &LossHead) -> Result<Vec<f64>> {
    let trace = forward(params, arch, &sample.x)?;
    head.check_target(trace.output.len(), &sample.y)?;
    let delta = head.gradient(&trace.output, &sample.y);
    Ok(backprop(params, arch, &sample.x, &trace, delta))
}

/// `∇_Θ N_Θ(x)` as a row-major `ℓ_{m+1} x n` matrix.
pub fn output_jacobian(params: &Params, arch: &ArchitectureSpec, x: &[f64]) -> Result<Vec<f64>> {
    let trace = forward(params, arch, x)?;
    let k = arch.output_dim();
    let mut out = Vec::with_capacity(k * params.len());
    for i in 0..k {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        out.extend(backprop(params, arch, x, &trace, e));
    }
    Ok(out)
}

/// `Φ(Θ) = (1/N) Σ φ(Θ, ζ_i)`, summed in dataset order.
pub fn objective_value(params: &Params, arch: &ArchitectureSpec, samples: &[Sample], head: &LossHead) -> Result<f64> {
    if samples.is_empty() {
        return Err(crate::Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        total += loss_value(params, arch, s, head)?;
    }
    Ok(total / samples.len() as f64)
}

/// `∇Φ(Θ)`, summed in dataset order.
pub fn objective_gradient(
    params: &Params,
    arch: &ArchitectureSpec,
    samples: &[Sample],
    head: &LossHead,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(crate::Error::EmptyDataset);
    }
    let mut total = vec![0.0; params.len()];
    for s in samples {
        for (t, g) in total.iter_mut().zip(grad_params(params, arch, s, head)?) {
            *t += g;
        }
    }
    let n = samples.len() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    Ok(total)
}

/// `sup ‖N_Θ(x)‖` over the ball for inputs with `‖x‖ ≤ s_max`:
/// `B_Ω √(B_{N_m}² + 1)` (with `B_{N_0} = s_max`).
pub fn output_bound(arch: &ArchitectureSpec, b_omega: f64, s_max: f64) -> Result<f64> {
    arch.validate()?;
    if !(b_omega > 0.0 && s_max >= 0.0) {
        return Err(invalid!("need b_omega > 0 and s_max >= 0"));
    }
    let budgets = vec![b_omega; arch.depth() + 1];
    let layers = crate::bounds::recursion_hidden_layers(arch, &budgets, s_max);
    let b_m = layers.last().map(|l| l.b_n).unwrap_or(s_max);
    Ok(b_omega * sqrt(b_m * b_m + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationEnvelope;

    fn tanh_arch(widths: Vec<usize>) -> ArchitectureSpec {
        ArchitectureSpec::uniform(widths, ActivationEnvelope::tanh()).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = tanh_arch(vec![3, 4, 2]);
        let out = output(&Params::zeros(&arch.widths), &arch, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_affine_map() {
        let arch = ArchitectureSpec::new(vec![2, 2], vec![]).unwrap();
        let p = Params::from_flat(&arch.widths, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(output(&p, &arch, &[0.3, -4.0]).unwrap(), vec![0.3, -4.0]);
    }

    #[test]
    fn scalar_tanh_unit() {
        let arch = tanh_arch(vec![1, 1, 1]);
        let p = Params::from_flat(&arch.widths, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = output(&p, &arch, &[1.0]).unwrap();
        assert!((out[0] - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn linear_head_gradient_on_affine_map() {
        let arch = ArchitectureSpec::new(vec![2, 1], vec![]).unwrap();
        let p = Params::from_flat(&arch.widths, &[0.3, 0.7, -1.0]).unwrap();
        let g = grad_params(&p, &arch, &Sample::new(vec![2.0, -5.0], vec![]), &LossHead::Linear).unwrap();
        assert_eq!(g, vec![2.0, -5.0, 1.0]);
    }

    #[test]
    fn zero_head_gradient_vanishes() {
        let arch = tanh_arch(vec![2, 3, 1]);
        let p = init_uniform_ball(&arch.widths, 1.0, 3);
        let g = grad_params(&p, &arch, &Sample::new(vec![1.0, 1.0], vec![]), &LossHead::Zero).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn norms() {
        assert_eq!(param_norm(&Params::zeros(&[2, 3, 1])), 0.0);
        let mut p = Params::zeros(&[1, 1]);
        p.layers[0].weight[0] = 3.0;
        assert_eq!(param_norm(&p), 3.0);
        let mut p = Params::zeros(&[1, 1, 1]);
        p.layers[0].weight[0] = 3.0;
        p.layers[1].bias[0] = 4.0;
        assert_eq!(param_norm(&p), 5.0);
    }

    #[test]
    fn projection() {
        let arch = tanh_arch(vec![2, 3, 1]);
        let p = init_uniform_ball(&arch.widths, 1.0, 1);
        let mut big = p.clone();
        big.scale(2.0 / param_norm(&p));
        let proj = project_to_ball(&big, 1.0, 1.0);
        assert!((param_norm(&proj) - 1.0).abs() < 1e-15);
        let mut small = p.clone();
        small.scale(0.1 / param_norm(&p));
        assert_eq!(project_to_ball(&small, 1.0, 1.0), small);
        let once = project_to_ball(&big, 1.0, 0.999);
        assert_eq!(project_to_ball(&once, 1.0, 0.999), once);
    }

    #[test]
    fn flat_roundtrip_and_ball_init() {
        let widths = [3, 4, 2, 1];
        for seed in 0..20 {
            let p = init_uniform_ball(&widths, 1.5, seed);
            assert!(param_norm(&p) < 1.5);
            assert_eq!(Params::from_flat(&widths, &p.to_flat()).unwrap(), p);
        }
        assert!(Params::from_flat(&widths, &[0.0; 3]).is_err());
    }

    #[test]
    fn shape_errors() {
        let arch = tanh_arch(vec![2, 3, 1]);
        let p = Params::zeros(&[2, 2, 1]);
        assert!(forward(&p, &arch, &[0.0, 0.0]).is_err());
        let p = Params::zeros(&arch.widths);
        assert!(forward(&p, &arch, &[0.0]).is_err());
    }
}
