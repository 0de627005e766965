//! Sampled lower bounds on parameter-space Lipschitz constants, and an
//! explicit network pair whose difference quotient is known in closed form.
//!
//! Every pair is a pure function of `(seed, pair_index)`, so estimates over
//! index ranges can be computed in any order (or in parallel) and merged
//! into the same result.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationEnvelope, ActivationKind};
use crate::bounds::ArchitectureSpec;
use crate::error::{invalid, Error, Result};
use crate::math::{abs, dist, norm, powi, sqrt};
use crate::network::{self, gaussian_direction, uniform_ball_point, Params};

/// How parameter pairs are drawn inside the open `B_Ω` ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingMode {
    /// Two independent uniform points.
    GlobalPairs,
    /// A uniform base point and a second point at distance `h` in a random direction.
    LocalPerturbation { h: f64 },
    /// Cycles through global pairs, local perturbations with `h = 1e-2`
    /// and `h = 1e-4`, and single-coordinate perturbations.
    Mixed,
    /// Perturbations of size `h` along one fixed direction.
    Directed { direction: Vec<f64>, h: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSampler {
    pub dim: usize,
    pub b_omega: f64,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl PairSampler {
    pub fn new(dim: usize, b_omega: f64, seed: u64, mode: SamplingMode) -> Result<Self> {
        if dim == 0 {
            return Err(invalid!("parameter dimension must be positive"));
        }
        if !(b_omega.is_finite() && b_omega > 0.0) {
            return Err(invalid!("b_omega must be positive and finite, got {b_omega}"));
        }
        match &mode {
            SamplingMode::LocalPerturbation { h } | SamplingMode::Directed { h, .. }
                if !(h.is_finite() && *h > 0.0) =>
            {
                return Err(invalid!("perturbation size must be positive, got {h}"));
            }
            _ => {}
        }
        if let SamplingMode::Directed { direction, .. } = &mode {
            if direction.len() != dim || !(norm(direction) > 0.0) {
                return Err(invalid!("direction must be a nonzero vector of length {dim}"));
            }
        }
        Ok(Self { dim, b_omega, seed, mode })
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// The pair with the given index; both points lie in the open ball.
    pub fn pair(&self, index: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = self.rng(index);
        match &self.mode {
            SamplingMode::GlobalPairs => self.global(&mut rng),
            SamplingMode::LocalPerturbation { h } => {
                let dir = gaussian_direction(&mut rng, self.dim);
                self.local(&mut rng, &dir, *h)
            }
            SamplingMode::Mixed => match index % 4 {
                0 => self.global(&mut rng),
                1 | 2 => {
                    let h = if index % 4 == 1 { 1e-2 } else { 1e-4 };
                    let dir = gaussian_direction(&mut rng, self.dim);
                    self.local(&mut rng, &dir, h)
                }
                _ => {
                    let mut dir = vec![0.0; self.dim];
                    dir[rng.random_range(0..self.dim)] = 1.0;
                    self.local(&mut rng, &dir, 1e-3)
                }
            },
            SamplingMode::Directed { direction, h } => {
                let n = norm(direction);
                let dir: Vec<f64> = direction.iter().map(|d| d / n).collect();
                self.local(&mut rng, &dir, *h)
            }
        }
    }

    fn global(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let a = uniform_ball_point(rng, self.dim, self.b_omega);
        let b = uniform_ball_point(rng, self.dim, self.b_omega);
        (a, b)
    }

    fn local(&self, rng: &mut ChaCha8Rng, dir: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
        let h = h.min(0.5 * self.b_omega);
        let base = uniform_ball_point(rng, self.dim, self.b_omega - h);
        let other = base.iter().zip(dir).map(|(b, d)| b + h * d).collect();
        (base, other)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub max_ratio: f64,
    pub argmax_index: Option<u64>,
    pub argmax_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub n_pairs: u64,
    /// Pairs skipped because the points coincided.
    pub n_degenerate: u64,
    /// Pairs skipped because the map returned a non-finite value.
    pub n_nonfinite: u64,
    pub seed: u64,
}

impl LipschitzEstimate {
    pub fn empty(seed: u64) -> Self {
        Self {
            max_ratio: 0.0,
            argmax_index: None,
            argmax_pair: None,
            n_pairs: 0,
            n_degenerate: 0,
            n_nonfinite: 0,
            seed,
        }
    }

    /// Combines estimates over disjoint index ranges; ties go to the lower index.
    pub fn merge(mut self, other: LipschitzEstimate) -> LipschitzEstimate {
        let take = match (self.argmax_index, other.argmax_index) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => other.max_ratio > self.max_ratio || (other.max_ratio == self.max_ratio && b < a),
        };
        if take {
            self.max_ratio = other.max_ratio;
            self.argmax_index = other.argmax_index;
            self.argmax_pair = other.argmax_pair;
        }
        self.n_pairs += other.n_pairs;
        self.n_degenerate += other.n_degenerate;
        self.n_nonfinite += other.n_nonfinite;
        self
    }
}

/// `max ‖f(a) − f(b)‖ / ‖a − b‖` over pairs `start..end` of the sampler.
/// Vector values are compared in the Euclidean (Frobenius) norm.
pub fn estimate_range<F>(f: &F, sampler: &PairSampler, start: u64, end: u64) -> Result<LipschitzEstimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut est = LipschitzEstimate::empty(sampler.seed);
    for index in start..end {
        est.n_pairs += 1;
        let (a, b) = sampler.pair(index);
        let d = dist(&a, &b);
        if !(d > 0.0) {
            est.n_degenerate += 1;
            continue;
        }
        let (fa, fb) = (f(&a)?, f(&b)?);
        if fa.len() != fb.len() {
            return Err(Error::ShapeMismatch(alloc::format!("map returned lengths {} and {}", fa.len(), fb.len())));
        }
        let ratio = dist(&fa, &fb) / d;
        if !ratio.is_finite() {
            est.n_nonfinite += 1;
            continue;
        }
        if est.argmax_index.is_none() || ratio > est.max_ratio {
            est.max_ratio = ratio;
            est.argmax_index = Some(index);
            est.argmax_pair = Some((a, b));
        }
    }
    Ok(est)
}

/// Sampled lower bound on the Lipschitz constant of `f` over the ball.
pub fn empirical_lipschitz<F>(f: &F, sampler: &PairSampler, n_pairs: u64) -> Result<LipschitzEstimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if n_pairs == 0 {
        return Err(invalid!("need at least one pair"));
    }
    estimate_range(f, sampler, 0, n_pairs)
}

/// Same as [`empirical_lipschitz`], for a map returning a gradient or Jacobian.
pub fn empirical_grad_lipschitz<F>(grad: &F, sampler: &PairSampler, n_pairs: u64) -> Result<LipschitzEstimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    empirical_lipschitz(grad, sampler, n_pairs)
}

/// `Θ ↦ N_Θ(x)` on flat parameters.
pub fn output_map<'a>(arch: &'a ArchitectureSpec, x: &'a [f64]) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |theta| network::output(&Params::from_flat(&arch.widths, theta)?, arch, x)
}

/// `Θ ↦ ∇_Θ N_Θ(x)` on flat parameters.
pub fn output_jacobian_map<'a>(arch: &'a ArchitectureSpec, x: &'a [f64]) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |theta| network::output_jacobian(&Params::from_flat(&arch.widths, theta)?, arch, x)
}

/// `Θ ↦ Φ(Θ)` as a one-element vector.
pub fn objective_map<'a>(
    arch: &'a ArchitectureSpec,
    samples: &'a [network::Sample],
    head: &'a network::LossHead,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |theta| {
        let p = Params::from_flat(&arch.widths, theta)?;
        Ok(vec![network::objective_value(&p, arch, samples, head)?])
    }
}

/// `Θ ↦ ∇Φ(Θ)`.
pub fn objective_gradient_map<'a>(
    arch: &'a ArchitectureSpec,
    samples: &'a [network::Sample],
    head: &'a network::LossHead,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |theta| network::objective_gradient(&Params::from_flat(&arch.widths, theta)?, arch, samples, head)
}

/// Flat direction along which an affine map `(A, b) ↦ A x + b` attains its
/// Lipschitz constant `√(‖x‖² + 1)`: `ΔA = u xᵀ`, `Δb = u` for a unit `u`.
pub fn affine_tight_direction(x: &[f64], out_dim: usize) -> Vec<f64> {
    let u = 1.0 / sqrt(out_dim as f64);
    let mut dir = Vec::with_capacity(out_dim * (x.len() + 1));
    for _ in 0..out_dim {
        dir.extend(x.iter().map(|xi| u * xi));
    }
    dir.resize(dir.len() + out_dim, u);
    dir
}

/// Pair of one-unit-per-layer networks whose difference quotient of the
/// last hidden layer output is known exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct WorstCase {
    pub arch: ArchitectureSpec,
    pub theta: Params,
    pub theta_tilde: Params,
    /// `c^m (B_Ω / √(m−1))^{m−1}`, the supremum the construction approaches.
    pub exact_ratio: f64,
    /// `‖N_m(Θ) − N_m(Θ̃)‖ / ‖Θ − Θ̃‖` evaluated on the pair.
    pub observed_ratio: f64,
}

/// Relative shrink of the weights `α_u` off the sphere, so that `β_1 > 0`
/// fits inside the open ball.
const WORST_CASE_SHRINK: f64 = 1e-12;

/// Builds `Θ = (α, β)`, `Θ̃ = (α, −β)` with `α = (0, α_2, …, α_m)`,
/// `β = (β_1, 0, …, 0)` and `α_u ≈ B_Ω/√(m−1)`, the maximizer of `Π α_u` on
/// the sphere. The saturated-linear activation `c · clamp(x, −R, R)` stays
/// in its linear region, so `N_m(Θ) − N_m(Θ̃) = 2 β_1 c^m Π α_u`.
pub fn worst_case_construction(m: usize, c: f64, r: f64, b_omega: f64) -> Result<WorstCase> {
    if m < 2 {
        return Err(invalid!("worst case construction needs m >= 2, got {m}"));
    }
    if !(c > 0.0 && c.is_finite() && r > 0.0 && r.is_finite() && b_omega > 0.0 && b_omega.is_finite()) {
        return Err(invalid!("need positive finite c, R and b_omega"));
    }
    if !(r > powi(c * b_omega, m as u32)) {
        return Err(invalid!("need R > (c B_Omega)^m so the construction stays unsaturated"));
    }
    let kind = ActivationKind::SaturatedLinear { c, r };
    let arch = ArchitectureSpec::uniform(vec![1; m + 2], ActivationEnvelope::saturated_linear(c, r))?;

    let alpha = b_omega / sqrt((m - 1) as f64) * sqrt(1.0 - WORST_CASE_SHRINK);
    let alpha_sq: f64 = (m - 1) as f64 * alpha * alpha;
    let beta1 = 0.9 * sqrt(b_omega * b_omega - alpha_sq);
    let build = |b1: f64| {
        let mut p = Params::zeros(&arch.widths);
        p.layers[0].bias[0] = b1;
        for u in 2..=m {
            p.layers[u - 1].weight[0] = alpha;
        }
        p
    };
    let theta = build(beta1);
    let theta_tilde = build(-beta1);

    let x = [0.0];
    let ta = network::forward(&theta, &arch, &x)?;
    let tb = network::forward(&theta_tilde, &arch, &x)?;
    let linear = kind.linear_region().unwrap();
    for trace in [&ta, &tb] {
        if trace.pre_activations[..m].iter().flatten().any(|z| abs(*z) > linear) {
            return Err(invalid!("construction left the linear region of the activation"));
        }
    }
    let num = dist(&ta.post_activations[m - 1], &tb.post_activations[m - 1]);
    let den = dist(&theta.to_flat(), &theta_tilde.to_flat());
    let exact_ratio = powi(c, m as u32) * powi(b_omega / sqrt((m - 1) as f64), (m - 1) as u32);
    Ok(WorstCase { arch, theta, theta_tilde, exact_ratio, observed_ratio: num / den })
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn finite_diff_gradient<F>(mut f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid!("step must be positive, got {h}"));
    }
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let up = f(&x)?;
        x[i] = point[i] - h;
        let down = f(&x)?;
        x[i] = point[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("function value at coordinate {i}")));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}
