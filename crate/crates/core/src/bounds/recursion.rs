use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::lemma::{step, StepHead, Upstream};
use super::moments::{poly_step, Poly, PolyUpstream};
use super::{
    inputs_digest, ArchitectureSpec, BoundInputs, Certificate, LayerBounds, LossEnvelope, Method, SampleNorms,
};
use crate::error::{invalid, Result};
use crate::math::sqrt;

/// Layer constants for one input norm plus the network-level `L_N`, `L_∇N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkBounds {
    pub per_layer: Vec<LayerBounds>,
    #[serde(with = "crate::serde_float")]
    pub l_n: f64,
    #[serde(with = "crate::serde_float")]
    pub l_grad_n: f64,
}

/// Layer recursion for a single sample with `‖ζ_x‖ = s`.
pub fn network_certificate(arch: &ArchitectureSpec, inputs: &BoundInputs, s: f64) -> Result<NetworkBounds> {
    arch.validate()?;
    inputs.validate(arch.depth())?;
    if !(s.is_finite() && s >= 0.0) {
        return Err(invalid!("input norm must be finite and nonnegative, got {s}"));
    }
    Ok(network_bounds(arch, &inputs.budgets(arch.depth()), s))
}

/// Objective-level certificate with the default per-layer recursion.
pub fn loss_certificate(arch: &ArchitectureSpec, inputs: &BoundInputs, loss: &LossEnvelope) -> Result<Certificate> {
    arch.validate()?;
    inputs.validate(arch.depth())?;
    loss.validate()?;
    let c = evaluate(arch, &inputs.budgets(arch.depth()), &inputs.sample_norms, loss)?;
    Ok(c.into_certificate(Method::Recursive, inputs_digest(Method::Recursive, arch, inputs, loss)))
}

pub(crate) fn hidden_layers(arch: &ArchitectureSpec, budgets: &[f64], s: f64) -> Vec<LayerBounds> {
    let m = arch.depth();
    let mut out = Vec::with_capacity(m);
    let mut prev = Upstream::input(s);
    for u in 1..=m {
        let env = &arch.activations[u - 1];
        let width = arch.widths[u];
        let d = budgets[u - 1];
        let r = step(&prev, &StepHead::activation(env, width), d);
        let b_n = match r.b {
            Some(b) => b,
            // ‖σ(z)‖ ≤ ‖z‖ + √ℓ ε and ‖Cx + d‖ ≤ ‖(C, d)‖ √(‖x‖² + 1)
            None => d * sqrt(prev.b * prev.b + 1.0) + sqrt(width as f64) * env.relu_epsilon,
        };
        let lb = LayerBounds { l_n: r.l, l_grad_n: r.l_grad, b_n, b_grad_n: r.l, alpha: r.m1, beta: r.m2 };
        prev = Upstream::layer(&lb);
        out.push(lb);
    }
    out
}

pub(crate) fn last_upstream(per_layer: &[LayerBounds], s: f64) -> Upstream {
    per_layer.last().map(Upstream::layer).unwrap_or_else(|| Upstream::input(s))
}

pub(crate) fn network_bounds(arch: &ArchitectureSpec, budgets: &[f64], s: f64) -> NetworkBounds {
    let per_layer = hidden_layers(arch, budgets, s);
    let head = step(&last_upstream(&per_layer, s), &StepHead::identity(arch.output_dim()), budgets[arch.depth()]);
    NetworkBounds { per_layer, l_n: head.l, l_grad_n: head.l_grad }
}

/// All constants of a certificate before provenance is attached.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Constants {
    pub per_layer: Vec<LayerBounds>,
    pub l_n: f64,
    pub l_grad_n: f64,
    pub l_phi: f64,
    pub l_grad_phi: f64,
}

impl Constants {
    pub fn into_certificate(self, method: Method, digest: alloc::string::String) -> Certificate {
        let mut cert = Certificate {
            per_layer: self.per_layer,
            l_n_final: self.l_n,
            l_grad_n_final: self.l_grad_n,
            l_phi: self.l_phi,
            l_grad_phi: self.l_grad_phi,
            b_grad_phi: self.l_phi,
            method,
            inputs_digest: digest,
            overflow: false,
            refinement: None,
        };
        cert.finish_flags();
        cert
    }
}

/// Evaluates every constant for the given budgets. Inputs are assumed valid.
pub(crate) fn evaluate(
    arch: &ArchitectureSpec,
    budgets: &[f64],
    norms: &SampleNorms,
    loss: &LossEnvelope,
) -> Result<Constants> {
    match norms {
        SampleNorms::Finite(norms) => Ok(evaluate_finite(arch, budgets, norms, loss)),
        SampleNorms::Moments { second, fourth } => evaluate_moments(arch, budgets, &[1.0, *second, *fourth], loss),
    }
}

fn evaluate_finite(arch: &ArchitectureSpec, budgets: &[f64], norms: &[f64], loss: &LossEnvelope) -> Constants {
    let m = arch.depth();
    let loss_head = StepHead::loss(loss);
    let (mut sum_l, mut sum_g) = (0.0, 0.0);
    for &s in norms {
        let layers = hidden_layers(arch, budgets, s);
        let r = step(&last_upstream(&layers, s), &loss_head, budgets[m]);
        sum_l += r.l;
        sum_g += r.l_grad;
    }
    let n = norms.len() as f64;
    // network constants are nondecreasing in S, so the largest norm covers every sample
    let s_max = norms.iter().copied().fold(0.0, f64::max);
    let net = network_bounds(arch, budgets, s_max);
    Constants {
        per_layer: net.per_layer,
        l_n: net.l_n,
        l_grad_n: net.l_grad_n,
        l_phi: sum_l / n,
        l_grad_phi: sum_g / n,
    }
}

fn evaluate_moments(
    arch: &ArchitectureSpec,
    budgets: &[f64],
    moments: &[f64],
    loss: &LossEnvelope,
) -> Result<Constants> {
    let m = arch.depth();
    let mut prev = PolyUpstream::input();
    let mut per_layer = Vec::with_capacity(m);
    for u in 1..=m {
        let env = &arch.activations[u - 1];
        let width = arch.widths[u];
        let d = budgets[u - 1];
        let r = poly_step(&prev, env.sigma_p_max, env.sigma_pp_max, width, d);
        let b = if env.uses_norm_recursion() {
            // (D √(B²+1) + ε)² ≤ (1 + ε) D² (B² + 1) + ε + ε²
            let eps = sqrt(width as f64) * env.relu_epsilon;
            prev.b.plus(1.0).scale((1.0 + eps) * d * d).plus(eps + eps * eps)
        } else {
            Poly::constant(width as f64 * env.sigma_max * env.sigma_max)
        };
        let l_grad = r.l_grad();
        per_layer.push(LayerBounds {
            l_n: r.l.sqrt_expectation(moments)?,
            l_grad_n: l_grad.sqrt_expectation(moments)?,
            b_n: b.sqrt_expectation(moments)?,
            b_grad_n: 0.0,
            alpha: r.m1.expectation(moments)?,
            beta: r.m2.expectation(moments)?,
        });
        prev = PolyUpstream { l: r.l.clone(), l_grad, b, b_grad: r.l };
    }
    for lb in &mut per_layer {
        lb.b_grad_n = lb.l_n;
    }
    let id = poly_step(&prev, 1.0, 0.0, arch.output_dim(), budgets[m]);
    let head = poly_step(&prev, loss.g_p_max, loss.g_pp_max, 1, budgets[m]);
    Ok(Constants {
        per_layer,
        l_n: id.l.sqrt_expectation(moments)?,
        l_grad_n: id.l_grad().sqrt_expectation(moments)?,
        l_phi: head.l.sqrt_expectation(moments)?,
        l_grad_phi: head.l_grad().sqrt_expectation(moments)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationEnvelope;

    fn tanh_111() -> ArchitectureSpec {
        ArchitectureSpec::uniform(alloc::vec![1, 1, 1], ActivationEnvelope::tanh()).unwrap()
    }

    #[test]
    fn affine_network_at_origin() {
        let arch = ArchitectureSpec::new(alloc::vec![3, 2], alloc::vec![]).unwrap();
        let r = network_certificate(&arch, &BoundInputs::single(2.5, 0.0), 0.0).unwrap();
        assert_eq!(r.l_n, 1.0);
        assert_eq!(r.l_grad_n, 0.0);
        assert!(r.per_layer.is_empty());
        let r = network_certificate(&arch, &BoundInputs::single(2.5, 2.0), 2.0).unwrap();
        assert_eq!(r.l_n, 5f64.sqrt());
    }

    #[test]
    fn one_hidden_tanh_unit() {
        let r = network_certificate(&tanh_111(), &BoundInputs::single(1.0, 0.0), 0.0).unwrap();
        assert_eq!(r.per_layer[0].l_n, 1.0);
        assert_eq!(r.per_layer[0].b_n, 1.0);
        assert_eq!(r.l_n, 3f64.sqrt());
    }

    #[test]
    fn flat_activations_zero_every_layer_constant() {
        let mut env = ActivationEnvelope::tanh();
        env.sigma_p_max = 0.0;
        env.sigma_pp_max = 0.0;
        let arch = ArchitectureSpec::uniform(alloc::vec![2, 3, 4, 1], env).unwrap();
        let r = network_certificate(&arch, &BoundInputs::single(1.5, 2.0), 2.0).unwrap();
        assert!(r.per_layer.iter().all(|l| l.l_n == 0.0 && l.l_grad_n == 0.0));
        let b = r.per_layer[1].b_n;
        assert_eq!(r.l_n, (b * b + 1.0).sqrt());
    }

    #[test]
    fn linear_loss_head_reduces_to_network_constant() {
        let arch = ArchitectureSpec::uniform(alloc::vec![2, 3, 1], ActivationEnvelope::tanh()).unwrap();
        let inputs = BoundInputs::single(1.5, 0.8);
        let loss = LossEnvelope::from_derivative_bounds(1.0, 0.0);
        let cert = loss_certificate(&arch, &inputs, &loss).unwrap();
        let net = network_certificate(&arch, &inputs, 0.8).unwrap();
        assert_eq!(cert.l_phi, net.l_n);
        let top = net.per_layer[0];
        let beta = (1.5 * top.l_grad_n).powi(2) + top.l_n.powi(2);
        let alpha = 3.0 * top.l_n.powi(2);
        assert!((cert.l_grad_phi - (alpha + beta).sqrt()).abs() < 1e-14 * cert.l_grad_phi);
    }

    #[test]
    fn smoothed_relu_uses_norm_recursion() {
        let delta = 0.4;
        let env = ActivationEnvelope::smoothed_relu(delta);
        let arch = ArchitectureSpec::uniform(alloc::vec![1, 1, 1, 1], env).unwrap();
        let r = network_certificate(&arch, &BoundInputs::single(2.0, 1.0), 1.0).unwrap();
        let eps = delta / 4.0;
        let b1 = 2.0 * 2f64.sqrt() + eps;
        assert_eq!(r.per_layer[0].b_n, b1);
        assert_eq!(r.per_layer[1].b_n, 2.0 * (b1 * b1 + 1.0).sqrt() + eps);
    }
}
