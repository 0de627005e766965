//! Non-recursive upper bounds on the squared layer constants.
//!
//! All layers share one envelope: the largest width `ℓ` and the largest
//! `σ_max`, `σ'_max`, `σ''_max` over the hidden layers, with `B_Ω` as every
//! layer budget. With `q = 2ℓ²σ'²B²` and `γ_v` the leftover of relaxing
//! `(x + y)² ≤ 2x² + 2y²` in `β_v`:
//!
//! ```text
//! L_{N_u}²  ≤ B^{2(u-1)} σ'^{2u} (S²+1) + Σ_{k=1}^{u-1} B^{2(k-1)} σ'^{2k} (ℓσ²+1)
//! L_{∇N_u}² ≤ q^{u-1} σ''² (S²+1)(3S²+2) + Σ_{k=1}^{u-1} q^{k-1} (α_{u-k+1} + γ_{u-k+1})
//! ```
//!
//! where `α_v`, `γ_v` are evaluated at the closed-form `L_{N_{v-1}}` and
//! `B_{N_{v-1}} = √ℓ σ_max`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::lemma::{step, StepHead, Upstream};
use super::recursion::Constants;
use super::{
    inputs_digest, ArchitectureSpec, BoundInputs, Certificate, LayerBounds, LossEnvelope, Method, SampleNorms,
};
use crate::error::{invalid, Result};
use crate::math::{powi, sqrt};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormBounds {
    /// Upper bounds on `L_{N_u}²`, `u = 1..=m`.
    #[serde(with = "crate::serde_float::vec")]
    pub l_n_sq: Vec<f64>,
    /// Upper bounds on `L_{∇N_u}²`, `u = 1..=m`.
    #[serde(with = "crate::serde_float::vec")]
    pub l_grad_n_sq: Vec<f64>,
    /// The `α_u` used (`α_1` is the whole first-layer bound).
    #[serde(with = "crate::serde_float::vec")]
    pub alpha: Vec<f64>,
}

struct Uniform {
    l: f64,
    sigma: f64,
    sp: f64,
    spp: f64,
    b: f64,
}

fn uniform_envelope(arch: &ArchitectureSpec, inputs: &BoundInputs) -> Result<Uniform> {
    if arch.activations.iter().any(|e| e.uses_norm_recursion()) {
        return Err(invalid!("closed form bounds need bounded activations (no smoothed_relu)"));
    }
    let fold = |f: fn(&crate::ActivationEnvelope) -> f64| arch.activations.iter().map(f).fold(0.0, f64::max);
    Ok(Uniform {
        l: arch.max_hidden_width() as f64,
        sigma: fold(|e| e.sigma_max),
        sp: fold(|e| e.sigma_p_max),
        spp: fold(|e| e.sigma_pp_max),
        b: inputs.b_omega,
    })
}

pub fn closed_form_bounds(arch: &ArchitectureSpec, inputs: &BoundInputs, s: f64) -> Result<ClosedFormBounds> {
    arch.validate()?;
    inputs.validate(arch.depth())?;
    if !(s.is_finite() && s >= 0.0) {
        return Err(invalid!("input norm must be finite and nonnegative, got {s}"));
    }
    let env = uniform_envelope(arch, inputs)?;
    Ok(solve(arch.depth(), &env, s))
}

fn solve(m: usize, e: &Uniform, s: f64) -> ClosedFormBounds {
    let s2 = s * s;
    let (b2, sp2, spp2) = (e.b * e.b, e.sp * e.sp, e.spp * e.spp);
    let bn2 = e.l * e.sigma * e.sigma;

    let l_n_sq: Vec<f64> = (1..=m)
        .map(|u| {
            let head = powi(b2, (u - 1) as u32) * powi(sp2, u as u32) * (s2 + 1.0);
            let tail: f64 = (1..u).map(|k| powi(b2, (k - 1) as u32) * powi(sp2, k as u32) * (bn2 + 1.0)).sum();
            head + tail
        })
        .collect();

    // α_v and γ_v for v = 2..=m at the closed-form L_{N_{v-1}}²
    let mut alpha = Vec::with_capacity(m);
    let mut gamma = Vec::with_capacity(m);
    let first = spp2 * (s2 + 1.0) * (3.0 * s2 + 2.0);
    if m > 0 {
        alpha.push(first);
        gamma.push(0.0);
    }
    for v in 2..=m {
        let ln2 = l_n_sq[v - 2];
        let a = f64::max(
            3.0 * ln2 * (sp2 * e.l + spp2 * b2 * bn2) + 2.0 * spp2 * b2 * ln2,
            spp2 * (bn2 + 1.0) * (3.0 * bn2 + 2.0),
        );
        let t = e.l * e.sp + e.b * e.spp * sqrt(bn2 + 1.0);
        let g = 2.0 * ln2 * spp2 * b2 * b2 * ln2 + ln2 * t * t;
        alpha.push(a);
        gamma.push(g);
    }

    let q = 2.0 * e.l * e.l * sp2 * b2;
    let l_grad_n_sq = (1..=m)
        .map(|u| {
            let head = powi(q, (u - 1) as u32) * first;
            let tail: f64 = (1..u).map(|k| powi(q, (k - 1) as u32) * (alpha[u - k] + gamma[u - k])).sum();
            head + tail
        })
        .collect();

    ClosedFormBounds { l_n_sq, l_grad_n_sq, alpha }
}

/// Certificate whose layer constants come from the closed forms; the output
/// and loss heads are then applied to them exactly as in the recursion.
/// Needs a finite dataset.
pub fn closed_form_certificate(
    arch: &ArchitectureSpec,
    inputs: &BoundInputs,
    loss: &LossEnvelope,
) -> Result<Certificate> {
    arch.validate()?;
    inputs.validate(arch.depth())?;
    loss.validate()?;
    let norms = match &inputs.sample_norms {
        SampleNorms::Finite(n) => n,
        SampleNorms::Moments { .. } => return Err(invalid!("closed form certificate needs finite sample norms")),
    };
    let env = uniform_envelope(arch, inputs)?;
    let m = arch.depth();
    let layers_at = |s: f64| -> Vec<LayerBounds> {
        let cf = solve(m, &env, s);
        let b_n = sqrt(env.l) * env.sigma;
        (0..m)
            .map(|i| {
                let l_n = sqrt(cf.l_n_sq[i]);
                LayerBounds {
                    l_n,
                    l_grad_n: sqrt(cf.l_grad_n_sq[i]),
                    b_n,
                    b_grad_n: l_n,
                    alpha: cf.alpha[i],
                    beta: (cf.l_grad_n_sq[i] - cf.alpha[i]).max(0.0),
                }
            })
            .collect()
    };
    let top = |layers: &[LayerBounds], s: f64| layers.last().map(Upstream::layer).unwrap_or_else(|| Upstream::input(s));

    let (mut sum_l, mut sum_g) = (0.0, 0.0);
    for &s in norms {
        let layers = layers_at(s);
        let r = step(&top(&layers, s), &StepHead::loss(loss), env.b);
        sum_l += r.l;
        sum_g += r.l_grad;
    }
    let n = norms.len() as f64;
    let s_max = norms.iter().copied().fold(0.0, f64::max);
    let per_layer = layers_at(s_max);
    let id = step(&top(&per_layer, s_max), &StepHead::identity(arch.output_dim()), env.b);
    let c = Constants { per_layer, l_n: id.l, l_grad_n: id.l_grad, l_phi: sum_l / n, l_grad_phi: sum_g / n };
    Ok(c.into_certificate(Method::ClosedForm, inputs_digest(Method::ClosedForm, arch, inputs, loss)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationEnvelope;
    use crate::bounds::network_certificate;

    #[test]
    fn first_layer_matches_recursion() {
        let arch = ArchitectureSpec::uniform(alloc::vec![2, 3, 1], ActivationEnvelope::tanh()).unwrap();
        for s in [0.0, 0.3, 2.0] {
            let inputs = BoundInputs::single(1.7, s);
            let cf = closed_form_bounds(&arch, &inputs, s).unwrap();
            let rec = network_certificate(&arch, &inputs, s).unwrap();
            let l = rec.per_layer[0].l_n;
            let g = rec.per_layer[0].l_grad_n;
            assert!((cf.l_n_sq[0] - l * l).abs() <= 1e-14 * cf.l_n_sq[0]);
            assert!((cf.l_grad_n_sq[0] - g * g).abs() <= 1e-14 * cf.l_grad_n_sq[0]);
        }
    }

    #[test]
    fn unit_ratio_geometric_sum() {
        // σ' = B = 1 and ℓσ² + 1 = 2: L_{N_3}² ≤ S² + 5
        let arch = ArchitectureSpec::uniform(alloc::vec![1, 1, 1, 1, 1], ActivationEnvelope::tanh()).unwrap();
        for s in [0.0, 1.0, 2.5] {
            let cf = closed_form_bounds(&arch, &BoundInputs::single(1.0, s), s).unwrap();
            assert_eq!(cf.l_n_sq[2], s * s + 5.0);
        }
    }

    #[test]
    fn rejects_relu() {
        let arch = ArchitectureSpec::uniform(alloc::vec![1, 2, 1], ActivationEnvelope::smoothed_relu(0.1)).unwrap();
        assert!(closed_form_bounds(&arch, &BoundInputs::single(1.0, 0.0), 0.0).is_err());
    }
}
