//! Evaluation of the parameter-space Lipschitz bounds.
//!
//! Every bound is built from one composition step ([`lemma_step`]): given
//! Lipschitz and sup bounds for an upstream map `κ ↦ ρ_κ(ζ)` and its
//! gradient, it bounds `(κ, C, d) ↦ ψ(C ρ_κ(ζ) + d)` and its gradient. The
//! layer recursion ([`network_certificate`]) chains this step through the
//! hidden layers, closes with an identity head for the network output, and
//! with a loss head for the per-sample cost ([`loss_certificate`]).

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationEnvelope;
use crate::digest::DigestBuilder;
use crate::error::{invalid, Result};

mod closed_form;
mod lemma;
mod moments;
mod recursion;
mod refine;
mod step;

pub use closed_form::{closed_form_bounds, closed_form_certificate, ClosedFormBounds};
pub use lemma::{lemma_step, StepBounds, StepHead, Upstream};
pub use moments::Poly;
pub use recursion::{loss_certificate, network_certificate, NetworkBounds};
pub use refine::{refine_over_layer_budgets, ConstantSearch, RefinementReport, SearchConfig};
pub use step::{adagrad_params_for, derive_adagrad_params, derive_gd_step, AdagradParams};

/// Bounds on the loss `g(x, y)` in its first argument.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEnvelope {
    /// `sup ‖∂g/∂x‖`
    pub g_p_max: f64,
    /// `sup ‖∂²g/∂x²‖`
    pub g_pp_max: f64,
    /// Lipschitz constant of `x ↦ g(x, y)` (controlled-ODE path).
    pub lip_g: f64,
    /// Lipschitz constant of `x ↦ ∂g/∂x (x, y)` (controlled-ODE path).
    pub lip_dg: f64,
}

impl LossEnvelope {
    /// Envelope whose Lipschitz constants coincide with the derivative bounds.
    pub fn from_derivative_bounds(g_p_max: f64, g_pp_max: f64) -> Self {
        Self { g_p_max, g_pp_max, lip_g: g_p_max, lip_dg: g_pp_max }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("g_p_max", self.g_p_max), ("g_pp_max", self.g_pp_max), ("lip_g", self.lip_g), ("lip_dg", self.lip_dg)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid!("loss envelope {name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Layer widths `[ℓ_0, …, ℓ_{m+1}]` and one activation envelope per hidden
/// layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<ActivationEnvelope>,
}

impl ArchitectureSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<ActivationEnvelope>) -> Result<Self> {
        let arch = Self { widths, activations };
        arch.validate()?;
        Ok(arch)
    }

    /// Same activation on every hidden layer.
    pub fn uniform(widths: Vec<usize>, activation: ActivationEnvelope) -> Result<Self> {
        let m = widths.len().saturating_sub(2);
        Self::new(widths, alloc::vec![activation; m])
    }

    /// Number of hidden layers `m`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    /// Parameters of affine layer `u` (1-based), weights then biases.
    pub fn layer_param_count(&self, u: usize) -> usize {
        self.widths[u] * self.widths[u - 1] + self.widths[u]
    }

    pub fn param_count(&self) -> usize {
        (1..self.widths.len()).map(|u| self.layer_param_count(u)).sum()
    }

    /// Largest hidden width `max_{1≤u≤m} ℓ_u` (1 when there are no hidden layers).
    pub fn max_hidden_width(&self) -> usize {
        self.widths[1..self.widths.len() - 1].iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(invalid!("need at least input and output widths, got {:?}", self.widths));
        }
        if self.widths.contains(&0) {
            return Err(invalid!("layer widths must be positive, got {:?}", self.widths));
        }
        if self.activations.len() != self.depth() {
            return Err(invalid!(
                "{} hidden layers need {} activation envelopes, got {}",
                self.depth(),
                self.depth(),
                self.activations.len()
            ));
        }
        for env in &self.activations {
            env.validate()?;
        }
        Ok(())
    }

    pub(crate) fn feed_digest(&self, d: &mut DigestBuilder) {
        d.usize(self.widths.len());
        for &w in &self.widths {
            d.usize(w);
        }
        for env in &self.activations {
            d.bytes(kind_tag(env).as_bytes());
            d.f64(env.sigma_max).f64(env.sigma_p_max).f64(env.sigma_pp_max).f64(env.relu_epsilon);
        }
    }
}

fn kind_tag(env: &ActivationEnvelope) -> String {
    use crate::activation::ActivationKind::*;
    match env.kind {
        Sigmoid => "sigmoid".into(),
        Tanh => "tanh".into(),
        SmoothedRelu { delta } => alloc::format!("smoothed_relu:{:016x}", delta.to_bits()),
        SaturatedLinear { c, r } => {
            alloc::format!("saturated_linear:{:016x}:{:016x}", c.to_bits(), r.to_bits())
        }
    }
}

/// Distribution of the input norm `S = ‖ζ_x‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleNorms {
    /// One norm per training sample, equally weighted.
    Finite(Vec<f64>),
    /// Only `E[S²]` and `E[S⁴]` are known.
    Moments { second: f64, fourth: f64 },
}

impl SampleNorms {
    pub fn validate(&self) -> Result<()> {
        match self {
            SampleNorms::Finite(norms) => {
                if norms.is_empty() {
                    return Err(crate::Error::EmptyDataset);
                }
                if let Some(s) = norms.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                    return Err(invalid!("sample norms must be finite and nonnegative, got {s}"));
                }
                Ok(())
            }
            SampleNorms::Moments { second, fourth } => {
                if !(second.is_finite() && fourth.is_finite()) {
                    return Err(crate::Error::NonFinite(alloc::format!("moments E[S^2]={second}, E[S^4]={fourth}")));
                }
                if *second < 0.0 || *fourth < second * second * (1.0 - 1e-12) {
                    return Err(invalid!(
                        "inconsistent moments: need 0 <= E[S^2] and E[S^2]^2 <= E[S^4], got {second}, {fourth}"
                    ));
                }
                Ok(())
            }
        }
    }

    /// Largest sample norm; `None` in moments mode.
    pub fn max_norm(&self) -> Option<f64> {
        match self {
            SampleNorms::Finite(norms) => Some(norms.iter().copied().fold(0.0, f64::max)),
            SampleNorms::Moments { .. } => None,
        }
    }
}

/// Parameter-norm budget and input-norm data shared by all bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Radius `B_Ω` of the open parameter ball.
    pub b_omega: f64,
    /// Optional per-layer norm budgets `D_1, …, D_{m+1}` with `Σ D_u² ≤ B_Ω²`.
    #[serde(default)]
    pub layer_budgets: Option<Vec<f64>>,
    pub sample_norms: SampleNorms,
}

impl BoundInputs {
    pub fn new(b_omega: f64, sample_norms: SampleNorms) -> Self {
        Self { b_omega, layer_budgets: None, sample_norms }
    }

    /// Single fixed input norm `s`.
    pub fn single(b_omega: f64, s: f64) -> Self {
        Self::new(b_omega, SampleNorms::Finite(alloc::vec![s]))
    }

    pub fn with_budgets(mut self, budgets: Vec<f64>) -> Self {
        self.layer_budgets = Some(budgets);
        self
    }

    /// Per-layer budgets, defaulting to `B_Ω` everywhere.
    pub fn budgets(&self, depth: usize) -> Vec<f64> {
        match &self.layer_budgets {
            Some(b) => b.clone(),
            None => alloc::vec![self.b_omega; depth + 1],
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.b_omega.is_finite() && self.b_omega > 0.0) {
            return Err(invalid!("b_omega must be positive and finite, got {}", self.b_omega));
        }
        if let Some(budgets) = &self.layer_budgets {
            if budgets.len() != depth + 1 {
                return Err(invalid!("expected {} layer budgets, got {}", depth + 1, budgets.len()));
            }
            if budgets.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(invalid!("layer budgets must be finite and nonnegative"));
            }
            let total: f64 = budgets.iter().map(|d| d * d).sum();
            let cap = self.b_omega * self.b_omega;
            if total > cap * (1.0 + 1e-12) {
                return Err(invalid!("sum of squared budgets {total} exceeds b_omega^2 = {cap}"));
            }
        }
        self.sample_norms.validate()
    }

    pub(crate) fn feed_digest(&self, d: &mut DigestBuilder) {
        d.f64(self.b_omega);
        match &self.layer_budgets {
            Some(b) => d.tag("budgets").f64s(b),
            None => d.tag("uniform"),
        };
        match &self.sample_norms {
            SampleNorms::Finite(n) => d.tag("finite").f64s(n),
            SampleNorms::Moments { second, fourth } => d.tag("moments").f64(*second).f64(*fourth),
        };
    }
}

/// Constants of one hidden layer `N_u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBounds {
    /// `L_{N_u}`
    #[serde(with = "crate::serde_float")]
    pub l_n: f64,
    /// `L_{∇N_u}`
    #[serde(with = "crate::serde_float")]
    pub l_grad_n: f64,
    /// `B_{N_u}`
    #[serde(with = "crate::serde_float")]
    pub b_n: f64,
    /// `B_{∇N_u}`, always equal to `l_n`.
    #[serde(with = "crate::serde_float")]
    pub b_grad_n: f64,
    /// `α_u`, the λ-block term of `L_{∇N_u}²`.
    #[serde(with = "crate::serde_float")]
    pub alpha: f64,
    /// `β_u`, the κ-block term of `L_{∇N_u}²`.
    #[serde(with = "crate::serde_float")]
    pub beta: f64,
}

impl LayerBounds {
    pub(crate) fn is_finite(&self) -> bool {
        [self.l_n, self.l_grad_n, self.b_n, self.alpha, self.beta].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Recursive,
    ClosedForm,
    RefinedBudgets,
}

/// Final constants for a network and its training objective.
///
/// With a finite dataset, `per_layer`, `l_n_final` and `l_grad_n_final`
/// describe the largest sample norm (the network constants are nondecreasing
/// in `S`), while `l_phi` and `l_grad_phi` average the per-sample constants.
/// In moments mode every field is an expectation bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub per_layer: Vec<LayerBounds>,
    #[serde(with = "crate::serde_float")]
    pub l_n_final: f64,
    #[serde(with = "crate::serde_float")]
    pub l_grad_n_final: f64,
    #[serde(with = "crate::serde_float")]
    pub l_phi: f64,
    #[serde(with = "crate::serde_float")]
    pub l_grad_phi: f64,
    /// Equals `l_phi`.
    #[serde(with = "crate::serde_float")]
    pub b_grad_phi: f64,
    pub method: Method,
    pub inputs_digest: String,
    /// Some constant overflowed to `+inf`; the certificate is valid but vacuous.
    pub overflow: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementReport>,
}

impl Certificate {
    pub(crate) fn finish_flags(&mut self) {
        self.b_grad_phi = self.l_phi;
        self.overflow = !(self.l_n_final.is_finite()
            && self.l_grad_n_final.is_finite()
            && self.l_phi.is_finite()
            && self.l_grad_phi.is_finite()
            && self.per_layer.iter().all(LayerBounds::is_finite));
    }
}

pub(crate) fn inputs_digest(
    method: Method,
    arch: &ArchitectureSpec,
    inputs: &BoundInputs,
    loss: &LossEnvelope,
) -> String {
    let mut d = DigestBuilder::new("lipcert.certificate.v1");
    d.tag(match method {
        Method::Recursive => "recursive",
        Method::ClosedForm => "closed_form",
        Method::RefinedBudgets => "refined_budgets",
    });
    arch.feed_digest(&mut d);
    inputs.feed_digest(&mut d);
    d.f64(loss.g_p_max).f64(loss.g_pp_max).f64(loss.lip_g).f64(loss.lip_dg);
    d.finish()
}

pub(crate) use lemma::mul as lemma_mul;
pub(crate) use recursion::hidden_layers as recursion_hidden_layers;
