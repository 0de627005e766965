use crate::activation::ActivationEnvelope;
use crate::bounds::{LayerBounds, LossEnvelope};
use crate::error::{invalid, Result};
use crate::math::sqrt;

/// Constants of the upstream map `κ ↦ ρ_κ(ζ)`: Lipschitz constants of the map
/// and its gradient (`l`, `l_grad`) and sup bounds of both (`b`, `b_grad`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Upstream {
    pub l: f64,
    pub l_grad: f64,
    pub b: f64,
    pub b_grad: f64,
}

impl Upstream {
    /// Base case: the raw input `ζ_x` with `‖ζ_x‖ = s` and no parameters.
    pub fn input(s: f64) -> Self {
        Self { l: 0.0, l_grad: 0.0, b: s, b_grad: 0.0 }
    }

    pub fn layer(lb: &LayerBounds) -> Self {
        Self { l: lb.l_n, l_grad: lb.l_grad_n, b: lb.b_n, b_grad: lb.b_grad_n }
    }
}

/// The map applied after the affine layer: derivative bounds `c1`, `c2`,
/// output width `n3` and optional componentwise sup bound `b3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepHead {
    pub c1: f64,
    pub c2: f64,
    pub n3: usize,
    pub b3: Option<f64>,
}

impl StepHead {
    /// Componentwise activation on a layer of width `width`. Unbounded
    /// activations leave `b3` empty; their sup bound comes from the norm
    /// recursion instead.
    pub fn activation(env: &ActivationEnvelope, width: usize) -> Self {
        let b3 = if env.uses_norm_recursion() { None } else { Some(env.sigma_max) };
        Self { c1: env.sigma_p_max, c2: env.sigma_pp_max, n3: width, b3 }
    }

    /// Identity on the output layer.
    pub fn identity(width: usize) -> Self {
        Self { c1: 1.0, c2: 0.0, n3: width, b3: None }
    }

    /// Scalar loss head; vector-to-scalar maps give the same constants with `n3 = 1`.
    pub fn loss(env: &LossEnvelope) -> Self {
        Self { c1: env.g_p_max, c2: env.g_pp_max, n3: 1, b3: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepBounds {
    /// `L_χ`
    pub l: f64,
    /// `L_∇χ = √(m1 + m2)`
    pub l_grad: f64,
    pub m1: f64,
    pub m2: f64,
    /// `B_χ = √n3 · B3` when the head is bounded.
    pub b: Option<f64>,
}

impl StepBounds {
    /// `B_∇χ`, which is always `L_χ`.
    pub fn b_grad(&self) -> f64 {
        self.l
    }
}

/// One composition step: bounds for `μ = (κ, C, d) ↦ ψ(C ρ_κ(ζ) + d)` with
/// `‖(C, d)‖ < budget`.
///
/// Inputs may be `+inf` (the result is then `+inf`, never NaN); negative or
/// NaN inputs are rejected, as is a non-finite `b3`.
pub fn lemma_step(prev: &Upstream, head: &StepHead, budget: f64) -> Result<StepBounds> {
    for (name, v) in [
        ("L1", prev.l),
        ("L2", prev.l_grad),
        ("B1", prev.b),
        ("B2", prev.b_grad),
        ("c1", head.c1),
        ("c2", head.c2),
        ("D", budget),
    ] {
        if !(v >= 0.0) {
            return Err(invalid!("{name} must be nonnegative, got {v}"));
        }
    }
    if head.n3 == 0 {
        return Err(invalid!("output width n3 must be positive"));
    }
    if let Some(b3) = head.b3 {
        if !(b3.is_finite() && b3 >= 0.0) {
            return Err(invalid!("B3 must be finite and nonnegative when B_chi is requested, got {b3}"));
        }
    }
    Ok(step(prev, head, budget))
}

/// Product that treats `0 · inf` as 0: a vanishing factor kills its term
/// in every bound below regardless of how large the other factors are.
#[inline]
pub(crate) fn mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

#[inline]
pub(crate) fn prod(xs: &[f64]) -> f64 {
    xs.iter().fold(1.0, |acc, &x| mul(acc, x))
}

/// [`lemma_step`] without input validation, for the hot loops.
pub(crate) fn step(prev: &Upstream, head: &StepHead, d: f64) -> StepBounds {
    let Upstream { l: l1, l_grad: l2, b: b1, b_grad: b2 } = *prev;
    let StepHead { c1, c2, .. } = *head;
    let n3 = head.n3 as f64;
    let (l1s, b1s, ds) = (l1 * l1, b1 * b1, d * d);
    let (c1s, c2s) = (c1 * c1, c2 * c2);

    let l = mul(c1, sqrt(mul(ds, l1s) + b1s + 1.0));

    let lam = 3.0 * mul(l1s, c1s * n3 + prod(&[c2s, ds, b1s])) + 2.0 * prod(&[c2s, ds, l1s]);
    let kap = prod(&[c2s, b1s + 1.0, 3.0 * b1s + 2.0]);
    let m1 = lam.max(kap);

    let first = prod(&[n3, c1, d, l2]) + prod(&[b2, c2, ds, l1]);
    let second = n3 * c1 + prod(&[d, c2, sqrt(b1s + 1.0)]);
    let m2 = mul(first, first) + mul(b2 * b2, second * second);

    StepBounds { l, l_grad: sqrt(m1 + m2), m1, m2, b: head.b3.map(|b3| sqrt(n3) * b3) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(s: f64, c1: f64, c2: f64, d: f64, n3: usize) -> StepBounds {
        lemma_step(&Upstream::input(s), &StepHead { c1, c2, n3, b3: None }, d).unwrap()
    }

    #[test]
    fn base_case_at_origin_is_one() {
        assert_eq!(base(0.0, 1.0, 0.3, 1.0, 1).l, 1.0);
    }

    #[test]
    fn quarter_slope_with_root_three_input() {
        // √3² rounds just below 3
        assert!((base(3f64.sqrt(), 0.25, 7.0, 2.0, 3).l - 0.5).abs() <= 1e-16);
    }

    #[test]
    fn linear_head_on_constant_input_has_flat_gradient() {
        for s in [0.0, 1.0, 5.0] {
            assert_eq!(base(s, 1.3, 0.0, 2.0, 4).l_grad, 0.0);
        }
    }

    #[test]
    fn root_ten_example() {
        // m1 = max{0, 1 * 2 * 5} = 10, m2 = 0
        let r = base(1.0, 1.0, 1.0, 1.0, 1);
        assert_eq!(r.m1, 10.0);
        assert_eq!(r.m2, 0.0);
        assert_eq!(r.l_grad, 10f64.sqrt());
    }

    #[test]
    fn gradient_bound_equals_lipschitz_constant() {
        let prev = Upstream { l: 0.7, l_grad: 1.1, b: 2.0, b_grad: 0.7 };
        let r = lemma_step(&prev, &StepHead { c1: 0.5, c2: 0.2, n3: 3, b3: Some(1.0) }, 1.5).unwrap();
        assert_eq!(r.b_grad(), r.l);
        assert_eq!(r.b, Some(3f64.sqrt()));
    }

    #[test]
    fn general_step_matches_hand_evaluation() {
        let (l1, l2, b1, b2) = (0.7, 1.1, 2.0, 0.7);
        let (c1, c2, n3, d) = (0.5, 0.2, 3.0, 1.5);
        let prev = Upstream { l: l1, l_grad: l2, b: b1, b_grad: b2 };
        let r = lemma_step(&prev, &StepHead { c1, c2, n3: 3, b3: None }, d).unwrap();
        let m1 = f64::max(
            3.0 * l1 * l1 * (c1 * c1 * n3 + c2 * c2 * d * d * b1 * b1) + 2.0 * c2 * c2 * d * d * l1 * l1,
            c2 * c2 * (b1 * b1 + 1.0) * (3.0 * b1 * b1 + 2.0),
        );
        let m2 = (n3 * c1 * d * l2 + b2 * c2 * d * d * l1).powi(2)
            + b2 * b2 * (n3 * c1 + d * c2 * (b1 * b1 + 1.0).sqrt()).powi(2);
        assert!((r.m1 - m1).abs() <= 1e-14 * m1);
        assert!((r.m2 - m2).abs() <= 1e-14 * m2);
        assert!((r.l - c1 * (d * d * l1 * l1 + b1 * b1 + 1.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let head = StepHead { c1: 1.0, c2: 1.0, n3: 1, b3: None };
        assert!(lemma_step(&Upstream::input(-1.0), &head, 1.0).is_err());
        assert!(lemma_step(&Upstream::input(1.0), &head, -1.0).is_err());
        assert!(lemma_step(&Upstream::input(f64::NAN), &head, 1.0).is_err());
        let unbounded = StepHead { b3: Some(f64::INFINITY), ..head };
        assert!(lemma_step(&Upstream::input(1.0), &unbounded, 1.0).is_err());
    }

    #[test]
    fn infinite_upstream_overflows_without_nan() {
        let prev = Upstream { l: f64::INFINITY, l_grad: 1.0, b: 1.0, b_grad: f64::INFINITY };
        let r = lemma_step(&prev, &StepHead::identity(2), 1.0).unwrap();
        assert_eq!(r.l, f64::INFINITY);
        assert_eq!(r.l_grad, f64::INFINITY);
        // c1 = 0 kills every term even against an infinite upstream
        let flat = lemma_step(&prev, &StepHead { c1: 0.0, c2: 0.0, n3: 2, b3: None }, 1.0).unwrap();
        assert_eq!((flat.l, flat.l_grad), (0.0, 0.0));
    }
}
