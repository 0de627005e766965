//! Grönwall certificates for controlled ODEs and their training objective.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::SecondOrderField;
use crate::bounds::lemma_mul as mul;
use crate::bounds::LossEnvelope;
use crate::error::{invalid, Error, Result};
use crate::math::{exp, norm, operator_norm, pow};

/// Growth envelopes of the vector fields, uniform in `i`, `t` and `θ ∈ Ω`:
/// `‖V‖ ≤ B_V(1 + ‖x‖)`, `‖∂_θ V‖ ≤ B_{∂θV}(1 + ‖x‖^{p_θ})` and likewise for
/// the second derivatives, plus the Lipschitz constant `L_{V_x}` of `x ↦ V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEnvelopes {
    #[serde(with = "crate::serde_float")]
    pub b_v: f64,
    #[serde(with = "crate::serde_float")]
    pub b_theta_v: f64,
    #[serde(with = "crate::serde_float")]
    pub b_theta_theta_v: f64,
    #[serde(with = "crate::serde_float")]
    pub b_x_theta_v: f64,
    #[serde(with = "crate::serde_float")]
    pub b_theta_x_v: f64,
    #[serde(with = "crate::serde_float")]
    pub b_x_x_v: f64,
    pub p_theta: f64,
    pub p_theta_theta: f64,
    pub p_x_theta: f64,
    pub p_theta_x: f64,
    pub p_x_x: f64,
    #[serde(with = "crate::serde_float")]
    pub lip_v_x: f64,
}

impl FieldEnvelopes {
    pub fn zero() -> Self {
        Self {
            b_v: 0.0,
            b_theta_v: 0.0,
            b_theta_theta_v: 0.0,
            b_x_theta_v: 0.0,
            b_theta_x_v: 0.0,
            b_x_x_v: 0.0,
            p_theta: 0.0,
            p_theta_theta: 0.0,
            p_x_theta: 0.0,
            p_theta_x: 0.0,
            p_x_x: 0.0,
            lip_v_x: 0.0,
        }
    }

    /// Envelope constants must be nonnegative (infinity allowed). Exponents
    /// must be finite and nonnegative: with a negative exponent `‖x‖^p` is
    /// unbounded near the origin and the moment expansion breaks down.
    pub fn validate(&self) -> Result<()> {
        let constants = [
            ("b_v", self.b_v),
            ("b_theta_v", self.b_theta_v),
            ("b_theta_theta_v", self.b_theta_theta_v),
            ("b_x_theta_v", self.b_x_theta_v),
            ("b_theta_x_v", self.b_theta_x_v),
            ("b_x_x_v", self.b_x_x_v),
            ("lip_v_x", self.lip_v_x),
        ];
        for (name, v) in constants {
            if v.is_nan() || v < 0.0 {
                return Err(invalid!("envelope {name} must be nonnegative, got {v}"));
            }
        }
        let exponents = [
            ("p_theta", self.p_theta),
            ("p_theta_theta", self.p_theta_theta),
            ("p_x_theta", self.p_x_theta),
            ("p_theta_x", self.p_theta_x),
            ("p_x_x", self.p_x_x),
        ];
        for (name, p) in exponents {
            if !(p.is_finite() && p >= 0.0) {
                return Err(invalid!("exponent {name} must be finite and nonnegative, got {p}"));
            }
        }
        Ok(())
    }
}

/// How much the envelopes behind a certificate can be trusted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rigor {
    /// Envelopes derived by hand for a built-in field.
    Analytic,
    /// User-supplied envelopes that survived grid sampling. Not a proof.
    Sampled,
    /// Envelopes violated at some sample, or user-supplied and never checked.
    NonRigorous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeCertificate {
    #[serde(with = "crate::serde_float")]
    pub b_upsilon: f64,
    #[serde(with = "crate::serde_float")]
    pub x_norm: f64,
    #[serde(with = "crate::serde_float")]
    pub b_x: f64,
    #[serde(with = "crate::serde_float")]
    pub l_x: f64,
    #[serde(with = "crate::serde_float")]
    pub c_theta_theta: f64,
    #[serde(with = "crate::serde_float")]
    pub l_dx: f64,
    /// `B_∂X = L_X`.
    #[serde(with = "crate::serde_float")]
    pub b_dx: f64,
    pub rigor: Rigor,
}

impl CodeCertificate {
    /// Fold in the outcome of [`check_envelopes`]: any violation makes the
    /// certificate non-rigorous, a clean check lifts unchecked user envelopes
    /// to [`Rigor::Sampled`]. Analytic envelopes stay analytic.
    pub fn apply_check(&mut self, check: &EnvelopeCheck) {
        if check.violations > 0 {
            self.rigor = Rigor::NonRigorous;
        } else if self.rigor == Rigor::NonRigorous {
            self.rigor = Rigor::Sampled;
        }
    }
}

/// `1 + b^p` with `0^0 = 1`.
fn growth(b: f64, p: f64) -> f64 {
    1.0 + pow(b, p)
}

/// Constants for one initial condition with `‖x‖ = x_norm`.
pub fn code_certificate(env: &FieldEnvelopes, b_upsilon: f64, x_norm: f64) -> Result<CodeCertificate> {
    env.validate()?;
    if b_upsilon.is_nan() || b_upsilon < 0.0 {
        return Err(invalid!("B_upsilon must be nonnegative, got {b_upsilon}"));
    }
    if !(x_norm.is_finite() && x_norm >= 0.0) {
        return Err(invalid!("initial norm must be finite and nonnegative, got {x_norm}"));
    }
    let a = mul(env.b_v, b_upsilon);
    let b_x = (x_norm + a) * exp(a);
    let gronwall = exp(mul(env.lip_v_x, b_upsilon));
    let l_x = mul(mul(mul(env.b_theta_v, growth(b_x, env.p_theta)), b_upsilon), gronwall);
    let bracket = mul(env.b_theta_theta_v, growth(b_x, env.p_theta_theta))
        + mul(mul(env.b_x_theta_v, growth(b_x, env.p_x_theta)), l_x)
        + mul(mul(env.b_theta_x_v, growth(b_x, env.p_theta_x)), l_x)
        + mul(mul(env.b_x_x_v, growth(b_x, env.p_x_x)), mul(l_x, l_x));
    let c_theta_theta = mul(b_upsilon, bracket);
    let l_dx = mul(c_theta_theta, gronwall);
    Ok(CodeCertificate { b_upsilon, x_norm, b_x, l_x, c_theta_theta, l_dx, b_dx: l_x, rigor: Rigor::Analytic })
}

/// Moment exponent the objective certificate needs:
/// `max{1, p_θθ, p_xθ + p_θ, p_θx + p_θ, p_xx + 2p_θ}`.
pub fn required_moment(env: &FieldEnvelopes) -> f64 {
    [1.0, env.p_theta_theta, env.p_x_theta + env.p_theta, env.p_theta_x + env.p_theta, env.p_x_x + 2.0 * env.p_theta]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Distribution of the input norm `S = ‖x‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSampleNorms {
    /// Equal-weight finite dataset.
    Finite(Vec<f64>),
    /// Known moments as `(p, E[S^p])` pairs.
    Moments(Vec<(f64, f64)>),
}

/// Sum of `coef · B_X^power` terms.
#[derive(Clone, Debug, Default)]
struct Terms(Vec<(f64, f64)>);

impl Terms {
    /// `b (1 + B_X^p)`.
    fn growth(b: f64, p: f64) -> Self {
        Terms(alloc::vec![(b, 0.0), (b, p)])
    }

    fn scale(mut self, c: f64) -> Self {
        self.0.iter_mut().for_each(|t| t.0 = mul(t.0, c));
        self
    }

    fn plus(mut self, other: Terms) -> Self {
        self.0.extend(other.0);
        self
    }

    fn times(&self, other: &Terms) -> Self {
        let mut out = Vec::with_capacity(self.0.len() * other.0.len());
        for &(c1, p1) in &self.0 {
            for &(c2, p2) in &other.0 {
                out.push((mul(c1, c2), p1 + p2));
            }
        }
        Terms(out)
    }

    fn max_power(&self) -> f64 {
        self.0.iter().filter(|t| t.0 != 0.0).map(|t| t.1).fold(0.0, f64::max)
    }
}

/// Upper bound on `E[S^q]` from the supplied moments: the exact entry when
/// present, otherwise Lyapunov's inequality `E[S^q] ≤ E[S^p]^{q/p}` from the
/// smallest supplied `p > q`.
fn moment_bound(moments: &[(f64, f64)], q: f64) -> Option<f64> {
    if q == 0.0 {
        return Some(1.0);
    }
    moments.iter().filter(|(p, _)| *p >= q).min_by(|a, b| a.0.total_cmp(&b.0)).map(|&(p, m)| {
        if p == q {
            m
        } else {
            pow(m, q / p)
        }
    })
}

/// Upper bound on `E[(αS + β)^q]` for `q ≥ 0`.
fn affine_power_bound(moments: &[(f64, f64)], alpha: f64, beta: f64, q: f64) -> Option<f64> {
    if q == 0.0 {
        return Some(1.0);
    }
    let es = moment_bound(moments, q)?;
    let split = mul(pow(alpha, q), es) + pow(beta, q);
    // (a + b)^q ≤ a^q + b^q for q ≤ 1, ≤ 2^{q−1}(a^q + b^q) beyond
    Some(if q <= 1.0 { split } else { mul(pow(2.0, q - 1.0), split) })
}

/// `(L_Φ, L_∇Φ) = (E[L_g L_X], E[L_{∂g} L_X² + L_g L_∂X])` with `B_X`
/// evaluated at the sample norm `S`.
pub fn code_loss_certificate(
    env: &FieldEnvelopes,
    b_upsilon: f64,
    loss: &LossEnvelope,
    norms: &CodeSampleNorms,
) -> Result<(f64, f64)> {
    loss.validate()?;
    match norms {
        CodeSampleNorms::Finite(s) => {
            if s.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let (mut lp, mut lg) = (0.0, 0.0);
            for &x in s {
                let c = code_certificate(env, b_upsilon, x)?;
                lp += mul(loss.lip_g, c.l_x);
                lg += mul(loss.lip_dg, mul(c.l_x, c.l_x)) + mul(loss.lip_g, c.l_dx);
            }
            let n = s.len() as f64;
            Ok((lp / n, lg / n))
        }
        CodeSampleNorms::Moments(moments) => {
            if moments.iter().any(|&(p, m)| !(p > 0.0 && p.is_finite() && m >= 0.0 && m.is_finite())) {
                return Err(invalid!("moments must be (p > 0, E[S^p] >= 0) pairs"));
            }
            // validates the envelopes and B_upsilon
            code_certificate(env, b_upsilon, 0.0)?;
            let required = required_moment(env);
            if !moments.iter().any(|&(p, _)| p >= required) {
                return Err(Error::InsufficientMoments { required });
            }
            let a = mul(env.b_v, b_upsilon);
            let (alpha, beta) = (exp(a), mul(a, exp(a)));
            let gronwall = exp(mul(env.lip_v_x, b_upsilon));
            let k = mul(mul(env.b_theta_v, b_upsilon), gronwall);
            let l_x = Terms::growth(k, env.p_theta);
            let l_x_sq = l_x.times(&l_x);
            let bracket = Terms::growth(env.b_theta_theta_v, env.p_theta_theta)
                .plus(Terms::growth(env.b_x_theta_v, env.p_x_theta).times(&l_x))
                .plus(Terms::growth(env.b_theta_x_v, env.p_theta_x).times(&l_x))
                .plus(Terms::growth(env.b_x_x_v, env.p_x_x).times(&l_x_sq));
            let l_dx = bracket.scale(mul(b_upsilon, gronwall));
            let l_phi = l_x.clone().scale(loss.lip_g);
            let l_grad_phi = l_x_sq.scale(loss.lip_dg).plus(l_dx.scale(loss.lip_g));
            let needed = l_phi.max_power().max(l_grad_phi.max_power());
            let expect = |t: &Terms| -> Result<f64> {
                t.0.iter().filter(|t| t.0 != 0.0).try_fold(0.0, |acc, &(c, q)| {
                    affine_power_bound(moments, alpha, beta, q)
                        .map(|e| acc + mul(c, e))
                        .ok_or(Error::InsufficientMoments { required: required.max(needed) })
                })
            };
            Ok((expect(&l_phi)?, expect(&l_grad_phi)?))
        }
    }
}

/// Outcome of spot-checking declared envelopes on random points of a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub samples: usize,
    pub violations: usize,
    /// Largest `observed / declared` ratio over all inequalities.
    pub worst_ratio: f64,
    pub worst_inequality: Option<String>,
}

impl EnvelopeCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Grid-sample the growth inequalities and the `x`-Lipschitz bound over
/// `|θ_a| ≤ theta_radius`, `|x_j| ≤ x_radius`, `t ∈ [0, horizon]`.
///
/// Matrix quantities use the operator norm; third-order tensors use the
/// Frobenius norm, which can only overstate them. `L_{V_x}` is checked
/// through `‖∂_x V‖`, which bounds the Lipschitz constant on convex sets.
pub fn check_envelopes<F: SecondOrderField + ?Sized>(
    field: &F,
    env: &FieldEnvelopes,
    x_radius: f64,
    theta_radius: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<EnvelopeCheck> {
    env.validate()?;
    for (name, v) in [("x_radius", x_radius), ("theta_radius", theta_radius), ("horizon", horizon)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid!("{name} must be finite and nonnegative, got {v}"));
        }
    }
    let (l, n) = (field.state_dim(), field.param_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EnvelopeCheck { samples: n_samples, violations: 0, worst_ratio: 0.0, worst_inequality: None };
    let mut record = |name: &str, observed: f64, bound: f64, violated: &mut bool| {
        let ratio = if bound > 0.0 {
            observed / bound
        } else if observed > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > out.worst_ratio {
            out.worst_ratio = ratio;
            out.worst_inequality = Some(String::from(name));
        }
        if observed > bound * (1.0 + 1e-12) + 1e-300 {
            *violated = true;
        }
    };
    for _ in 0..n_samples {
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0) * theta_radius).collect();
        let x: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..=1.0) * x_radius).collect();
        let t = rng.random_range(0.0..=1.0) * horizon;
        let i = rng.random_range(0..field.n_controls());
        let r = norm(&x);
        let mut violated = false;
        record("V", norm(&field.eval(i, &theta, t, &x)), mul(env.b_v, 1.0 + r), &mut violated);
        record(
            "d_theta V",
            operator_norm(&field.jac_theta(i, &theta, t, &x), l, n),
            mul(env.b_theta_v, growth(r, env.p_theta)),
            &mut violated,
        );
        record(
            "d_theta_theta V",
            norm(&field.d_theta_theta(i, &theta, t, &x)),
            mul(env.b_theta_theta_v, growth(r, env.p_theta_theta)),
            &mut violated,
        );
        record(
            "d_x_theta V",
            norm(&field.d_x_theta(i, &theta, t, &x)),
            mul(env.b_x_theta_v, growth(r, env.p_x_theta)),
            &mut violated,
        );
        record(
            "d_theta_x V",
            norm(&field.d_theta_x(i, &theta, t, &x)),
            mul(env.b_theta_x_v, growth(r, env.p_theta_x)),
            &mut violated,
        );
        record("d_x_x V", norm(&field.d_x_x(i, &theta, t, &x)), mul(env.b_x_x_v, growth(r, env.p_x_x)), &mut violated);
        record("L_Vx", operator_norm(&field.jac_x(i, &theta, t, &x), l, l), env.lip_v_x, &mut violated);
        if violated {
            out.violations += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_net::field::{ScalarLinearField, TanhBilinearField};
    use core::f64::consts::E;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn scalar_linear_constants() {
        let c = code_certificate(&ScalarLinearField.envelopes(), 1.0, 1.0).unwrap();
        assert!(close(c.b_x, 2.0 * E));
        assert!(close(c.l_x, (1.0 + 2.0 * E) * E));
        // bracket: B_xθ(1 + B_X⁰) L_X + B_θx(1 + B_X⁰) L_X
        assert!(close(c.c_theta_theta, 4.0 * c.l_x));
        assert!(close(c.l_dx, 4.0 * c.l_x * E));
    }

    #[test]
    fn no_control_mass() {
        let c = code_certificate(&ScalarLinearField.envelopes(), 0.0, 3.0).unwrap();
        assert_eq!((c.b_x, c.l_x, c.l_dx), (3.0, 0.0, 0.0));
    }

    #[test]
    fn flat_field_is_polynomial_in_b_upsilon() {
        let mut env = ScalarLinearField.envelopes();
        env.b_v = 0.0;
        env.lip_v_x = 0.0;
        let c = code_certificate(&env, 2.0, 3.0).unwrap();
        assert_eq!(c.b_x, 3.0);
        assert!(close(c.l_x, (1.0 + 3.0) * 2.0));
    }

    #[test]
    fn rejects_bad_envelopes() {
        let mut env = ScalarLinearField.envelopes();
        env.b_v = -1.0;
        assert!(code_certificate(&env, 1.0, 1.0).is_err());
        env.b_v = 1.0;
        env.p_theta = -0.5;
        assert!(code_certificate(&env, 1.0, 1.0).is_err());
    }

    #[test]
    fn finite_dataset_averages() {
        let env = ScalarLinearField.envelopes();
        let loss = LossEnvelope { g_p_max: 0.0, g_pp_max: 0.0, lip_g: 1.0, lip_dg: 0.0 };
        let (lp, _) = code_loss_certificate(&env, 1.0, &loss, &CodeSampleNorms::Finite(alloc::vec![0.0, 1.0])).unwrap();
        // S = 0: B_X = e, L_X = (1 + e)e; S = 1: L_X = (1 + 2e)e
        let expected = ((1.0 + E) * E + (1.0 + 2.0 * E) * E) / 2.0;
        assert!(close(lp, expected));
    }

    #[test]
    fn zero_lip_g_leaves_second_moment_term() {
        let env = ScalarLinearField.envelopes();
        let loss = LossEnvelope { g_p_max: 0.0, g_pp_max: 0.0, lip_g: 0.0, lip_dg: 2.0 };
        let norms = CodeSampleNorms::Finite(alloc::vec![1.0]);
        let (lp, lg) = code_loss_certificate(&env, 1.0, &loss, &norms).unwrap();
        let l_x = (1.0 + 2.0 * E) * E;
        assert_eq!(lp, 0.0);
        assert!(close(lg, 2.0 * l_x * l_x));
    }

    #[test]
    fn moments_dominate_point_mass() {
        // S ≡ 1 has every moment equal to 1; the moment bound must cover it
        let env = ScalarLinearField.envelopes();
        let loss = LossEnvelope { g_p_max: 0.0, g_pp_max: 0.0, lip_g: 1.0, lip_dg: 1.0 };
        let point = code_loss_certificate(&env, 1.0, &loss, &CodeSampleNorms::Finite(alloc::vec![1.0])).unwrap();
        let m = code_loss_certificate(&env, 1.0, &loss, &CodeSampleNorms::Moments(alloc::vec![(2.0, 1.0)])).unwrap();
        assert!(m.0 >= point.0 * (1.0 - 1e-12) && m.1 >= point.1 * (1.0 - 1e-12));
    }

    #[test]
    fn moments_must_cover_required_exponent() {
        let env = ScalarLinearField.envelopes();
        assert_eq!(required_moment(&env), 2.0);
        let loss = LossEnvelope { g_p_max: 0.0, g_pp_max: 0.0, lip_g: 1.0, lip_dg: 1.0 };
        let err = code_loss_certificate(&env, 1.0, &loss, &CodeSampleNorms::Moments(alloc::vec![(1.0, 1.0)]));
        assert_eq!(err, Err(Error::InsufficientMoments { required: 2.0 }));
    }

    #[test]
    fn envelope_check_passes_and_flags() {
        let f = ScalarLinearField;
        let ok = check_envelopes(&f, &f.envelopes(), 5.0, 0.999, 1.0, 2000, 1).unwrap();
        assert!(ok.passed(), "{ok:?}");
        let mut tight = f.envelopes();
        tight.b_v = 0.1;
        let bad = check_envelopes(&f, &tight, 5.0, 0.999, 1.0, 2000, 1).unwrap();
        assert!(!bad.passed());
        let mut c = code_certificate(&tight, 1.0, 1.0).unwrap();
        c.apply_check(&bad);
        assert_eq!(c.rigor, Rigor::NonRigorous);
        let mut user = code_certificate(&f.envelopes(), 1.0, 1.0).unwrap();
        user.rigor = Rigor::NonRigorous;
        user.apply_check(&ok);
        assert_eq!(user.rigor, Rigor::Sampled);
    }

    #[test]
    fn tanh_field_envelopes_hold() {
        let f = TanhBilinearField::random(3, 4, 7, 0.5);
        let env = f.envelopes(1.0);
        let check = check_envelopes(&f, &env, 10.0, 1.0, 1.0, 3000, 2).unwrap();
        assert!(check.passed(), "{check:?}");
    }
}
