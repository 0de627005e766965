use serde::{Deserialize, Serialize};

use super::Certificate;
use crate::error::{invalid, Error, Result};
use crate::math::pow;

/// Gradient descent step `h = 1 / L_∇Φ`.
pub fn derive_gd_step(cert: &Certificate) -> Result<f64> {
    let l = cert.l_grad_phi;
    if l == 0.0 {
        return Err(Error::ConstantObjective);
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::NonFinite(alloc::format!("L_grad_phi = {l}")));
    }
    Ok(1.0 / l)
}

/// AdaGrad-norm hyperparameters `h_j = α / (β + Σ_{i<j} ‖G_i‖²)^{1/2+ε}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdagradParams {
    pub alpha: f64,
    pub beta: f64,
    pub eps_exponent: f64,
}

impl AdagradParams {
    /// Whether `2 α L < β^{1/2+ε}`.
    pub fn condition_holds(&self, l_grad_phi: f64) -> bool {
        2.0 * self.alpha * l_grad_phi < pow(self.beta, 0.5 + self.eps_exponent)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(invalid!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid!("beta must be positive, got {}", self.beta));
        }
        check_exponent(self.eps_exponent)
    }
}

fn check_exponent(eps: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(invalid!("eps_exponent must lie in [0, 1/2), got {eps}"));
    }
    Ok(())
}

/// `α = 1/2` and `β = L_∇Φ^{2/(1+2ε)} + margin`, nudged upward if rounding
/// would break the strict inequality `2 α L_∇Φ < β^{1/2+ε}`.
pub fn derive_adagrad_params(cert: &Certificate, eps_margin: f64, eps_exponent: f64) -> Result<AdagradParams> {
    adagrad_params_for(cert.l_grad_phi, eps_margin, eps_exponent)
}

/// [`derive_adagrad_params`] for a bare gradient Lipschitz constant.
pub fn adagrad_params_for(l_grad_phi: f64, eps_margin: f64, eps_exponent: f64) -> Result<AdagradParams> {
    if !(eps_margin.is_finite() && eps_margin > 0.0) {
        return Err(invalid!("eps_margin must be positive and finite, got {eps_margin}"));
    }
    check_exponent(eps_exponent)?;
    let l = l_grad_phi;
    if !(l.is_finite() && l >= 0.0) {
        return Err(Error::NonFinite(alloc::format!("L_grad_phi = {l}")));
    }
    let mut p = AdagradParams { alpha: 0.5, beta: pow(l, 2.0 / (1.0 + 2.0 * eps_exponent)) + eps_margin, eps_exponent };
    while !p.condition_holds(l) {
        p.beta += (p.beta * f64::EPSILON).max(f64::MIN_POSITIVE);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::Method;

    fn cert(l: f64) -> Certificate {
        Certificate {
            per_layer: alloc::vec![],
            l_n_final: 1.0,
            l_grad_n_final: 1.0,
            l_phi: 1.0,
            l_grad_phi: l,
            b_grad_phi: 1.0,
            method: Method::Recursive,
            inputs_digest: alloc::string::String::new(),
            overflow: false,
            refinement: None,
        }
    }

    #[test]
    fn gd_step() {
        assert_eq!(derive_gd_step(&cert(2.0)).unwrap(), 0.5);
        assert_eq!(derive_gd_step(&cert(1.0)).unwrap(), 1.0);
        assert_eq!(derive_gd_step(&cert(0.0)), Err(Error::ConstantObjective));
        assert!(derive_gd_step(&cert(f64::INFINITY)).is_err());
    }

    #[test]
    fn adagrad_examples() {
        let p = derive_adagrad_params(&cert(1.0), 0.1, 0.0).unwrap();
        assert_eq!((p.alpha, p.beta), (0.5, 1.1));
        assert!(1.0 < 1.1f64.sqrt());
        let p = derive_adagrad_params(&cert(0.0), 0.25, 0.3).unwrap();
        assert_eq!((p.alpha, p.beta), (0.5, 0.25));
        assert!(p.condition_holds(0.0));
        let p = derive_adagrad_params(&cert(3.0), 1.0, 0.0).unwrap();
        assert_eq!((p.alpha, p.beta), (0.5, 10.0));
    }

    #[test]
    fn adagrad_condition_always_strict() {
        for &l in &[1e-9, 0.3, 1.0, 7.5, 1e6] {
            for &eps in &[0.0, 0.1, 0.25, 0.49] {
                for &margin in &[1e-300, 1e-12, 0.5] {
                    let p = derive_adagrad_params(&cert(l), margin, eps).unwrap();
                    assert!(p.condition_holds(l), "l={l} eps={eps} margin={margin}");
                }
            }
        }
    }

    #[test]
    fn adagrad_rejects_bad_hyperparameters() {
        assert!(derive_adagrad_params(&cert(1.0), 0.0, 0.0).is_err());
        assert!(derive_adagrad_params(&cert(1.0), 0.1, 0.5).is_err());
        assert!(derive_adagrad_params(&cert(1.0), 0.1, -0.1).is_err());
    }
}
