//! Polynomial-in-`S²` upper bounds for the moments mode.
//!
//! With only `E[S²]` and `E[S⁴]` available, every squared constant of the
//! recursion is tracked as a polynomial `p(s) = Σ p_k s^k` in `s = S²` with
//! nonnegative coefficients that dominates the true squared constant for all
//! `S ≥ 0`. Nonlinear steps are relaxed so the result stays a polynomial:
//!
//! - `max{P, Q} ≤ P + Q` (unless one side vanishes),
//! - `2xy ≤ x² + y²` on cross terms of squared sums,
//! - `2√(B²+1) ≤ B² + 2`,
//! - `(a + ε)² ≤ (1 + ε)a² + ε + ε²` for the ReLU sup bound.
//!
//! Then `E[L] ≤ √E[L²] ≤ √(p_0 + p_1 E[S²] + p_2 E[S⁴])` by Jensen.

use alloc::vec;
use alloc::vec::Vec;

use super::lemma::mul;
use crate::error::{Error, Result};
use crate::math::sqrt;

/// Polynomial in `s = S²` with nonnegative coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    /// `s`, i.e. `S²`.
    pub fn s() -> Self {
        Poly(vec![0.0, 1.0])
    }

    pub fn zero() -> Self {
        Poly(vec![0.0])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n).map(|k| self.coef(k) + other.coef(k)).collect())
    }

    pub fn scale(&self, c: f64) -> Poly {
        Poly(self.0.iter().map(|&p| mul(p, c)).collect())
    }

    pub fn plus(&self, c: f64) -> Poly {
        let mut out = self.clone();
        out.0[0] += c;
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += mul(a, b);
            }
        }
        Poly(out)
    }

    /// `max{self, other}` relaxed to the sum unless one side vanishes.
    pub fn max_bound(&self, other: &Poly) -> Poly {
        if self.is_zero() {
            other.clone()
        } else if other.is_zero() {
            self.clone()
        } else {
            self.add(other)
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| mul(acc, s) + c)
    }

    /// `E[p(S²)]` given `moments[k] = E[S^{2k}]` (with `moments[0] = 1`).
    pub fn expectation(&self, moments: &[f64]) -> Result<f64> {
        let deg = self.degree();
        if deg >= moments.len() {
            return Err(Error::InsufficientMoments { required: 2.0 * deg as f64 });
        }
        Ok((0..=deg).map(|k| mul(self.0[k], moments[k])).sum())
    }

    /// Upper bound on `E[√p(S²)]`.
    pub fn sqrt_expectation(&self, moments: &[f64]) -> Result<f64> {
        Ok(sqrt(self.expectation(moments)?))
    }

    fn coef(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }
}

/// Squared constants of an upstream map, as polynomials in `S²`.
#[derive(Clone, Debug)]
pub(crate) struct PolyUpstream {
    pub l: Poly,
    pub l_grad: Poly,
    pub b: Poly,
    pub b_grad: Poly,
}

impl PolyUpstream {
    pub fn input() -> Self {
        Self { l: Poly::zero(), l_grad: Poly::zero(), b: Poly::s(), b_grad: Poly::zero() }
    }
}

pub(crate) struct PolyStep {
    pub l: Poly,
    pub m1: Poly,
    pub m2: Poly,
}

impl PolyStep {
    pub fn l_grad(&self) -> Poly {
        self.m1.add(&self.m2)
    }
}

/// Polynomial relaxation of the composition step, in squared quantities.
pub(crate) fn poly_step(prev: &PolyUpstream, c1: f64, c2: f64, n3: usize, d: f64) -> PolyStep {
    let n3 = n3 as f64;
    let (c1s, c2s, ds) = (c1 * c1, c2 * c2, d * d);
    let b1p1 = prev.b.plus(1.0);

    // L² = c1² (D² L1² + B1² + 1)
    let l = prev.l.scale(ds).add(&b1p1).scale(c1s);

    // m1 = max{3 L1² (c1² n3 + c2² D² B1²) + 2 c2² D² L1², c2² (B1²+1)(3B1²+2)}
    let lam = prev.l.mul(&prev.b.scale(mul(c2s, ds)).plus(c1s * n3)).scale(3.0).add(&prev.l.scale(2.0 * mul(c2s, ds)));
    let kap = b1p1.mul(&prev.b.scale(3.0).plus(2.0)).scale(c2s);
    let m1 = lam.max_bound(&kap);

    // (a L2 + b B2 L1)² ≤ (a² + ab) L2² + (b² + ab) B2² L1²
    let a = n3 * mul(c1, d);
    let b = mul(c2, ds);
    let ab = mul(a, b);
    let first = prev.l_grad.scale(mul(a, a) + ab).add(&prev.b_grad.mul(&prev.l).scale(mul(b, b) + ab));
    // B2² (n3 c1 + D c2 √(B1²+1))² ≤ B2² (n3²c1² + n3 c1 D c2 (B1² + 2) + D² c2² (B1² + 1))
    let x = n3 * c1;
    let y = mul(d, c2);
    let inner = prev.b.plus(2.0).scale(mul(x, y)).add(&b1p1.scale(mul(y, y))).plus(mul(x, x));
    let m2 = first.add(&prev.b_grad.mul(&inner));

    PolyStep { l, m1, m2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::lemma::{step, StepHead, Upstream};

    #[test]
    fn arithmetic() {
        let p = Poly(vec![1.0, 2.0]);
        let q = Poly(vec![0.0, 0.0, 3.0]);
        assert_eq!(p.mul(&q), Poly(vec![0.0, 0.0, 3.0, 6.0]));
        assert_eq!(p.add(&q), Poly(vec![1.0, 2.0, 3.0]));
        assert_eq!(q.degree(), 2);
        assert_eq!(p.eval(2.0), 5.0);
        assert_eq!(p.expectation(&[1.0, 4.0]).unwrap(), 9.0);
        assert!(matches!(
            q.mul(&p).expectation(&[1.0, 1.0, 1.0]),
            Err(Error::InsufficientMoments { required }) if required == 6.0
        ));
    }

    #[test]
    fn polynomial_step_dominates_scalar_step() {
        // poly chain vs scalar chain at fixed S for a few layers
        let heads = [(0.9, 0.4, 3usize, 1.2), (1.0, 0.1, 2, 0.7), (0.3, 0.8, 4, 2.0)];
        for s in [0.0, 0.5, 1.0, 3.0, 10.0] {
            let mut up = Upstream::input(s);
            let mut pu = PolyUpstream::input();
            for &(c1, c2, n3, d) in &heads {
                let r = step(&up, &StepHead { c1, c2, n3, b3: Some(1.0) }, d);
                let p = poly_step(&pu, c1, c2, n3, d);
                let s2 = s * s;
                assert!(p.l.eval(s2) >= r.l * r.l * (1.0 - 1e-12));
                assert!(p.l_grad().eval(s2) >= r.l_grad * r.l_grad * (1.0 - 1e-12));
                up = Upstream { l: r.l, l_grad: r.l_grad, b: r.b.unwrap(), b_grad: r.l };
                pu = PolyUpstream { l: p.l.clone(), l_grad: p.l_grad(), b: Poly::constant(n3 as f64), b_grad: p.l };
            }
        }
    }
}
