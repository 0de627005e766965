use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::certificate::FieldEnvelopes;
use crate::math::{norm, sqrt, tanh};

/// Vector fields `V_i^θ(t, x)`, `i < n_controls`, on `R^ℓ` with `θ ∈ R^n`.
///
/// Matrices are row-major: `jac_x` is `ℓ x ℓ` with entry `[k, j] = ∂V_k/∂x_j`
/// and `jac_theta` is `ℓ x n` with entry `[k, a] = ∂V_k/∂θ_a`.
pub trait VectorField {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn n_controls(&self) -> usize {
        1
    }
    fn eval(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64>;
    fn jac_x(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64>;
    fn jac_theta(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64>;
}

/// Second derivatives as third-order tensors, index order as written:
///
/// - `d_theta_theta[k, a, b] = ∂²V_k/∂θ_a∂θ_b` (`ℓ x n x n`)
/// - `d_theta_x[k, a, j] = ∂²V_k/∂θ_a∂x_j` (`ℓ x n x ℓ`)
/// - `d_x_theta[k, j, b] = ∂²V_k/∂x_j∂θ_b` (`ℓ x ℓ x n`)
/// - `d_x_x[k, j, i] = ∂²V_k/∂x_j∂x_i` (`ℓ x ℓ x ℓ`)
pub trait SecondOrderField: VectorField {
    fn d_theta_theta(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64>;
    fn d_theta_x(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64>;
    fn d_x_x(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64>;

    /// Defaults to the transpose of `d_theta_x`, which is exact for `C²` fields.
    fn d_x_theta(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
        let (l, n) = (self.state_dim(), self.param_dim());
        let tx = self.d_theta_x(i, theta, t, x);
        let mut out = vec![0.0; l * l * n];
        for k in 0..l {
            for a in 0..n {
                for j in 0..l {
                    out[(k * l + j) * n + a] = tx[(k * n + a) * l + j];
                }
            }
        }
        out
    }
}

/// `V ≡ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroField {
    pub ell: usize,
    pub n: usize,
}

impl VectorField for ZeroField {
    fn state_dim(&self) -> usize {
        self.ell
    }
    fn param_dim(&self) -> usize {
        self.n
    }
    fn eval(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.ell]
    }
    fn jac_x(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.ell * self.ell]
    }
    fn jac_theta(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.ell * self.n]
    }
}

impl SecondOrderField for ZeroField {
    fn d_theta_theta(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.ell * self.n * self.n]
    }
    fn d_theta_x(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.ell * self.n * self.ell]
    }
    fn d_x_x(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.ell * self.ell * self.ell]
    }
}

impl ZeroField {
    pub fn envelopes(&self) -> FieldEnvelopes {
        FieldEnvelopes::zero()
    }
}

/// Scalar `V^θ(t, x) = θ x`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ScalarLinearField;

impl ScalarLinearField {
    /// Envelopes on `Ω = (−1, 1)`: `|θx| ≤ 1 + |x|`, `|∂_θ V| = |x| ≤ 1 + |x|`,
    /// `|∂_x∂_θ V| = 1 ≤ 1 + |x|⁰`, and `x ↦ θx` is 1-Lipschitz.
    pub fn envelopes(&self) -> FieldEnvelopes {
        FieldEnvelopes {
            b_v: 1.0,
            b_theta_v: 1.0,
            b_theta_theta_v: 0.0,
            b_x_theta_v: 1.0,
            b_theta_x_v: 1.0,
            b_x_x_v: 0.0,
            p_theta: 1.0,
            p_theta_theta: 0.0,
            p_x_theta: 0.0,
            p_theta_x: 0.0,
            p_x_x: 0.0,
            lip_v_x: 1.0,
        }
    }
}

impl VectorField for ScalarLinearField {
    fn state_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn eval(&self, _: usize, theta: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        vec![theta[0] * x[0]]
    }
    fn jac_x(&self, _: usize, theta: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![theta[0]]
    }
    fn jac_theta(&self, _: usize, _: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }
}

impl SecondOrderField for ScalarLinearField {
    fn d_theta_theta(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn d_theta_x(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![1.0]
    }
    fn d_x_x(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

/// Smooth test field `V_k = tanh((W x + U θ + b)_k) + Σ_{a,j} P[k,a,j] θ_a x_j`
/// with fixed random coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct TanhBilinearField {
    pub ell: usize,
    pub n: usize,
    /// `ℓ x ℓ`
    pub w: Vec<f64>,
    /// `ℓ x n`
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    /// `ℓ x n x ℓ`
    pub p: Vec<f64>,
}

impl TanhBilinearField {
    /// Coefficients uniform in `[−scale, scale]`.
    pub fn random(ell: usize, n: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect() };
        let w = draw(ell * ell);
        let u = draw(ell * n);
        let b = draw(ell);
        let p = draw(ell * n * ell);
        Self { ell, n, w, u, b, p }
    }

    /// Envelopes valid for `|θ_a| ≤ theta_radius`, from Frobenius norms of the
    /// coefficients and `|tanh| ≤ 1`, `|tanh'| ≤ 1`, `|tanh''| ≤ 4/(3√3)`.
    pub fn envelopes(&self, theta_radius: f64) -> FieldEnvelopes {
        let c2 = 4.0 / (3.0 * sqrt(3.0));
        let (w, u, p) = (norm(&self.w), norm(&self.u), norm(&self.p));
        let r = theta_radius * sqrt(self.n as f64);
        let mixed = c2 * u * w + p;
        FieldEnvelopes {
            b_v: sqrt(self.ell as f64).max(r * p),
            b_theta_v: u.max(p),
            b_theta_theta_v: c2 * u * u,
            b_x_theta_v: mixed,
            b_theta_x_v: mixed,
            b_x_x_v: c2 * w * w,
            p_theta: 1.0,
            p_theta_theta: 0.0,
            p_x_theta: 0.0,
            p_theta_x: 0.0,
            p_x_x: 0.0,
            lip_v_x: w + r * p,
        }
    }

    /// `tanh(z_k)`, `tanh'(z_k)`, `tanh''(z_k)`.
    fn act(&self, theta: &[f64], x: &[f64]) -> Vec<(f64, f64, f64)> {
        (0..self.ell)
            .map(|k| {
                let z: f64 = (0..self.ell).map(|j| self.w[k * self.ell + j] * x[j]).sum::<f64>()
                    + (0..self.n).map(|a| self.u[k * self.n + a] * theta[a]).sum::<f64>()
                    + self.b[k];
                let th = tanh(z);
                let s = 1.0 - th * th;
                (th, s, -2.0 * th * s)
            })
            .collect()
    }

    fn pk(&self, k: usize, a: usize, j: usize) -> f64 {
        self.p[(k * self.n + a) * self.ell + j]
    }
}

impl VectorField for TanhBilinearField {
    fn state_dim(&self) -> usize {
        self.ell
    }
    fn param_dim(&self) -> usize {
        self.n
    }
    fn eval(&self, _: usize, theta: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        let act = self.act(theta, x);
        (0..self.ell)
            .map(|k| {
                let mut v = act[k].0;
                for a in 0..self.n {
                    for j in 0..self.ell {
                        v += self.pk(k, a, j) * theta[a] * x[j];
                    }
                }
                v
            })
            .collect()
    }
    fn jac_x(&self, _: usize, theta: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        let act = self.act(theta, x);
        let mut out = vec![0.0; self.ell * self.ell];
        for k in 0..self.ell {
            for j in 0..self.ell {
                let bil: f64 = (0..self.n).map(|a| self.pk(k, a, j) * theta[a]).sum();
                out[k * self.ell + j] = act[k].1 * self.w[k * self.ell + j] + bil;
            }
        }
        out
    }
    fn jac_theta(&self, _: usize, theta: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        let act = self.act(theta, x);
        let mut out = vec![0.0; self.ell * self.n];
        for k in 0..self.ell {
            for a in 0..self.n {
                let bil: f64 = (0..self.ell).map(|j| self.pk(k, a, j) * x[j]).sum();
                out[k * self.n + a] = act[k].1 * self.u[k * self.n + a] + bil;
            }
        }
        out
    }
}

impl SecondOrderField for TanhBilinearField {
    fn d_theta_theta(&self, _: usize, theta: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        let act = self.act(theta, x);
        let n = self.n;
        let mut out = vec![0.0; self.ell * n * n];
        for k in 0..self.ell {
            for a in 0..n {
                for b in 0..n {
                    out[(k * n + a) * n + b] = act[k].2 * self.u[k * n + a] * self.u[k * n + b];
                }
            }
        }
        out
    }
    fn d_theta_x(&self, _: usize, theta: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        let act = self.act(theta, x);
        let (l, n) = (self.ell, self.n);
        let mut out = vec![0.0; l * n * l];
        for k in 0..l {
            for a in 0..n {
                for j in 0..l {
                    out[(k * n + a) * l + j] = act[k].2 * self.u[k * n + a] * self.w[k * l + j] + self.pk(k, a, j);
                }
            }
        }
        out
    }
    fn d_x_x(&self, _: usize, theta: &[f64], _: f64, x: &[f64]) -> Vec<f64> {
        let act = self.act(theta, x);
        let l = self.ell;
        let mut out = vec![0.0; l * l * l];
        for k in 0..l {
            for j in 0..l {
                for i in 0..l {
                    out[(k * l + j) * l + i] = act[k].2 * self.w[k * l + j] * self.w[k * l + i];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: &TanhBilinearField, theta: &[f64], x: &[f64]) {
        let h = 1e-6;
        let (l, n) = (f.ell, f.n);
        let jx = f.jac_x(0, theta, 0.0, x);
        let jt = f.jac_theta(0, theta, 0.0, x);
        let tt = f.d_theta_theta(0, theta, 0.0, x);
        let tx = f.d_theta_x(0, theta, 0.0, x);
        let xt = f.d_x_theta(0, theta, 0.0, x);
        let xx = f.d_x_x(0, theta, 0.0, x);
        for j in 0..l {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[j] += h;
            xm[j] -= h;
            let (vp, vm) = (f.eval(0, theta, 0.0, &xp), f.eval(0, theta, 0.0, &xm));
            let (jp, jm) = (f.jac_x(0, theta, 0.0, &xp), f.jac_x(0, theta, 0.0, &xm));
            let (tp, tm) = (f.jac_theta(0, theta, 0.0, &xp), f.jac_theta(0, theta, 0.0, &xm));
            for k in 0..l {
                assert!(((vp[k] - vm[k]) / (2.0 * h) - jx[k * l + j]).abs() < 1e-8);
                for i in 0..l {
                    let fd = (jp[k * l + i] - jm[k * l + i]) / (2.0 * h);
                    assert!((fd - xx[(k * l + i) * l + j]).abs() < 1e-8);
                }
                for a in 0..n {
                    let fd = (tp[k * n + a] - tm[k * n + a]) / (2.0 * h);
                    assert!((fd - tx[(k * n + a) * l + j]).abs() < 1e-8);
                    assert_eq!(tx[(k * n + a) * l + j], xt[(k * l + j) * n + a]);
                }
            }
        }
        for a in 0..n {
            let (mut pp, mut pm) = (theta.to_vec(), theta.to_vec());
            pp[a] += h;
            pm[a] -= h;
            let (vp, vm) = (f.eval(0, &pp, 0.0, x), f.eval(0, &pm, 0.0, x));
            let (tp, tm) = (f.jac_theta(0, &pp, 0.0, x), f.jac_theta(0, &pm, 0.0, x));
            for k in 0..l {
                assert!(((vp[k] - vm[k]) / (2.0 * h) - jt[k * n + a]).abs() < 1e-8);
                for b in 0..n {
                    let fd = (tp[k * n + b] - tm[k * n + b]) / (2.0 * h);
                    assert!((fd - tt[(k * n + b) * n + a]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn tanh_bilinear_derivatives() {
        for seed in 0..5 {
            let f = TanhBilinearField::random(3, 2, seed, 0.8);
            fd_check(&f, &[0.3, -0.4], &[0.5, -1.0, 0.2]);
        }
    }
}
