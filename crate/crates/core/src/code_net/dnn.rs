//! A dense network as a controlled ODE driven by unit jumps.
//!
//! With `ℓ` the largest width and states zero-padded to `R^ℓ`, the field on
//! `t ∈ (u−1, u]` is `V(t, x) = pad(σ_u(W_u x + b_u)) − x` (identity `σ` on the
//! output layer) and the control jumps by one at `t = 1, …, m+1`. A jump at
//! `t = u` replaces the state by the output of layer `u`.

use alloc::vec;
use alloc::vec::Vec;

use super::control::Control;
use super::field::VectorField;
use super::solve::solve_code;
use crate::activation::ActivationKind;
use crate::bounds::ArchitectureSpec;
use crate::error::Result;
use crate::math::{dist, norm};
use crate::network::{forward, Params};

#[derive(Clone, Debug, PartialEq)]
pub struct DnnField {
    pub widths: Vec<usize>,
    /// `None` on the output layer.
    pub activations: Vec<Option<ActivationKind>>,
    ell: usize,
    /// Flat offset of each layer's weights.
    offsets: Vec<usize>,
}

impl DnnField {
    pub fn new(arch: &ArchitectureSpec) -> Result<Self> {
        arch.validate()?;
        let mut activations: Vec<Option<ActivationKind>> = arch.activations.iter().map(|a| Some(a.kind)).collect();
        activations.push(None);
        let mut offsets = Vec::with_capacity(arch.widths.len() - 1);
        let mut off = 0;
        for u in 1..arch.widths.len() {
            offsets.push(off);
            off += arch.layer_param_count(u);
        }
        let ell = arch.widths.iter().copied().max().unwrap_or(1);
        Ok(Self { widths: arch.widths.clone(), activations, ell, offsets })
    }

    /// 0-based affine layer active at time `t`: the one with `t ∈ (u−1, u]`.
    fn layer_at(&self, t: f64) -> usize {
        let last = self.widths.len() - 2;
        let u = libm::ceil(t).max(1.0) as usize;
        u.min(last + 1) - 1
    }

    /// Pre-activations `z = W x + b` and the activation of layer `k`.
    fn pre(&self, k: usize, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.widths[k + 1], self.widths[k]);
        let w = &theta[self.offsets[k]..self.offsets[k] + rows * cols];
        let b = &theta[self.offsets[k] + rows * cols..self.offsets[k] + rows * cols + rows];
        (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum::<f64>() + b[r]).collect()
    }

    fn act(&self, k: usize, z: f64) -> (f64, f64) {
        match self.activations[k] {
            Some(kind) => (kind.value(z), kind.derivative(z)),
            None => (z, 1.0),
        }
    }
}

impl VectorField for DnnField {
    fn state_dim(&self) -> usize {
        self.ell
    }
    fn param_dim(&self) -> usize {
        (1..self.widths.len()).map(|u| self.widths[u] * self.widths[u - 1] + self.widths[u]).sum()
    }
    fn eval(&self, _: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
        let k = self.layer_at(t);
        let z = self.pre(k, theta, x);
        let mut out: Vec<f64> = x.iter().map(|v| -v).collect();
        for (r, &zr) in z.iter().enumerate() {
            out[r] += self.act(k, zr).0;
        }
        out
    }
    fn jac_x(&self, _: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
        let k = self.layer_at(t);
        let (rows, cols, l) = (self.widths[k + 1], self.widths[k], self.ell);
        let z = self.pre(k, theta, x);
        let w = &theta[self.offsets[k]..];
        let mut out = vec![0.0; l * l];
        for i in 0..l {
            out[i * l + i] = -1.0;
        }
        for r in 0..rows {
            let d = self.act(k, z[r]).1;
            for c in 0..cols {
                out[r * l + c] += d * w[r * cols + c];
            }
        }
        out
    }
    fn jac_theta(&self, _: usize, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
        let k = self.layer_at(t);
        let (rows, cols, n) = (self.widths[k + 1], self.widths[k], self.param_dim());
        let z = self.pre(k, theta, x);
        let off = self.offsets[k];
        let mut out = vec![0.0; self.ell * n];
        for r in 0..rows {
            let d = self.act(k, z[r]).1;
            for c in 0..cols {
                out[r * n + off + r * cols + c] = d * x[c];
            }
            out[r * n + off + rows * cols + r] = d;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DnnCode {
    pub field: DnnField,
    pub control: Control,
    pub theta: Vec<f64>,
}

impl DnnCode {
    /// Input zero-padded to the state dimension.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.field.state_dim()];
        out[..x.len()].copy_from_slice(x);
        out
    }
}

pub fn dnn_as_code(arch: &ArchitectureSpec, params: &Params) -> Result<DnnCode> {
    params.check(arch)?;
    let field = DnnField::new(arch)?;
    let control = Control::unit_steps(arch.depth() + 1);
    Ok(DnnCode { field, control, theta: params.to_flat() })
}

/// Largest relative error, over the integer times `u = 1, …, m+1`, between the
/// embedded state `X_u` and the zero-padded output of layer `u`.
pub fn equivalence_error(arch: &ArchitectureSpec, params: &Params, x: &[f64]) -> Result<f64> {
    let code = dnn_as_code(arch, params)?;
    let trace = forward(params, arch, x)?;
    let traj = solve_code(&code.field, core::slice::from_ref(&code.control), &code.theta, &code.embed(x), 1)?;
    let mut worst: f64 = 0.0;
    for u in 1..=arch.depth() + 1 {
        let reference = if u <= arch.depth() { &trace.post_activations[u - 1] } else { &trace.output };
        let reference = code.embed(reference);
        let state = traj.state_at(u as f64).unwrap_or(&[]);
        if state.len() != reference.len() {
            return Ok(f64::INFINITY);
        }
        let err = dist(state, &reference);
        let scale = norm(&reference);
        worst = worst.max(if scale > 0.0 { err / scale } else { err });
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationEnvelope;
    use crate::code_net::solve::solve_first_variation;
    use crate::network::{init_uniform_ball, output_jacobian};

    #[test]
    fn scalar_tanh_net_layer_by_layer() {
        let arch = ArchitectureSpec::uniform(vec![1, 1, 1], ActivationEnvelope::tanh()).unwrap();
        let params = Params::from_flat(&arch.widths, &[0.7, -0.2, 1.3, 0.4]).unwrap();
        let code = dnn_as_code(&arch, &params).unwrap();
        let traj = solve_code(&code.field, core::slice::from_ref(&code.control), &code.theta, &[0.5], 1).unwrap();
        let x1 = libm::tanh(0.7 * 0.5 - 0.2);
        assert!((traj.state_at(1.0).unwrap()[0] - x1).abs() < 1e-15);
        assert!((traj.final_state()[0] - (1.3 * x1 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn random_nets_are_equivalent() {
        for seed in 0..20u64 {
            let widths = vec![3, 4, 2, 4, 1];
            let arch = ArchitectureSpec::uniform(widths.clone(), ActivationEnvelope::sigmoid()).unwrap();
            let params = init_uniform_ball(&widths, 3.0, seed);
            let err = equivalence_error(&arch, &params, &[0.3, -1.0, 2.0]).unwrap();
            assert!(err <= 1e-12, "seed {seed}: {err}");
        }
    }

    #[test]
    fn first_variation_is_the_parameter_jacobian() {
        let widths = vec![2, 3, 2];
        let arch = ArchitectureSpec::uniform(widths.clone(), ActivationEnvelope::tanh()).unwrap();
        let params = init_uniform_ball(&widths, 2.0, 5);
        let code = dnn_as_code(&arch, &params).unwrap();
        let x = [0.4, -0.9];
        let traj =
            solve_first_variation(&code.field, core::slice::from_ref(&code.control), &code.theta, &code.embed(&x), 1)
                .unwrap();
        let dx = traj.final_dx.unwrap();
        let jac = output_jacobian(&params, &arch, &x).unwrap();
        let n = params.len();
        for r in 0..2 {
            for a in 0..n {
                assert!((dx[r * n + a] - jac[r * n + a]).abs() < 1e-12);
            }
        }
    }
}
