use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bounds::LossEnvelope;
use crate::error::{invalid, shape, Result};
use crate::math::sqrt;

/// Loss `g(x, y)` applied to the network output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossHead {
    /// `‖x − y‖²`
    SquaredError,
    /// `Σ δ² (√(1 + ((x_i − y_i)/δ)²) − 1)`
    PseudoHuber { delta: f64 },
    /// `Σ x_i`, no target.
    Linear,
    /// `g ≡ 0`
    Zero,
}

impl LossHead {
    pub fn validate(&self) -> Result<()> {
        if let LossHead::PseudoHuber { delta } = *self {
            if !(delta.is_finite() && delta > 0.0) {
                return Err(invalid!("pseudo_huber delta must be positive, got {delta}"));
            }
        }
        Ok(())
    }

    pub fn needs_target(&self) -> bool {
        matches!(self, LossHead::SquaredError | LossHead::PseudoHuber { .. })
    }

    pub fn check_target(&self, out_dim: usize, y: &[f64]) -> Result<()> {
        if self.needs_target() && y.len() != out_dim {
            return Err(shape!("target has length {}, output has {}", y.len(), out_dim));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            LossHead::SquaredError => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
            LossHead::PseudoHuber { delta } => x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let t = (a - b) / delta;
                    delta * delta * (sqrt(1.0 + t * t) - 1.0)
                })
                .sum(),
            LossHead::Linear => x.iter().sum(),
            LossHead::Zero => 0.0,
        }
    }

    /// `∂g/∂x`
    pub fn gradient(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match *self {
            LossHead::SquaredError => x.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect(),
            LossHead::PseudoHuber { delta } => x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let d = a - b;
                    let t = d / delta;
                    d / sqrt(1.0 + t * t)
                })
                .collect(),
            LossHead::Linear => vec![1.0; x.len()],
            LossHead::Zero => vec![0.0; x.len()],
        }
    }

    /// Diagonal of `∂²g/∂x²` (every head here is separable).
    pub fn hessian_diag(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match *self {
            LossHead::SquaredError => vec![2.0; x.len()],
            LossHead::PseudoHuber { delta } => x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let t = (a - b) / delta;
                    let q = 1.0 + t * t;
                    1.0 / (q * sqrt(q))
                })
                .collect(),
            LossHead::Linear | LossHead::Zero => vec![0.0; x.len()],
        }
    }

    /// Envelope on the set `‖x‖ ≤ output_bound`, `‖y‖ ≤ target_bound`.
    ///
    /// `g''_max` is the Frobenius norm bound of the Hessian; `lip_dg` its
    /// operator norm bound. Only the squared error needs the bounds.
    pub fn envelope(&self, output_bound: f64, target_bound: f64, dim: usize) -> Result<LossEnvelope> {
        self.validate()?;
        if dim == 0 {
            return Err(invalid!("output dimension must be positive"));
        }
        let root = sqrt(dim as f64);
        Ok(match *self {
            LossHead::SquaredError => {
                if !(output_bound.is_finite() && target_bound.is_finite()) || output_bound < 0.0 || target_bound < 0.0 {
                    return Err(invalid!(
                        "squared error needs finite output and target bounds, got {output_bound}, {target_bound}"
                    ));
                }
                let gp = 2.0 * (output_bound + target_bound);
                LossEnvelope { g_p_max: gp, g_pp_max: 2.0 * root, lip_g: gp, lip_dg: 2.0 }
            }
            LossHead::PseudoHuber { delta } => {
                LossEnvelope { g_p_max: delta * root, g_pp_max: root, lip_g: delta * root, lip_dg: 1.0 }
            }
            LossHead::Linear => LossEnvelope { g_p_max: root, g_pp_max: 0.0, lip_g: root, lip_dg: 0.0 },
            LossHead::Zero => LossEnvelope { g_p_max: 0.0, g_pp_max: 0.0, lip_g: 0.0, lip_dg: 0.0 },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_error_envelope() {
        let e = LossHead::SquaredError.envelope(1.0, 1.0, 1).unwrap();
        assert_eq!((e.g_p_max, e.g_pp_max), (4.0, 2.0));
        assert!(LossHead::SquaredError.envelope(f64::INFINITY, 1.0, 1).is_err());
    }

    #[test]
    fn pseudo_huber_envelope_matches_grid_maximum() {
        let head = LossHead::PseudoHuber { delta: 1.0 };
        let e = head.envelope(0.0, 0.0, 1).unwrap();
        let (mut gp, mut gpp) = (0.0f64, 0.0f64);
        for i in -200_000..=200_000 {
            let x = i as f64 * 1e-3;
            gp = gp.max(head.gradient(&[x], &[0.0])[0].abs());
            gpp = gpp.max(head.hessian_diag(&[x], &[0.0])[0].abs());
        }
        assert!(gp <= e.g_p_max && gp > 0.99);
        assert_eq!(gpp, e.g_pp_max);
    }

    #[test]
    fn squared_error_gradient_zero_at_target() {
        let y = [0.3, -1.2];
        assert_eq!(LossHead::SquaredError.gradient(&y, &y), vec![0.0, 0.0]);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let y = [0.4];
        for head in [LossHead::SquaredError, LossHead::PseudoHuber { delta: 0.7 }, LossHead::Linear] {
            for &x in &[-2.0, -0.1, 0.5, 3.0] {
                let h = 1e-6;
                let fd = (head.value(&[x + h], &y) - head.value(&[x - h], &y)) / (2.0 * h);
                assert!((fd - head.gradient(&[x], &y)[0]).abs() < 1e-7);
                let fd2 = (head.gradient(&[x + h], &y)[0] - head.gradient(&[x - h], &y)[0]) / (2.0 * h);
                assert!((fd2 - head.hessian_diag(&[x], &y)[0]).abs() < 1e-7);
            }
        }
    }
}
