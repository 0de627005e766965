//! Scalar activations with analytic first and second derivatives, and the
//! uniform envelopes (`sup |σ|`, `sup |σ'|`, `sup |σ''|`) the bounds consume.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Fraction of `r` over which the saturated-linear kink is smoothed on each
/// side of `±r`.
const SATURATION_SMOOTHING: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    /// ReLU with the kink replaced by a quadratic on `[-delta, delta]`.
    SmoothedRelu {
        delta: f64,
    },
    /// `c * clamp(x, -r, r)` with quintic-smoothstep corners on
    /// `[r - r/4, r + r/4]` (and mirrored).
    SaturatedLinear {
        c: f64,
        r: f64,
    },
}

impl ActivationKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::Sigmoid | ActivationKind::Tanh => Ok(()),
            ActivationKind::SmoothedRelu { delta } => {
                if !(delta.is_finite() && delta > 0.0) {
                    return Err(invalid!("smoothed_relu delta must be positive, got {delta}"));
                }
                Ok(())
            }
            ActivationKind::SaturatedLinear { c, r } => {
                if !(c.is_finite() && c > 0.0 && r.is_finite() && r > 0.0) {
                    return Err(invalid!("saturated_linear needs c > 0 and r > 0, got c={c}, r={r}"));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => math::tanh(x),
            ActivationKind::SmoothedRelu { delta } => {
                if x <= -delta {
                    0.0
                } else if x >= delta {
                    x
                } else {
                    (x + delta) * (x + delta) / (4.0 * delta)
                }
            }
            ActivationKind::SaturatedLinear { c, r } => saturated(c, r, x).0,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = math::tanh(x);
                1.0 - t * t
            }
            ActivationKind::SmoothedRelu { delta } => {
                if x <= -delta {
                    0.0
                } else if x >= delta {
                    1.0
                } else {
                    (x + delta) / (2.0 * delta)
                }
            }
            ActivationKind::SaturatedLinear { c, r } => saturated(c, r, x).1,
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            ActivationKind::Tanh => {
                let t = math::tanh(x);
                -2.0 * t * (1.0 - t * t)
            }
            ActivationKind::SmoothedRelu { delta } => {
                if x <= -delta || x >= delta {
                    0.0
                } else {
                    1.0 / (2.0 * delta)
                }
            }
            ActivationKind::SaturatedLinear { c, r } => saturated(c, r, x).2,
        }
    }

    /// Stored envelope constants for this activation.
    pub fn envelope(&self) -> ActivationEnvelope {
        match *self {
            ActivationKind::Sigmoid => ActivationEnvelope::sigmoid(),
            ActivationKind::Tanh => ActivationEnvelope::tanh(),
            ActivationKind::SmoothedRelu { delta } => ActivationEnvelope::smoothed_relu(delta),
            ActivationKind::SaturatedLinear { c, r } => ActivationEnvelope::saturated_linear(c, r),
        }
    }

    /// Half-width of the linear region of a saturated-linear activation.
    pub fn linear_region(&self) -> Option<f64> {
        match *self {
            ActivationKind::SaturatedLinear { r, .. } => Some(r * (1.0 - SATURATION_SMOOTHING)),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

/// Value and the first two derivatives of the smoothed saturated-linear map.
///
/// On the transition band `|x| ∈ [r - δ, r + δ]` the slope is
/// `c (1 - S(t))` with the quintic smoothstep `S(t) = 10t³ - 15t⁴ + 6t⁵` and
/// `t = (|x| - r + δ) / 2δ`, so the map is C² and saturates exactly at `c r`.
fn saturated(c: f64, r: f64, x: f64) -> (f64, f64, f64) {
    let delta = SATURATION_SMOOTHING * r;
    let ax = math::abs(x);
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    if ax <= r - delta {
        (c * x, c, 0.0)
    } else if ax >= r + delta {
        (sign * c * r, 0.0, 0.0)
    } else {
        let t = (ax - (r - delta)) / (2.0 * delta);
        let t2 = t * t;
        let t3 = t2 * t;
        let smooth = t3 * (10.0 - 15.0 * t + 6.0 * t2);
        let smooth_p = 30.0 * t2 * (1.0 - t) * (1.0 - t);
        // ∫₀ᵗ S = 5/2 t⁴ - 3 t⁵ + t⁶
        let integral = t2 * t2 * (2.5 - 3.0 * t + t2);
        let value = c * (r - delta) + 2.0 * c * delta * (t - integral);
        (sign * value, c * (1.0 - smooth), -sign * c * smooth_p / (2.0 * delta))
    }
}

/// Uniform bounds on an activation and its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationEnvelope {
    pub kind: ActivationKind,
    /// `sup |σ|`; infinite for the smoothed ReLU, whose output bound comes
    /// from the input-norm recursion instead.
    #[serde(with = "crate::serde_float")]
    pub sigma_max: f64,
    pub sigma_p_max: f64,
    pub sigma_pp_max: f64,
    /// `sup |σ - relu|`, zero for bounded activations.
    pub relu_epsilon: f64,
}

impl ActivationEnvelope {
    /// `(1, 1, 4/(3√3))`.
    pub fn tanh() -> Self {
        Self {
            kind: ActivationKind::Tanh,
            sigma_max: 1.0,
            sigma_p_max: 1.0,
            sigma_pp_max: 4.0 / (3.0 * SQRT_3),
            relu_epsilon: 0.0,
        }
    }

    /// `(1, 1/4, 1/(6√3))`.
    pub fn sigmoid() -> Self {
        Self {
            kind: ActivationKind::Sigmoid,
            sigma_max: 1.0,
            sigma_p_max: 0.25,
            sigma_pp_max: 1.0 / (6.0 * SQRT_3),
            relu_epsilon: 0.0,
        }
    }

    pub fn smoothed_relu(delta: f64) -> Self {
        Self {
            kind: ActivationKind::SmoothedRelu { delta },
            sigma_max: f64::INFINITY,
            sigma_p_max: 1.0,
            sigma_pp_max: 1.0 / (2.0 * delta),
            relu_epsilon: delta / 4.0,
        }
    }

    pub fn saturated_linear(c: f64, r: f64) -> Self {
        let delta = SATURATION_SMOOTHING * r;
        Self {
            kind: ActivationKind::SaturatedLinear { c, r },
            sigma_max: c * r,
            sigma_p_max: c,
            // max of the smoothstep derivative is 15/8 at t = 1/2
            sigma_pp_max: 15.0 * c / (16.0 * delta),
            relu_epsilon: 0.0,
        }
    }

    /// The output bound of this layer comes from the ReLU-style norm recursion.
    pub fn uses_norm_recursion(&self) -> bool {
        matches!(self.kind, ActivationKind::SmoothedRelu { .. })
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.sigma_p_max) || !finite_nonneg(self.sigma_pp_max) {
            return Err(invalid!("activation derivative envelopes must be finite and nonnegative"));
        }
        if !finite_nonneg(self.relu_epsilon) {
            return Err(invalid!("relu_epsilon must be finite and nonnegative"));
        }
        if self.uses_norm_recursion() {
            if !(self.sigma_max >= 0.0) {
                return Err(invalid!("sigma_max must be nonnegative"));
            }
        } else if !finite_nonneg(self.sigma_max) {
            return Err(invalid!("bounded activations need a finite sigma_max, got {}", self.sigma_max));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_max(kind: ActivationKind, lo: f64, hi: f64, n: usize) -> (f64, f64, f64) {
        let mut m = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..=n {
            let x = lo + (hi - lo) * (i as f64) / (n as f64);
            m.0 = m.0.max(kind.value(x).abs());
            m.1 = m.1.max(kind.derivative(x).abs());
            m.2 = m.2.max(kind.second_derivative(x).abs());
        }
        m
    }

    #[test]
    fn envelopes_hold_on_a_dense_grid() {
        let kinds = [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::SaturatedLinear { c: 1.5, r: 2.0 }];
        for kind in kinds {
            let env = kind.envelope();
            let (v, d1, d2) = grid_max(kind, -20.0, 20.0, 1_000_000);
            assert!(v <= env.sigma_max + 1e-9, "{kind:?}: {v}");
            assert!(d1 <= env.sigma_p_max + 1e-9, "{kind:?}: {d1}");
            assert!(d2 <= env.sigma_pp_max + 1e-9, "{kind:?}: {d2}");
        }
        let relu = ActivationKind::SmoothedRelu { delta: 0.1 };
        let env = relu.envelope();
        let (_, d1, d2) = grid_max(relu, -5.0, 5.0, 1_000_000);
        assert!(d1 <= env.sigma_p_max + 1e-9);
        assert!(d2 <= env.sigma_pp_max + 1e-9);
    }

    #[test]
    fn stored_second_derivative_envelopes_are_attained() {
        // fine grid around the known maximisers
        let (_, _, tanh_pp) = grid_max(ActivationKind::Tanh, 0.5, 0.8, 1_000_000);
        assert!((tanh_pp - ActivationEnvelope::tanh().sigma_pp_max).abs() < 1e-12);
        let (_, _, sig_pp) = grid_max(ActivationKind::Sigmoid, 1.0, 1.6, 1_000_000);
        assert!((sig_pp - ActivationEnvelope::sigmoid().sigma_pp_max).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let kinds = [
            ActivationKind::Tanh,
            ActivationKind::Sigmoid,
            ActivationKind::SmoothedRelu { delta: 0.5 },
            ActivationKind::SaturatedLinear { c: 0.7, r: 1.0 },
        ];
        let h = 1e-6;
        for kind in kinds {
            for i in 0..400 {
                let x = -3.0 + 0.015 * i as f64 + 1e-3;
                let fd1 = (kind.value(x + h) - kind.value(x - h)) / (2.0 * h);
                let fd2 = (kind.derivative(x + h) - kind.derivative(x - h)) / (2.0 * h);
                assert!((fd1 - kind.derivative(x)).abs() < 1e-6, "{kind:?} σ' at {x}");
                // the smoothed relu σ'' jumps at ±δ
                if !matches!(kind, ActivationKind::SmoothedRelu { .. }) {
                    assert!((fd2 - kind.second_derivative(x)).abs() < 1e-5, "{kind:?} σ'' at {x}");
                }
            }
        }
    }

    #[test]
    fn smoothed_relu_gap_is_delta_over_four() {
        let delta = 0.2;
        let k = ActivationKind::SmoothedRelu { delta };
        let gap = (0..=10_000)
            .map(|i| -1.0 + 2.0 * i as f64 / 10_000.0)
            .map(|x: f64| (k.value(x) - x.max(0.0)).abs())
            .fold(0.0, f64::max);
        assert!((gap - delta / 4.0).abs() < 1e-12);
        assert_eq!(k.envelope().relu_epsilon, delta / 4.0);
    }

    #[test]
    fn saturated_linear_is_continuous_and_saturates() {
        let k = ActivationKind::SaturatedLinear { c: 2.0, r: 1.0 };
        assert_eq!(k.value(10.0), 2.0);
        assert_eq!(k.value(-10.0), -2.0);
        assert_eq!(k.value(0.5), 1.0);
        for edge in [0.75, 1.25] {
            assert!((k.value(edge - 1e-12) - k.value(edge + 1e-12)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ActivationKind::SmoothedRelu { delta: 0.0 }.validate().is_err());
        assert!(ActivationKind::SaturatedLinear { c: -1.0, r: 1.0 }.validate().is_err());
        let mut env = ActivationEnvelope::tanh();
        env.sigma_max = f64::INFINITY;
        assert!(env.validate().is_err());
        assert!(ActivationEnvelope::smoothed_relu(0.1).validate().is_ok());
    }
}
