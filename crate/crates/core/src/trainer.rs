//! Gradient descent with the certified step `1/L_∇Φ`, and AdaGrad-norm with
//! certified hyperparameters.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::AdagradParams;
use crate::error::{invalid, Error, Result};
use crate::math::{abs, norm, norm_sq, pow, sqrt};
use crate::network::{self, LossHead, Params, Sample};
use crate::ArchitectureSpec;

/// Differentiable objective on flat parameters.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;
}

/// Objective that is an equally weighted mean over samples.
pub trait FiniteSumObjective: Objective {
    fn n_samples(&self) -> usize;
    fn sample_gradient(&self, theta: &[f64], index: usize) -> Result<Vec<f64>>;
}

/// `Φ(θ) = L ‖θ‖² / 2`, whose gradient is exactly `L`-Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticObjective {
    pub l: f64,
    pub dim: usize,
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(0.5 * self.l * norm_sq(theta))
    }
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(theta.iter().map(|t| self.l * t).collect())
    }
}

impl FiniteSumObjective for QuadraticObjective {
    fn n_samples(&self) -> usize {
        1
    }
    fn sample_gradient(&self, theta: &[f64], _index: usize) -> Result<Vec<f64>> {
        self.gradient(theta)
    }
}

/// Mean per-sample loss of a network over a finite dataset.
#[derive(Clone, Copy, Debug)]
pub struct NetworkObjective<'a> {
    pub arch: &'a ArchitectureSpec,
    pub samples: &'a [Sample],
    pub head: &'a LossHead,
}

impl Objective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }
    fn value(&self, theta: &[f64]) -> Result<f64> {
        network::objective_value(&Params::from_flat(&self.arch.widths, theta)?, self.arch, self.samples, self.head)
    }
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        network::objective_gradient(&Params::from_flat(&self.arch.widths, theta)?, self.arch, self.samples, self.head)
    }
}

impl FiniteSumObjective for NetworkObjective<'_> {
    fn n_samples(&self) -> usize {
        self.samples.len()
    }
    fn sample_gradient(&self, theta: &[f64], index: usize) -> Result<Vec<f64>> {
        let p = Params::from_flat(&self.arch.widths, theta)?;
        network::grad_params(&p, self.arch, &self.samples[index], self.head)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Gd,
    AdagradNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub method: TrainMethod,
    pub steps: usize,
    /// Minibatch size `M` (AdaGrad-norm only; `M ≥ N` means full batch).
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eps_exponent: f64,
    pub seed: u64,
    pub b_omega: f64,
    pub projection_shrink: f64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_omega.is_finite() && self.b_omega > 0.0) {
            return Err(invalid!("b_omega must be positive and finite"));
        }
        if !(self.projection_shrink > 0.0 && self.projection_shrink <= 1.0) {
            return Err(invalid!("projection_shrink must lie in (0, 1], got {}", self.projection_shrink));
        }
        if self.method == TrainMethod::AdagradNorm {
            if self.batch_size == 0 {
                return Err(invalid!("batch_size must be positive"));
            }
            self.adagrad().validate()?;
        }
        Ok(())
    }

    pub fn adagrad(&self) -> AdagradParams {
        AdagradParams { alpha: self.alpha, beta: self.beta, eps_exponent: self.eps_exponent }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub method: TrainMethod,
    pub l_grad_phi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eps_exponent: f64,
    /// `2 α L_∇Φ < β^{1/2+ε}` (always true for gradient descent).
    pub condition_holds: bool,
}

/// One update `Θ^{(j)} → Θ^{(j+1)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    /// `Φ(Θ^{(j)})`
    pub phi: f64,
    /// `‖∇Φ(Θ^{(j)})‖` for gradient descent, `‖G_j‖` for AdaGrad-norm.
    pub grad_norm: f64,
    pub step_size: f64,
    /// `‖Θ^{(j)}‖`
    pub param_norm: f64,
    /// The update was pulled back into the ball.
    pub projected: bool,
    /// Descent inequality on an unprojected gradient descent step.
    pub descent_ok: Option<bool>,
    /// `min_{i≤j}` of `grad_norm`.
    pub min_grad_norm: f64,
    /// Gradient descent: `√(2 L_∇Φ (Φ(Θ⁰) − Φ_best)) / √(j+1)` with the best
    /// value seen in place of the unknown minimum. AdaGrad-norm: the shape
    /// `(j+1)^{-(1/2−ε)}` without its constant.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// A non-finite value appeared at this step; the trace stops there.
    NonFinite {
        step: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
    pub status: TrainStatus,
    pub final_params: Vec<f64>,
    pub final_phi: f64,
    pub descent_violations: usize,
    pub projected_steps: usize,
}

impl TrainTrace {
    pub fn step_sizes(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.step_size)
    }
}

fn check_start(theta0: &[f64], dim: usize, b_omega: f64) -> Result<()> {
    if theta0.len() != dim {
        return Err(Error::ShapeMismatch(alloc::format!("start has length {}, objective {}", theta0.len(), dim)));
    }
    if !(norm(theta0) < b_omega) {
        return Err(invalid!("start point must lie strictly inside the ball of radius {b_omega}"));
    }
    Ok(())
}

fn project(theta: &mut [f64], b_omega: f64, shrink: f64) -> bool {
    let radius = shrink * b_omega;
    let n = norm(theta);
    if n >= radius && n > 0.0 {
        let c = radius / n;
        theta.iter_mut().for_each(|t| *t *= c);
        true
    } else {
        false
    }
}

/// Full-batch gradient descent `Θ^{(j+1)} = Θ^{(j)} − ∇Φ(Θ^{(j)}) / L_∇Φ`.
///
/// The descent inequality `Φ(Θ^{(j)}) − Φ(Θ^{(j+1)}) ≥ ‖∇Φ(Θ^{(j)})‖² / (2 L_∇Φ)`
/// is checked on every step that needed no projection, up to a rounding
/// slack of a few ulps of the objective values.
pub fn run_gd<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    l_grad_phi: f64,
    steps: usize,
    b_omega: f64,
    shrink: f64,
) -> Result<TrainTrace> {
    if l_grad_phi == 0.0 {
        return Err(Error::ConstantObjective);
    }
    if !(l_grad_phi.is_finite() && l_grad_phi > 0.0) {
        return Err(invalid!("L_grad_phi must be positive and finite, got {l_grad_phi}"));
    }
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(invalid!("projection shrink must lie in (0, 1]"));
    }
    check_start(theta0, obj.dim(), b_omega)?;
    let h = 1.0 / l_grad_phi;
    let header = TraceHeader {
        method: TrainMethod::Gd,
        l_grad_phi,
        alpha: h,
        beta: 0.0,
        eps_exponent: 0.0,
        condition_holds: true,
    };
    let mut trace = TrainTrace {
        header,
        steps: Vec::with_capacity(steps),
        status: TrainStatus::Completed,
        final_params: theta0.to_vec(),
        final_phi: f64::NAN,
        descent_violations: 0,
        projected_steps: 0,
    };

    let mut theta = theta0.to_vec();
    let mut phi = obj.value(&theta)?;
    let phi0 = phi;
    let (mut best_phi, mut min_g) = (phi, f64::INFINITY);
    for j in 0..steps {
        let g = obj.gradient(&theta)?;
        let gn = norm(&g);
        if !(phi.is_finite() && gn.is_finite()) {
            trace.status = TrainStatus::NonFinite { step: j };
            break;
        }
        let theta_norm = norm(&theta);
        let mut next: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - h * gi).collect();
        let projected = project(&mut next, b_omega, shrink);
        let next_phi = obj.value(&next)?;
        if !next_phi.is_finite() {
            trace.status = TrainStatus::NonFinite { step: j + 1 };
            break;
        }
        let descent_ok = if projected {
            trace.projected_steps += 1;
            None
        } else {
            let slack = 4.0 * f64::EPSILON * abs(phi).max(abs(next_phi));
            let ok = phi - next_phi >= gn * gn / (2.0 * l_grad_phi) - slack;
            if !ok {
                trace.descent_violations += 1;
            }
            Some(ok)
        };
        min_g = min_g.min(gn);
        best_phi = best_phi.min(next_phi);
        trace.steps.push(TraceStep {
            step: j,
            phi,
            grad_norm: gn,
            step_size: h,
            param_norm: theta_norm,
            projected,
            descent_ok,
            min_grad_norm: min_g,
            rate: 0.0,
        });
        theta = next;
        phi = next_phi;
    }
    // the rate uses the best value over the whole run
    let gap = (phi0 - best_phi).max(0.0);
    for s in &mut trace.steps {
        s.rate = sqrt(2.0 * l_grad_phi * gap) / sqrt((s.step + 1) as f64);
    }
    trace.final_params = theta;
    trace.final_phi = phi;
    Ok(trace)
}

/// AdaGrad-norm: `h_j = α / (β + Σ_{i<j} ‖G_i‖²)^{1/2+ε}` with `G_j` the mean
/// gradient over `M` samples drawn with replacement (the full dataset, in
/// order, when `M ≥ N`).
pub fn run_adagrad_norm<O: FiniteSumObjective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    l_grad_phi: f64,
    config: &TrainerConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    let hp = config.adagrad();
    if !(l_grad_phi.is_finite() && l_grad_phi >= 0.0) {
        return Err(invalid!("L_grad_phi must be finite and nonnegative, got {l_grad_phi}"));
    }
    if !hp.condition_holds(l_grad_phi) {
        return Err(invalid!(
            "hyperparameters violate 2 alpha L < beta^(1/2+eps): alpha={}, beta={}, eps={}, L={l_grad_phi}",
            hp.alpha,
            hp.beta,
            hp.eps_exponent
        ));
    }
    check_start(theta0, obj.dim(), config.b_omega)?;
    let n = obj.n_samples();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let header = TraceHeader {
        method: TrainMethod::AdagradNorm,
        l_grad_phi,
        alpha: hp.alpha,
        beta: hp.beta,
        eps_exponent: hp.eps_exponent,
        condition_holds: true,
    };
    let mut trace = TrainTrace {
        header,
        steps: Vec::with_capacity(config.steps),
        status: TrainStatus::Completed,
        final_params: theta0.to_vec(),
        final_phi: f64::NAN,
        descent_violations: 0,
        projected_steps: 0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = theta0.to_vec();
    let mut acc = 0.0;
    let mut min_g = f64::INFINITY;
    let expo = 0.5 + hp.eps_exponent;
    let full_batch = config.batch_size >= n;
    for j in 0..config.steps {
        let phi = obj.value(&theta)?;
        let h = hp.alpha / pow(hp.beta + acc, expo);
        let mut g = alloc::vec![0.0; theta.len()];
        let m = if full_batch { n } else { config.batch_size };
        for k in 0..m {
            let idx = if full_batch { k } else { rng.random_range(0..n) };
            for (gi, si) in g.iter_mut().zip(obj.sample_gradient(&theta, idx)?) {
                *gi += si;
            }
        }
        g.iter_mut().for_each(|gi| *gi /= m as f64);
        let gn = norm(&g);
        if !(phi.is_finite() && gn.is_finite()) {
            trace.status = TrainStatus::NonFinite { step: j };
            break;
        }
        let theta_norm = norm(&theta);
        theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= h * gi);
        let projected = project(&mut theta, config.b_omega, config.projection_shrink);
        if projected {
            trace.projected_steps += 1;
        }
        acc += gn * gn;
        min_g = min_g.min(gn);
        trace.steps.push(TraceStep {
            step: j,
            phi,
            grad_norm: gn,
            step_size: h,
            param_norm: theta_norm,
            projected,
            descent_ok: None,
            min_grad_norm: min_g,
            rate: 1.0 / pow((j + 1) as f64, 0.5 - hp.eps_exponent),
        });
    }
    trace.final_phi = obj.value(&theta)?;
    trace.final_params = theta;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_converges_in_one_step_with_equality() {
        let obj = QuadraticObjective { l: 4.0, dim: 2 };
        let t = run_gd(&obj, &[0.3, -0.2], 4.0, 3, 1.0, 0.999).unwrap();
        assert_eq!(t.steps[0].descent_ok, Some(true));
        assert_eq!(t.steps[1].phi, 0.0);
        assert_eq!(t.final_params, vec![0.0, 0.0]);
        let drop = t.steps[0].phi - t.steps[1].phi;
        let need = t.steps[0].grad_norm.powi(2) / 8.0;
        assert!((drop - need).abs() <= 1e-16);
    }

    #[test]
    fn zero_gradient_start_is_frozen() {
        let obj = QuadraticObjective { l: 1.0, dim: 3 };
        let t = run_gd(&obj, &[0.0; 3], 1.0, 5, 1.0, 0.999).unwrap();
        assert!(t.steps.iter().all(|s| s.phi == 0.0 && s.descent_ok == Some(true)));
    }

    #[test]
    fn gd_rejects_constant_objective() {
        let obj = QuadraticObjective { l: 0.0, dim: 1 };
        assert_eq!(run_gd(&obj, &[0.1], 0.0, 1, 1.0, 1.0).unwrap_err(), Error::ConstantObjective);
    }

    fn adagrad_config(batch: usize) -> TrainerConfig {
        TrainerConfig {
            method: TrainMethod::AdagradNorm,
            steps: 50,
            batch_size: batch,
            alpha: 0.5,
            beta: 2.0,
            eps_exponent: 0.1,
            seed: 4,
            b_omega: 1.0,
            projection_shrink: 0.999,
        }
    }

    #[test]
    fn adagrad_frozen_at_zero_gradient() {
        let obj = QuadraticObjective { l: 1.0, dim: 2 };
        let t = run_adagrad_norm(&obj, &[0.0, 0.0], 1.0, &adagrad_config(1)).unwrap();
        let h0 = 0.5 / 2f64.powf(0.6);
        assert!(t.steps.iter().all(|s| (s.step_size - h0).abs() < 1e-15));
        assert_eq!(t.final_params, vec![0.0, 0.0]);
    }

    #[test]
    fn adagrad_steps_nonincreasing() {
        let obj = QuadraticObjective { l: 1.0, dim: 2 };
        let t = run_adagrad_norm(&obj, &[0.5, 0.5], 1.0, &adagrad_config(8)).unwrap();
        let h: Vec<f64> = t.step_sizes().collect();
        assert!(h.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
    }

    #[test]
    fn adagrad_rejects_violated_condition() {
        let obj = QuadraticObjective { l: 10.0, dim: 1 };
        assert!(run_adagrad_norm(&obj, &[0.1], 10.0, &adagrad_config(1)).is_err());
    }
}
