//! Tighter constants from per-layer parameter budgets.
//!
//! Every parameter vector in the `B_Ω` ball splits into layer blocks with
//! norms `D_u`, `Σ D_u² < B_Ω²`, and the recursion stays valid with `D_u` in
//! place of `B_Ω` on layer `u`. The certificate therefore only needs the
//! maximum of each constant over the sphere `Σ D_u² = B_Ω²` (the constants
//! are nondecreasing in every `D_u`). That maximum is found numerically by
//! multi-start coordinate ascent over pairwise rotations: `(D_i, D_j) =
//! r (cos φ, sin φ)` keeps the sphere fixed, and each rotation angle is
//! chosen by golden-section search on `[0, π/2]`.
//!
//! The result is the best value found, not a proven global maximum.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::recursion::{evaluate, Constants};
use super::{inputs_digest, ArchitectureSpec, BoundInputs, Certificate, LossEnvelope, Method};
use crate::error::{invalid, Result};
use crate::math::{abs, cos, sin, sqrt};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub restarts: usize,
    /// Maximum number of sweeps over all coordinate pairs per restart.
    pub iters: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { restarts: 8, iters: 200, seed: 0 }
    }
}

/// Best budget vector found for one constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantSearch {
    #[serde(with = "crate::serde_float")]
    pub value: f64,
    #[serde(with = "crate::serde_float::vec")]
    pub budgets: Vec<f64>,
    /// Every restart stopped because a sweep no longer improved.
    pub converged: bool,
    /// Some restart hit the sweep limit while still improving.
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub search: SearchConfig,
    pub l_n: ConstantSearch,
    pub l_grad_n: ConstantSearch,
    pub l_phi: ConstantSearch,
    pub l_grad_phi: ConstantSearch,
    pub evaluations: u64,
}

const GOLDEN_STEPS: usize = 40;
const REL_IMPROVEMENT: f64 = 1e-12;

/// Maximizes `L_N`, `L_∇N`, `L_Φ` and `L_∇Φ` separately over budget vectors
/// on the sphere. Per-layer constants are reported at the `L_N` maximizer.
pub fn refine_over_layer_budgets(
    arch: &ArchitectureSpec,
    inputs: &BoundInputs,
    loss: &LossEnvelope,
    search: &SearchConfig,
) -> Result<Certificate> {
    arch.validate()?;
    inputs.validate(arch.depth())?;
    loss.validate()?;
    if arch.depth() == 0 {
        return Err(invalid!("budget refinement needs at least one hidden layer"));
    }
    if search.restarts == 0 {
        return Err(invalid!("refinement needs at least one restart"));
    }
    let norms = &inputs.sample_norms;
    let b = inputs.b_omega;
    let n = arch.depth() + 1;
    let mut evaluations = 0u64;

    let pick: [fn(&Constants) -> f64; 4] = [|c| c.l_n, |c| c.l_grad_n, |c| c.l_phi, |c| c.l_grad_phi];
    let mut results = Vec::with_capacity(4);
    for (which, get) in pick.iter().enumerate() {
        let mut f = |d: &[f64]| -> Result<f64> {
            evaluations += 1;
            Ok(get(&evaluate(arch, d, norms, loss)?))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
        rng.set_stream(which as u64);
        results.push(maximize(&mut f, n, b, search, &mut rng)?);
    }

    let mut c = evaluate(arch, &results[0].budgets, norms, loss)?;
    c.l_n = results[0].value;
    c.l_grad_n = results[1].value;
    c.l_phi = results[2].value;
    c.l_grad_phi = results[3].value;
    let mut cert =
        c.into_certificate(Method::RefinedBudgets, inputs_digest(Method::RefinedBudgets, arch, inputs, loss));
    let mut it = results.into_iter();
    cert.refinement = Some(RefinementReport {
        search: *search,
        l_n: it.next().unwrap(),
        l_grad_n: it.next().unwrap(),
        l_phi: it.next().unwrap(),
        l_grad_phi: it.next().unwrap(),
        evaluations,
    });
    Ok(cert)
}

fn maximize(
    f: &mut impl FnMut(&[f64]) -> Result<f64>,
    n: usize,
    b: f64,
    search: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ConstantSearch> {
    let mut best =
        ConstantSearch { value: f64::NEG_INFINITY, budgets: vec![], converged: true, budget_exhausted: false };
    let consider = |d: &[f64], v: f64, best: &mut ConstantSearch| {
        if v > best.value {
            best.value = v;
            best.budgets = d.to_vec();
        }
    };

    // corners are cheap candidates and sometimes optimal
    for i in 0..n {
        let mut d = vec![0.0; n];
        d[i] = b;
        let v = f(&d)?;
        consider(&d, v, &mut best);
    }

    for restart in 0..search.restarts {
        let mut d = if restart == 0 { vec![b / sqrt(n as f64); n] } else { random_on_sphere(rng, n, b) };
        let mut v = f(&d)?;
        let mut converged = false;
        for _ in 0..search.iters {
            let before = v;
            for i in 0..n {
                for j in i + 1..n {
                    v = rotate_pair(f, &mut d, i, j, v, b)?;
                }
            }
            if !(v > before + REL_IMPROVEMENT * abs(before)) {
                converged = true;
                break;
            }
        }
        best.converged &= converged;
        best.budget_exhausted |= !converged;
        consider(&d, v, &mut best);
    }
    Ok(best)
}

fn random_on_sphere(rng: &mut ChaCha8Rng, n: usize, b: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| abs(rng.sample::<f64, _>(StandardNormal))).collect();
        let norm = sqrt(g.iter().map(|x| x * x).sum());
        if norm > 0.0 {
            return g.iter().map(|x| (x / norm * b).min(b)).collect();
        }
    }
}

/// Golden-section search over the rotation angle of `(D_i, D_j)`; keeps the
/// current point unless a strictly better one is found.
fn rotate_pair(
    f: &mut impl FnMut(&[f64]) -> Result<f64>,
    d: &mut [f64],
    i: usize,
    j: usize,
    current: f64,
    b: f64,
) -> Result<f64> {
    let r = sqrt(d[i] * d[i] + d[j] * d[j]);
    if r == 0.0 {
        return Ok(current);
    }
    let mut trial = d.to_vec();
    let mut at = |phi: f64, trial: &mut Vec<f64>| -> Result<f64> {
        trial[i] = (r * cos(phi)).min(b).max(0.0);
        trial[j] = (r * sin(phi)).min(b).max(0.0);
        f(trial)
    };
    let inv_phi = (sqrt(5.0) - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, core::f64::consts::FRAC_PI_2);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = at(x1, &mut trial)?;
    let mut f2 = at(x2, &mut trial)?;
    for _ in 0..GOLDEN_STEPS {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = at(x1, &mut trial)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = at(x2, &mut trial)?;
        }
    }
    let mut best = (current, None);
    for phi in [lo, hi, x1, x2, 0.0, core::f64::consts::FRAC_PI_2] {
        let v = at(phi, &mut trial)?;
        if v > best.0 {
            best = (v, Some((trial[i], trial[j])));
        }
    }
    if let Some((di, dj)) = best.1 {
        d[i] = di;
        d[j] = dj;
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationEnvelope;
    use crate::bounds::loss_certificate;

    fn setup() -> (ArchitectureSpec, BoundInputs, LossEnvelope) {
        let arch = ArchitectureSpec::uniform(vec![2, 3, 2, 1], ActivationEnvelope::tanh()).unwrap();
        let inputs = BoundInputs::new(1.5, crate::SampleNorms::Finite(vec![0.5, 1.0, 2.0]));
        (arch, inputs, LossEnvelope::from_derivative_bounds(2.0, 1.0))
    }

    #[test]
    fn refined_never_exceeds_uniform() {
        let (arch, inputs, loss) = setup();
        let uni = loss_certificate(&arch, &inputs, &loss).unwrap();
        let r = refine_over_layer_budgets(&arch, &inputs, &loss, &SearchConfig::default()).unwrap();
        assert!(r.l_n_final <= uni.l_n_final);
        assert!(r.l_grad_n_final <= uni.l_grad_n_final);
        assert!(r.l_phi <= uni.l_phi);
        assert!(r.l_grad_phi <= uni.l_grad_phi);
        let rep = r.refinement.as_ref().unwrap();
        for cs in [&rep.l_n, &rep.l_grad_n, &rep.l_phi, &rep.l_grad_phi] {
            let sq: f64 = cs.budgets.iter().map(|d| d * d).sum();
            assert!((sq - 1.5 * 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn refinement_is_deterministic() {
        let (arch, inputs, loss) = setup();
        let cfg = SearchConfig { restarts: 3, iters: 20, seed: 7 };
        let a = refine_over_layer_budgets(&arch, &inputs, &loss, &cfg).unwrap();
        let b = refine_over_layer_budgets(&arch, &inputs, &loss, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn at_least_as_good_as_symmetric_start() {
        let (arch, inputs, loss) = setup();
        let r = refine_over_layer_budgets(&arch, &inputs, &loss, &SearchConfig::default()).unwrap();
        let d = vec![1.5 / 3f64.sqrt(); 3];
        let at_sym = evaluate(&arch, &d, &inputs.sample_norms, &loss).unwrap();
        assert!(r.l_n_final >= at_sym.l_n);
        assert!(r.l_grad_phi >= at_sym.l_grad_phi);
    }
}
