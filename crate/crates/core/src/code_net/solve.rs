//! Explicit left-point Euler integration against the controls.
//!
//! The time grid is the union of a uniform grid with `n_substeps` points on
//! every density segment and all jump times. Between grid points the
//! increment is `Σ_i V_i(t_k, X_{t_k}) Δu_i` with `Δu_i` the exact density
//! integral; at a jump time `τ` the update `Σ_i V_i(τ, X_{τ−}) Δu_i(τ)`
//! follows the density step ending at `τ`, so jumps are integrated exactly.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::control::Control;
use super::field::{SecondOrderField, VectorField};
use crate::error::{invalid, shape, Result};
use crate::math::norm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveStatus {
    Completed,
    /// The state became non-finite at this time; the trajectory stops before it.
    NonFinite {
        time: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Grid times, starting at 0.
    pub times: Vec<f64>,
    /// `X_t` (after any jump at `t`) for each grid time.
    pub states: Vec<Vec<f64>>,
    /// Frobenius norm of `∂X_t` per grid time (first or second variation solves).
    pub dx_norms: Vec<f64>,
    /// Final `∂X_T`, row-major `ℓ x n`.
    pub final_dx: Option<Vec<f64>>,
    /// Final `∂∂X_T` with index order (state, θ-row, θ-column).
    pub final_ddx: Option<Vec<f64>>,
    pub status: SolveStatus,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(|s| s.as_slice()).unwrap_or(&[])
    }

    /// State at the last grid time `≤ t`.
    pub fn state_at(&self, t: f64) -> Option<&[f64]> {
        let idx = self.times.iter().rposition(|&s| s <= t)?;
        Some(&self.states[idx])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Order {
    State,
    First,
    Second,
}

pub fn solve_code<F: VectorField + ?Sized>(
    field: &F,
    controls: &[Control],
    theta: &[f64],
    x: &[f64],
    n_substeps: usize,
) -> Result<Trajectory> {
    run(&StateOnly(field), controls, theta, x, n_substeps, Order::State)
}

pub fn solve_first_variation<F: VectorField + ?Sized>(
    field: &F,
    controls: &[Control],
    theta: &[f64],
    x: &[f64],
    n_substeps: usize,
) -> Result<Trajectory> {
    run(&StateOnly(field), controls, theta, x, n_substeps, Order::First)
}

pub fn solve_second_variation<F: SecondOrderField + ?Sized>(
    field: &F,
    controls: &[Control],
    theta: &[f64],
    x: &[f64],
    n_substeps: usize,
) -> Result<Trajectory> {
    run(&Full(field), controls, theta, x, n_substeps, Order::Second)
}

/// One integrator serves first- and second-order fields; only the latter
/// supplies second derivatives.
trait Integrand {
    type F: VectorField + ?Sized;
    fn field(&self) -> &Self::F;
    /// `(Vθθ, Vθx, Vxθ, Vxx)` at `(t, x)`.
    fn second(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Option<[Vec<f64>; 4]>;
}

struct StateOnly<'a, F: ?Sized>(&'a F);
struct Full<'a, F: ?Sized>(&'a F);

impl<F: VectorField + ?Sized> Integrand for StateOnly<'_, F> {
    type F = F;
    fn field(&self) -> &F {
        self.0
    }
    fn second(&self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Option<[Vec<f64>; 4]> {
        None
    }
}

impl<F: SecondOrderField + ?Sized> Integrand for Full<'_, F> {
    type F = F;
    fn field(&self) -> &F {
        self.0
    }
    fn second(&self, i: usize, theta: &[f64], t: f64, x: &[f64]) -> Option<[Vec<f64>; 4]> {
        let f = self.0;
        Some([
            f.d_theta_theta(i, theta, t, x),
            f.d_theta_x(i, theta, t, x),
            f.d_x_theta(i, theta, t, x),
            f.d_x_x(i, theta, t, x),
        ])
    }
}

fn time_grid(controls: &[Control], n_substeps: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    for c in controls {
        grid.push(c.horizon);
        for &(t, _) in &c.jumps {
            grid.push(t);
        }
        for s in &c.segments {
            let h = (s.end - s.start) / n_substeps as f64;
            for k in 0..=n_substeps {
                grid.push(if k == n_substeps { s.end } else { s.start + k as f64 * h });
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Increment of the state and its variations over one sub-step, evaluated
/// at the left state `(x, dx, ddx)` with control increments `du`.
struct Increment {
    x: Vec<f64>,
    dx: Vec<f64>,
    ddx: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn increment<I: Integrand>(
    integrand: &I,
    order: Order,
    theta: &[f64],
    t: f64,
    x: &[f64],
    dx: &[f64],
    ddx: &[f64],
    du: &[f64],
) -> Increment {
    let field = integrand.field();
    let (l, n) = (field.state_dim(), field.param_dim());
    let mut inc = Increment {
        x: vec![0.0; l],
        dx: vec![0.0; if order >= Order::First { l * n } else { 0 }],
        ddx: vec![0.0; if order >= Order::Second { l * n * n } else { 0 }],
    };
    for (i, &d) in du.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let v = field.eval(i, theta, t, x);
        for k in 0..l {
            inc.x[k] += v[k] * d;
        }
        if order == Order::State {
            continue;
        }
        let vx = field.jac_x(i, theta, t, x);
        let vt = field.jac_theta(i, theta, t, x);
        // d∂X[k,a] = (Vθ[k,a] + Σ_j Vx[k,j] ∂X[j,a]) du
        for k in 0..l {
            for a in 0..n {
                let mut s = vt[k * n + a];
                for j in 0..l {
                    s += vx[k * l + j] * dx[j * n + a];
                }
                inc.dx[k * n + a] += s * d;
            }
        }
        if order == Order::First {
            continue;
        }
        let [tt, tx, xt, xx] = integrand.second(i, theta, t, x).expect("second-order solve needs second derivatives");
        for k in 0..l {
            for a in 0..n {
                for b in 0..n {
                    let mut s = tt[(k * n + a) * n + b];
                    for j in 0..l {
                        s += tx[(k * n + a) * l + j] * dx[j * n + b];
                        s += xt[(k * l + j) * n + b] * dx[j * n + a];
                        s += vx[k * l + j] * ddx[(j * n + a) * n + b];
                        let mut inner = 0.0;
                        for ii in 0..l {
                            inner += xx[(k * l + j) * l + ii] * dx[ii * n + b];
                        }
                        s += inner * dx[j * n + a];
                    }
                    inc.ddx[(k * n + a) * n + b] += s * d;
                }
            }
        }
    }
    inc
}

fn run<I: Integrand>(
    integrand: &I,
    controls: &[Control],
    theta: &[f64],
    x0: &[f64],
    n_substeps: usize,
    order: Order,
) -> Result<Trajectory> {
    let field = integrand.field();
    let (l, n) = (field.state_dim(), field.param_dim());
    if controls.len() != field.n_controls() {
        return Err(shape!("field has {} controls, got {}", field.n_controls(), controls.len()));
    }
    if theta.len() != n || x0.len() != l {
        return Err(shape!("expected theta of length {n} and x of length {l}"));
    }
    if n_substeps == 0 {
        return Err(invalid!("n_substeps must be at least 1"));
    }
    for c in controls {
        c.validate()?;
    }
    if controls.windows(2).any(|w| w[0].horizon != w[1].horizon) {
        return Err(invalid!("all controls must share one horizon"));
    }

    let grid = time_grid(controls, n_substeps);
    let mut x = x0.to_vec();
    let mut dx = vec![0.0; if order >= Order::First { l * n } else { 0 }];
    let mut ddx = vec![0.0; if order >= Order::Second { l * n * n } else { 0 }];
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        dx_norms: if order >= Order::First { vec![0.0] } else { vec![] },
        final_dx: None,
        final_ddx: None,
        status: SolveStatus::Completed,
    };
    let apply = |x: &mut Vec<f64>, dx: &mut Vec<f64>, ddx: &mut Vec<f64>, inc: Increment| {
        x.iter_mut().zip(inc.x).for_each(|(a, b)| *a += b);
        dx.iter_mut().zip(inc.dx).for_each(|(a, b)| *a += b);
        ddx.iter_mut().zip(inc.ddx).for_each(|(a, b)| *a += b);
    };

    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let du: Vec<f64> = controls.iter().map(|c| c.ac_increment(t0, t1)).collect();
        if du.iter().any(|&d| d != 0.0) {
            let inc = increment(integrand, order, theta, t0, &x, &dx, &ddx, &du);
            apply(&mut x, &mut dx, &mut ddx, inc);
        }
        let jumps: Vec<f64> = controls.iter().map(|c| c.jump_at(t1)).collect();
        if jumps.iter().any(|&d| d != 0.0) {
            let inc = increment(integrand, order, theta, t1, &x, &dx, &ddx, &jumps);
            apply(&mut x, &mut dx, &mut ddx, inc);
        }
        let finite = x.iter().chain(&dx).chain(&ddx).all(|v| v.is_finite());
        if !finite {
            traj.status = SolveStatus::NonFinite { time: t1 };
            break;
        }
        traj.times.push(t1);
        traj.states.push(x.clone());
        if order >= Order::First {
            traj.dx_norms.push(norm(&dx));
        }
    }
    if traj.status == SolveStatus::Completed {
        if order >= Order::First {
            traj.final_dx = Some(dx);
        }
        if order >= Order::Second {
            traj.final_ddx = Some(ddx);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_net::field::{ScalarLinearField, ZeroField};
    use core::f64::consts::E;

    #[test]
    fn zero_field_keeps_state() {
        let f = ZeroField { ell: 2, n: 3 };
        let t = solve_first_variation(&f, &[Control::time(1.0)], &[0.1, 0.2, 0.3], &[1.0, -2.0], 10).unwrap();
        assert_eq!(t.final_state(), &[1.0, -2.0]);
        assert!(t.final_dx.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exponential_growth() {
        for n in [100, 1000, 10_000] {
            let t = solve_code(&ScalarLinearField, &[Control::time(1.0)], &[1.0], &[1.0], n).unwrap();
            let err = (t.final_state()[0] - E).abs();
            assert!(err <= 3.0 * E / n as f64, "n={n} err={err}");
        }
    }

    #[test]
    fn scalar_linear_variations_at_zero() {
        let t = solve_second_variation(&ScalarLinearField, &[Control::time(1.0)], &[0.0], &[1.0], 10_000).unwrap();
        assert!((t.final_dx.as_ref().unwrap()[0] - 1.0).abs() < 1e-3);
        assert!((t.final_ddx.as_ref().unwrap()[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn jumps_use_left_limit() {
        // X jumps by θ·X_{τ−}: two unit jumps double twice at θ = 1
        let t = solve_code(&ScalarLinearField, &[Control::unit_steps(2)], &[1.0], &[3.0], 5).unwrap();
        assert_eq!(t.final_state(), &[12.0]);
        assert_eq!(t.state_at(1.5).unwrap(), &[6.0]);
    }

    #[test]
    fn reports_non_finite_state() {
        let c = Control { jumps: vec![(0.5, 1e308), (1.0, 1e308)], segments: vec![], horizon: 1.0 };
        let t = solve_code(&ScalarLinearField, &[c], &[10.0], &[10.0], 1).unwrap();
        assert!(matches!(t.status, SolveStatus::NonFinite { .. }));
    }
}
