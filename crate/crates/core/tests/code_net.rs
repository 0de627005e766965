//! Controlled-ODE solvers against analytic solutions and finite differences,
//! and Grönwall soundness on sampled parameters.

use core::f64::consts::E;

use lipcert_core::code_net::{
    code_certificate, solve_code, solve_first_variation, solve_second_variation, total_variation, AcSegment, Control,
    ScalarLinearField, SecondOrderField, TanhBilinearField,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-8)
}

/// A control mixing a density piece and two jumps on [0, 1].
fn mixed_control() -> Control {
    Control {
        jumps: vec![(0.5, 0.3), (1.0, -0.2)],
        segments: vec![AcSegment { start: 0.0, end: 0.7, rate: 1.0 }, AcSegment { start: 0.7, end: 1.0, rate: -0.5 }],
        horizon: 1.0,
    }
}

fn final_state<F: SecondOrderField>(f: &F, c: &Control, theta: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    solve_code(f, std::slice::from_ref(c), theta, x, n).unwrap().final_state().to_vec()
}

/// Central difference of `X_T` (or `∂X_T` when `first`) along `θ_a`.
fn central<F: SecondOrderField>(
    f: &F,
    c: &Control,
    theta: &[f64],
    x: &[f64],
    n: usize,
    a: usize,
    first: bool,
) -> Vec<f64> {
    let h = 1e-5;
    let shifted = |sign: f64| {
        let mut t = theta.to_vec();
        t[a] += sign * h;
        if first {
            solve_first_variation(f, std::slice::from_ref(c), &t, x, n).unwrap().final_dx.unwrap()
        } else {
            final_state(f, c, &t, x, n)
        }
    };
    let (p, m) = (shifted(1.0), shifted(-1.0));
    p.iter().zip(&m).map(|(p, m)| (p - m) / (2.0 * h)).collect()
}

#[test]
fn euler_converges_at_first_order() {
    let exact = E;
    let mut prev = None;
    for n in [50, 100, 200, 400, 800] {
        let t = solve_code(&ScalarLinearField, &[Control::time(1.0)], &[1.0], &[1.0], n).unwrap();
        let err = (t.final_state()[0] - exact).abs();
        assert!(err <= 3.0 * E / n as f64, "n={n}: {err}");
        if let Some(p) = prev {
            let ratio: f64 = p / err;
            assert!((ratio - 2.0).abs() <= 0.4, "n={n}: error ratio {ratio}");
        }
        prev = Some(err);
    }
}

#[test]
fn linear_field_variations_match_analytic() {
    for theta in [-0.8, -0.3, 0.0, 0.4, 0.9] {
        let t = solve_second_variation(&ScalarLinearField, &[Control::time(1.0)], &[theta], &[1.0], 10_000).unwrap();
        let exact = libm::exp(theta);
        assert!((t.final_state()[0] - exact).abs() < 1e-3);
        assert!((t.final_dx.unwrap()[0] - exact).abs() < 1e-3);
        assert!((t.final_ddx.unwrap()[0] - exact).abs() < 1e-3);
    }
}

#[test]
fn variations_match_finite_differences_on_random_fields() {
    let c = mixed_control();
    for seed in 0..10 {
        let f = TanhBilinearField::random(3, 2, seed, 0.6);
        let theta = [0.3, -0.4];
        let x = [0.5, -1.0, 0.2];
        let n = 50;
        let traj = solve_second_variation(&f, std::slice::from_ref(&c), &theta, &x, n).unwrap();
        let dx = traj.final_dx.unwrap();
        let ddx = traj.final_ddx.unwrap();
        for a in 0..2 {
            let fd = central(&f, &c, &theta, &x, n, a, false);
            for k in 0..3 {
                assert!(rel_err(dx[k * 2 + a], fd[k]) <= 1e-4, "seed {seed} dX[{k},{a}]");
            }
            // fd of ∂X[k, b] along θ_a gives ∂∂X[k, b, a]
            let fd2 = central(&f, &c, &theta, &x, n, a, true);
            for k in 0..3 {
                for b in 0..2 {
                    assert!(rel_err(ddx[(k * 2 + b) * 2 + a], fd2[k * 2 + b]) <= 1e-3, "seed {seed} ddX[{k},{b},{a}]");
                }
            }
        }
    }
}

#[test]
fn second_variation_is_symmetric() {
    let f = TanhBilinearField::random(2, 3, 11, 0.8);
    let t = solve_second_variation(&f, &[mixed_control()], &[0.1, 0.2, -0.3], &[1.0, -0.5], 40).unwrap();
    let h = t.final_ddx.unwrap();
    for k in 0..2 {
        for a in 0..3 {
            for b in 0..3 {
                assert!((h[(k * 3 + a) * 3 + b] - h[(k * 3 + b) * 3 + a]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn scalar_linear_certificate_is_sound() {
    let cert = code_certificate(&ScalarLinearField.envelopes(), 1.0, 1.0).unwrap();
    assert!((cert.b_x - 2.0 * E).abs() < 1e-12);
    assert!((cert.l_x - (1.0 + 2.0 * E) * E).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let solve =
        |theta: f64| solve_first_variation(&ScalarLinearField, &[Control::time(1.0)], &[theta], &[1.0], 200).unwrap();
    for _ in 0..2000 {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (ta, tb) = (solve(a), solve(b));
        let sup = ta.states.iter().map(|s| s[0].abs()).fold(0.0, f64::max);
        assert!(sup <= cert.b_x);
        assert!(ta.final_dx.as_ref().unwrap()[0].abs() <= cert.b_dx);
        if a != b {
            let ratio = (ta.final_state()[0] - tb.final_state()[0]).abs() / (a - b).abs();
            assert!(ratio <= cert.l_x);
        }
    }
}

#[test]
fn random_field_certificates_are_sound() {
    let c = mixed_control();
    let b_upsilon = total_variation(std::slice::from_ref(&c));
    for seed in 0..5 {
        let f = TanhBilinearField::random(2, 2, seed, 0.5);
        let r = 0.5;
        let env = f.envelopes(r);
        let x = [0.7, -0.2];
        let cert = code_certificate(&env, b_upsilon, norm(&x)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || [rng.random_range(-r..r), rng.random_range(-r..r)];
        for _ in 0..200 {
            let (a, b) = (draw(), draw());
            let ta = solve_second_variation(&f, std::slice::from_ref(&c), &a, &x, 20).unwrap();
            let tb = solve_first_variation(&f, std::slice::from_ref(&c), &b, &x, 20).unwrap();
            assert!(ta.states.iter().all(|s| norm(s) <= cert.b_x));
            let diff: Vec<f64> = ta.final_state().iter().zip(tb.final_state()).map(|(p, q)| p - q).collect();
            let dtheta = [a[0] - b[0], a[1] - b[1]];
            assert!(norm(&diff) <= cert.l_x * norm(&dtheta));
            let dx_a = ta.final_dx.as_ref().unwrap();
            let dx_b = tb.final_dx.as_ref().unwrap();
            assert!(norm(dx_a) <= cert.b_dx);
            let ddiff: Vec<f64> = dx_a.iter().zip(dx_b).map(|(p, q)| p - q).collect();
            assert!(norm(&ddiff) <= cert.l_dx * norm(&dtheta));
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn total_variation_is_additive(
        j1 in prop::collection::vec((0.01f64..1.0, -3.0f64..3.0), 0..4),
        j2 in prop::collection::vec((0.01f64..2.0, -3.0f64..3.0), 0..4),
        rate in -2.0f64..2.0,
    ) {
        let a = Control { jumps: j1, segments: vec![AcSegment { start: 0.0, end: 0.5, rate }], horizon: 1.0 };
        let b = Control { jumps: j2, segments: vec![AcSegment { start: 1.0, end: 2.0, rate: -rate }], horizon: 2.0 };
        let joined = a.concat(&b);
        prop_assert!(joined.validate().is_ok());
        let sum = a.total_variation() + b.total_variation();
        prop_assert!((joined.total_variation() - sum).abs() <= 1e-12 * sum.max(1.0));
    }

    #[test]
    fn solves_are_deterministic(seed in 0u64..100) {
        let f = TanhBilinearField::random(2, 2, seed, 0.7);
        let a = solve_second_variation(&f, &[mixed_control()], &[0.1, 0.2], &[1.0, 0.0], 10).unwrap();
        let b = solve_second_variation(&f, &[mixed_control()], &[0.1, 0.2], &[1.0, 0.0], 10).unwrap();
        prop_assert_eq!(a, b);
    }
}
