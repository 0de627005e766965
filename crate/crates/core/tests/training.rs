//! Certified step sizes in use: the descent inequality under `h = 1/L_∇Φ`
//! and the AdaGrad-norm hyperparameter condition.

use lipcert_core::bounds::{derive_adagrad_params, derive_gd_step, loss_certificate};
use lipcert_core::network::{init_uniform_ball, output_bound, sample_norms};
use lipcert_core::trainer::{run_adagrad_norm, run_gd, NetworkObjective, TrainMethod, TrainerConfig};
use lipcert_core::{ActivationEnvelope, ArchitectureSpec, BoundInputs, LossHead, Sample, SampleNorms};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64, n: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = vec![libm::sin(x[0]) * 0.5 + 0.2 * x[1]];
            Sample::new(x, y)
        })
        .collect()
}

fn setup(samples: &[Sample], b: f64) -> (ArchitectureSpec, f64) {
    let arch = ArchitectureSpec::uniform(vec![2, 3, 1], ActivationEnvelope::tanh()).unwrap();
    let norms = sample_norms(samples);
    let s_max = norms.iter().copied().fold(0.0, f64::max);
    let target = samples.iter().map(|s| s.y[0].abs()).fold(0.0, f64::max);
    let env = LossHead::SquaredError.envelope(output_bound(&arch, b, s_max).unwrap(), target, 1).unwrap();
    let cert = loss_certificate(&arch, &BoundInputs::new(b, SampleNorms::Finite(norms)), &env).unwrap();
    (arch, cert.l_grad_phi)
}

#[test]
fn gradient_descent_satisfies_descent_inequality() {
    let samples = dataset(0, 8);
    let b = 2.0;
    let (arch, l) = setup(&samples, b);
    let obj = NetworkObjective { arch: &arch, samples: &samples, head: &LossHead::SquaredError };
    for seed in 0..3 {
        let theta0 = init_uniform_ball(&arch.widths, b, seed).to_flat();
        let trace = run_gd(&obj, &theta0, l, 200, b, 0.999).unwrap();
        assert_eq!(trace.steps.len(), 200);
        assert_eq!(trace.descent_violations, 0);
        let checked = trace.steps.iter().filter(|s| s.descent_ok.is_some()).count();
        assert_eq!(checked + trace.projected_steps, 200);
        assert!(trace.final_phi <= trace.steps[0].phi);
    }
}

#[test]
fn gd_step_is_reciprocal_of_certificate() {
    let samples = dataset(1, 4);
    let arch = ArchitectureSpec::uniform(vec![2, 3, 1], ActivationEnvelope::tanh()).unwrap();
    let env = LossHead::SquaredError.envelope(10.0, 1.0, 1).unwrap();
    let cert =
        loss_certificate(&arch, &BoundInputs::new(1.0, SampleNorms::Finite(sample_norms(&samples))), &env).unwrap();
    assert_eq!(derive_gd_step(&cert).unwrap(), 1.0 / cert.l_grad_phi);
}

#[test]
fn adagrad_norm_with_derived_hyperparameters() {
    let samples = dataset(2, 8);
    let b = 2.0;
    let arch = ArchitectureSpec::uniform(vec![2, 3, 1], ActivationEnvelope::tanh()).unwrap();
    let norms = sample_norms(&samples);
    let env = LossHead::SquaredError.envelope(output_bound(&arch, b, 1.5).unwrap(), 1.0, 1).unwrap();
    let cert = loss_certificate(&arch, &BoundInputs::new(b, SampleNorms::Finite(norms)), &env).unwrap();
    let hp = derive_adagrad_params(&cert, 1e-3, 0.1).unwrap();
    assert!(2.0 * hp.alpha * cert.l_grad_phi < hp.beta.powf(0.5 + hp.eps_exponent));
    let obj = NetworkObjective { arch: &arch, samples: &samples, head: &LossHead::SquaredError };
    for seed in 0..5 {
        let config = TrainerConfig {
            method: TrainMethod::AdagradNorm,
            steps: 2000,
            batch_size: 4,
            alpha: hp.alpha,
            beta: hp.beta,
            eps_exponent: hp.eps_exponent,
            seed,
            b_omega: b,
            projection_shrink: 0.999,
        };
        let theta0 = init_uniform_ball(&arch.widths, b, 100 + seed).to_flat();
        let trace = run_adagrad_norm(&obj, &theta0, cert.l_grad_phi, &config).unwrap();
        assert!(trace.header.condition_holds);
        let h: Vec<f64> = trace.step_sizes().collect();
        assert!(h.iter().all(|&x| x > 0.0));
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
        let first = trace.steps[0].min_grad_norm;
        let last = trace.steps.last().unwrap().min_grad_norm;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}
