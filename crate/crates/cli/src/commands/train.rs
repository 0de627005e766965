use lipcert_core::bounds::{adagrad_params_for, loss_certificate};
use lipcert_core::network::init_uniform_ball;
use lipcert_core::trainer::{
    run_adagrad_norm, run_gd, FiniteSumObjective, NetworkObjective, QuadraticObjective, TrainMethod, TrainStatus,
    TrainTrace, TrainerConfig,
};
use lipcert_core::LossHead;
use serde::Serialize;

use crate::config::{ObjectiveConfig, TrainConfig};
use crate::error::{config_err, CliError, Result};
use crate::output::{fmt_f64, Output, RunRecord, RUN_RECORD};
use crate::Ctx;

#[derive(Serialize)]
struct Summary<'a> {
    header: &'a lipcert_core::trainer::TraceHeader,
    /// `L_∇Φ` from the certificate, before any override.
    certified_l_grad_phi: Option<f64>,
    status: &'a TrainStatus,
    steps_run: usize,
    final_phi: f64,
    descent_violations: usize,
    projected_steps: usize,
    final_params: &'a [f64],
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let out = Output::prepare(&ctx.out_dir, ctx.force, &["trace.csv", "train.json", RUN_RECORD])?;
    let cfg = &ctx.config;
    let tc: &TrainConfig = cfg.train.as_ref().ok_or_else(|| config_err!("missing [train] section"))?;
    let samples = cfg.samples(&ctx.base)?;

    let (trace, certified) = match &tc.objective {
        ObjectiveConfig::Quadratic { l, dim, b_omega } => {
            let obj = QuadraticObjective { l: *l, dim: *dim };
            let theta0 = tc.theta0.clone().ok_or_else(|| config_err!("quadratic objective needs train.theta0"))?;
            let lg = tc.l_grad_phi.unwrap_or(*l);
            (train(tc, &obj, &theta0, lg, *b_omega, cfg.seed)?, None)
        }
        ObjectiveConfig::Network => {
            let arch = cfg.architecture()?;
            let samples = samples.as_deref().ok_or_else(|| config_err!("network training needs a dataset"))?;
            let inputs = cfg.bound_inputs(Some(samples))?;
            let env = cfg.loss_envelope(&arch, &inputs, Some(samples))?;
            let cert = loss_certificate(&arch, &inputs, &env)?;
            let head = cfg.loss.as_ref().map(|l| l.head).unwrap_or(LossHead::Zero);
            let obj = NetworkObjective { arch: &arch, samples, head: &head };
            let theta0 = match &tc.theta0 {
                Some(t) => t.clone(),
                None => init_uniform_ball(&arch.widths, inputs.b_omega, cfg.seed).to_flat(),
            };
            let lg = tc.l_grad_phi.unwrap_or(cert.l_grad_phi);
            (train(tc, &obj, &theta0, lg, inputs.b_omega, cfg.seed)?, Some(cert.l_grad_phi))
        }
    };

    let rows: Vec<Vec<String>> = trace
        .steps
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                fmt_f64(s.phi),
                fmt_f64(s.grad_norm),
                fmt_f64(s.step_size),
                fmt_f64(s.param_norm),
                s.projected.to_string(),
                s.descent_ok.map(|d| d.to_string()).unwrap_or_default(),
                fmt_f64(s.min_grad_norm),
                fmt_f64(s.rate),
            ]
        })
        .collect();
    out.csv(
        "trace.csv",
        &["step", "phi", "grad_norm", "step_size", "param_norm", "projected", "descent_ok", "min_grad_norm", "rate"],
        &rows,
    )?;
    out.json(
        "train.json",
        &Summary {
            header: &trace.header,
            certified_l_grad_phi: certified,
            status: &trace.status,
            steps_run: trace.steps.len(),
            final_phi: trace.final_phi,
            descent_violations: trace.descent_violations,
            projected_steps: trace.projected_steps,
            final_params: &trace.final_params,
        },
    )?;
    out.json(RUN_RECORD, &RunRecord::new("train", cfg, samples.as_deref()))?;
    println!(
        "{} steps, final phi {:.6e}, {} projected, {} descent violations",
        trace.steps.len(),
        trace.final_phi,
        trace.projected_steps,
        trace.descent_violations
    );

    if let TrainStatus::NonFinite { step } = trace.status {
        return Err(CliError::Overflow(format!("non-finite objective or gradient at step {step}")));
    }
    if trace.descent_violations > 0 {
        return Err(CliError::Descent(format!("{} in-ball step(s)", trace.descent_violations)));
    }
    Ok(())
}

fn train<O: FiniteSumObjective>(
    tc: &TrainConfig,
    obj: &O,
    theta0: &[f64],
    l_grad_phi: f64,
    b_omega: f64,
    seed: u64,
) -> Result<TrainTrace> {
    match tc.method {
        TrainMethod::Gd => Ok(run_gd(obj, theta0, l_grad_phi, tc.steps, b_omega, tc.projection_shrink)?),
        TrainMethod::AdagradNorm => {
            let derived = adagrad_params_for(l_grad_phi, tc.beta_margin, tc.eps_exponent)?;
            let config = TrainerConfig {
                method: TrainMethod::AdagradNorm,
                steps: tc.steps,
                batch_size: tc.batch_size.unwrap_or(obj.n_samples()),
                alpha: tc.alpha.unwrap_or(derived.alpha),
                beta: tc.beta.unwrap_or(derived.beta),
                eps_exponent: tc.eps_exponent,
                seed,
                b_omega,
                projection_shrink: tc.projection_shrink,
            };
            Ok(run_adagrad_norm(obj, theta0, l_grad_phi, &config)?)
        }
    }
}
