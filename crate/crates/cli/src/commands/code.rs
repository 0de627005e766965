//! Controlled-ODE workflows: Grönwall certificates, a sampled soundness
//! sweep over parameters, and the network-as-CODE equivalence check.

use lipcert_core::code_net::{
    check_envelopes, code_certificate, code_loss_certificate, equivalence_error, required_moment,
    solve_first_variation, total_variation, CodeCertificate, Control, EnvelopeCheck, FieldEnvelopes, Rigor,
    ScalarLinearField, SecondOrderField, SolveStatus, TanhBilinearField, Trajectory, ZeroField,
};
use lipcert_core::network::init_uniform_ball;
use lipcert_core::{ActivationKind, ArchitectureSpec, LossEnvelope};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{norm, CodeConfig, FieldConfig};
use crate::error::{config_err, CliError, Result};
use crate::output::{fmt_f64, Output, RunRecord, RUN_RECORD};
use crate::Ctx;

type Field = Box<dyn SecondOrderField + Sync>;

type Check = (&'static str, f64, fn(&Sample) -> f64);

/// The configured field with the envelopes the certificate will use.
struct Setup {
    field: Field,
    env: FieldEnvelopes,
    rigor: Rigor,
}

fn setup(code: &CodeConfig) -> Result<Setup> {
    let fc = code.field.as_ref().ok_or_else(|| config_err!("missing code.field section"))?;
    let (field, builtin): (Field, FieldEnvelopes) = match fc {
        FieldConfig::Zero { ell, n } => {
            let f = ZeroField { ell: *ell, n: *n };
            let env = f.envelopes();
            (Box::new(f), env)
        }
        FieldConfig::ScalarLinear => (Box::new(ScalarLinearField), ScalarLinearField.envelopes()),
        FieldConfig::TanhBilinear { ell, n, seed, scale, theta_radius } => {
            if !(theta_radius.is_finite() && *theta_radius >= 0.0) {
                return Err(config_err!("code.field.theta_radius must be finite and nonnegative"));
            }
            let f = TanhBilinearField::random(*ell, *n, *seed, *scale);
            let env = f.envelopes(*theta_radius);
            (Box::new(f), env)
        }
    };
    let (env, rigor) = match &code.envelopes {
        Some(user) => (*user, Rigor::NonRigorous),
        None => (builtin, Rigor::Analytic),
    };
    env.validate()?;
    if code.controls.len() != field.n_controls() {
        return Err(config_err!("field takes {} controls, got {}", field.n_controls(), code.controls.len()));
    }
    if code.theta.len() != field.param_dim() {
        return Err(config_err!("code.theta has length {}, field expects {}", code.theta.len(), field.param_dim()));
    }
    if code.x.len() != field.state_dim() {
        return Err(config_err!("code.x has length {}, field expects {}", code.x.len(), field.state_dim()));
    }
    Ok(Setup { field, env, rigor })
}

fn code_section(ctx: &Ctx) -> Result<&CodeConfig> {
    ctx.config.code.as_ref().ok_or_else(|| config_err!("missing [code] section"))
}

fn horizon(controls: &[Control]) -> f64 {
    controls.iter().map(|c| c.horizon).fold(0.0, f64::max)
}

/// Certificate at `code.x`, folded with the optional envelope check.
fn certify_setup(code: &CodeConfig, s: &Setup, seed: u64) -> Result<(CodeCertificate, Option<EnvelopeCheck>)> {
    for c in &code.controls {
        c.validate()?;
    }
    let b_upsilon = total_variation(&code.controls);
    let mut cert = code_certificate(&s.env, b_upsilon, norm(&code.x))?;
    cert.rigor = s.rigor;
    let check = match &code.envelope_check {
        Some(ec) => {
            let check = check_envelopes(
                s.field.as_ref(),
                &s.env,
                ec.x_radius,
                ec.theta_radius,
                horizon(&code.controls),
                ec.n_samples,
                seed,
            )?;
            cert.apply_check(&check);
            Some(check)
        }
        None => None,
    };
    Ok((cert, check))
}

fn cert_values(c: &CodeCertificate) -> [f64; 7] {
    [c.b_upsilon, c.x_norm, c.b_x, c.l_x, c.c_theta_theta, c.l_dx, c.b_dx]
}

fn rigor_name(r: Rigor) -> &'static str {
    match r {
        Rigor::Analytic => "analytic",
        Rigor::Sampled => "sampled",
        Rigor::NonRigorous => "non_rigorous",
    }
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    certificate: &'a CodeCertificate,
    envelopes: &'a FieldEnvelopes,
    #[serde(skip_serializing_if = "Option::is_none")]
    envelope_check: Option<&'a EnvelopeCheck>,
    /// Smallest sample-norm moment the loss certificate can use.
    required_moment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_grad_phi: Option<f64>,
    trajectory_status: &'a SolveStatus,
}

pub fn certify(ctx: &Ctx) -> Result<()> {
    let out = Output::prepare(
        &ctx.out_dir,
        ctx.force,
        &["code_certificate.json", "code_certificate.csv", "trajectory.csv", RUN_RECORD],
    )?;
    let code = code_section(ctx)?;
    let s = setup(code)?;
    let (cert, check) = certify_setup(code, &s, ctx.config.seed)?;
    let loss = match &code.loss {
        Some(l) => {
            let env = LossEnvelope { g_p_max: 0.0, g_pp_max: 0.0, lip_g: l.lip_g, lip_dg: l.lip_dg };
            Some(code_loss_certificate(&s.env, cert.b_upsilon, &env, &l.sample_norms)?)
        }
        None => None,
    };
    if !ctx.allow_inf {
        let loss_vals = loss.map(|(a, b)| [a, b]).unwrap_or([0.0; 2]);
        if cert_values(&cert).iter().chain(&loss_vals).any(|v| !v.is_finite()) {
            return Err(CliError::Overflow("CODE certificate has an infinite constant".into()));
        }
    }
    if cert.rigor == Rigor::NonRigorous {
        log::warn!("CODE envelopes are user-supplied and unchecked or violated; the certificate is not rigorous");
    }
    let traj = solve_first_variation(s.field.as_ref(), &code.controls, &code.theta, &code.x, code.n_substeps)?;

    out.json(
        "code_certificate.json",
        &CertifyReport {
            certificate: &cert,
            envelopes: &s.env,
            envelope_check: check.as_ref(),
            required_moment: required_moment(&s.env),
            l_phi: loss.map(|l| l.0),
            l_grad_phi: loss.map(|l| l.1),
            trajectory_status: &traj.status,
        },
    )?;
    let mut row: Vec<String> = cert_values(&cert).iter().map(|&v| fmt_f64(v)).collect();
    row.push(loss.map(|l| fmt_f64(l.0)).unwrap_or_default());
    row.push(loss.map(|l| fmt_f64(l.1)).unwrap_or_default());
    row.push(rigor_name(cert.rigor).into());
    out.csv(
        "code_certificate.csv",
        &["b_upsilon", "x_norm", "b_x", "l_x", "c_theta_theta", "l_dx", "b_dx", "l_phi", "l_grad_phi", "rigor"],
        &[row],
    )?;
    write_trajectory(&out, &traj, code.x.len())?;
    out.json(RUN_RECORD, &RunRecord::new("code certify", &ctx.config, None))?;

    println!("rigor: {}", rigor_name(cert.rigor));
    for (name, v) in ["B_upsilon", "|x|", "B_X", "L_X", "C_thetatheta", "L_dX", "B_dX"].iter().zip(cert_values(&cert)) {
        println!("{name:<14} {v:>14.6e}");
    }
    if let Some((lp, lg)) = loss {
        println!("{:<14} {lp:>14.6e}\n{:<14} {lg:>14.6e}", "L_Phi", "L_gradPhi");
    }
    Ok(())
}

fn write_trajectory(out: &Output, traj: &Trajectory, ell: usize) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((0..ell).map(|k| format!("x{k}")));
    header.push("dx_norm".into());
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .zip(&traj.dx_norms)
        .map(|((t, x), d)| {
            let mut r = vec![fmt_f64(*t)];
            r.extend(x.iter().map(|&v| fmt_f64(v)));
            r.push(fmt_f64(*d));
            r
        })
        .collect();
    out.csv("trajectory.csv", &header, &rows)
}

/// Observations at one pair `(θ, θ̄)`.
struct Sample {
    sup_x: f64,
    x_ratio: f64,
    dx_norm: f64,
    dx_ratio: f64,
}

fn sample_pair(field: &Field, code: &CodeConfig, radius: f64, seed: u64, k: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    let n = field.param_dim();
    let mut draw = || -> Vec<f64> {
        (0..n)
            .map(|_| loop {
                let v: f64 = rng.random_range(-radius..radius);
                // open box
                if v.abs() < radius {
                    break v;
                }
            })
            .collect()
    };
    let (a, b) = (draw(), draw());
    let ta = solve_first_variation(field.as_ref(), &code.controls, &a, &code.x, code.n_substeps)?;
    let tb = solve_first_variation(field.as_ref(), &code.controls, &b, &code.x, code.n_substeps)?;
    if ta.status != SolveStatus::Completed || tb.status != SolveStatus::Completed {
        return Ok(Sample {
            sup_x: f64::INFINITY,
            x_ratio: f64::INFINITY,
            dx_norm: f64::INFINITY,
            dx_ratio: f64::INFINITY,
        });
    }
    let dtheta = norm(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
    let dist = |p: &[f64], q: &[f64]| norm(&p.iter().zip(q).map(|(p, q)| p - q).collect::<Vec<_>>());
    let ratio = |d: f64| if dtheta > 0.0 { d / dtheta } else { 0.0 };
    let (dxa, dxb) = (ta.final_dx.as_deref().unwrap_or(&[]), tb.final_dx.as_deref().unwrap_or(&[]));
    Ok(Sample {
        sup_x: ta.states.iter().map(|s| norm(s)).fold(0.0, f64::max),
        x_ratio: ratio(dist(ta.final_state(), tb.final_state())),
        dx_norm: norm(dxa),
        dx_ratio: ratio(dist(dxa, dxb)),
    })
}

pub fn verify(ctx: &Ctx) -> Result<()> {
    let out = Output::prepare(&ctx.out_dir, ctx.force, &["code_verify.csv", RUN_RECORD])?;
    let code = code_section(ctx)?;
    let vc = code.verify.as_ref().ok_or_else(|| config_err!("missing code.verify section"))?;
    if !(vc.theta_radius.is_finite() && vc.theta_radius > 0.0) {
        return Err(config_err!("code.verify.theta_radius must be positive and finite"));
    }
    if vc.n_samples == 0 {
        return Err(config_err!("code.verify.n_samples must be positive"));
    }
    let s = setup(code)?;
    let (cert, _) = certify_setup(code, &s, ctx.config.seed)?;
    let seed = ctx.config.seed;
    let samples: Vec<Sample> = (0..vc.n_samples as u64)
        .into_par_iter()
        .map(|k| sample_pair(&s.field, code, vc.theta_radius, seed, k))
        .collect::<Result<_>>()?;

    let checks: [Check; 4] = [
        ("sup_x_norm", cert.b_x, |s| s.sup_x),
        ("x_lipschitz", cert.l_x, |s| s.x_ratio),
        ("dx_norm", cert.b_dx, |s| s.dx_norm),
        ("dx_lipschitz", cert.l_dx, |s| s.dx_ratio),
    ];
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (name, bound, get) in checks {
        let observed = samples.iter().map(get).fold(0.0, f64::max);
        let violations = samples.iter().map(get).filter(|v| v.is_nan() || *v > bound).count();
        if violations > 0 {
            failed.push(format!("{name}: {violations} of {} samples exceed {bound:e}", samples.len()));
        }
        let tightness = if bound > 0.0 { observed / bound } else { f64::NAN };
        rows.push(vec![
            name.to_string(),
            fmt_f64(bound),
            fmt_f64(observed),
            fmt_f64(tightness),
            samples.len().to_string(),
            violations.to_string(),
            rigor_name(cert.rigor).into(),
        ]);
        println!("{name:<14} cert {bound:>14.6e}  observed {observed:>14.6e}  violations {violations}");
    }
    out.csv(
        "code_verify.csv",
        &["check", "certificate", "observed", "tightness", "samples", "violations", "rigor"],
        &rows,
    )?;
    out.json(RUN_RECORD, &RunRecord::new("code verify", &ctx.config, None))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Soundness(failed.join("; ")))
    }
}

/// Architecture for net `i`: the configured one, or a small random one.
fn equivalence_arch(ctx: &Ctx, i: u64) -> Result<ArchitectureSpec> {
    if ctx.config.architecture.is_some() {
        return ctx.config.architecture();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed.wrapping_add(i));
    rng.set_stream(1);
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..depth + 2).map(|_| rng.random_range(1..=4)).collect();
    let kind = if rng.random_bool(0.5) { ActivationKind::Tanh } else { ActivationKind::Sigmoid };
    Ok(ArchitectureSpec::uniform(widths, kind.envelope())?)
}

pub fn equivalence(ctx: &Ctx) -> Result<()> {
    let out = Output::prepare(&ctx.out_dir, ctx.force, &["equivalence.csv", RUN_RECORD])?;
    let ec = code_section(ctx)?.equivalence.as_ref().ok_or_else(|| config_err!("missing code.equivalence section"))?;
    if ec.n_nets == 0 {
        return Err(config_err!("code.equivalence.n_nets must be positive"));
    }
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for i in 0..ec.n_nets as u64 {
        let arch = equivalence_arch(ctx, i)?;
        let seed = ctx.config.seed.wrapping_add(i);
        let params = init_uniform_ball(&arch.widths, ec.b_omega, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut x: Vec<f64> = (0..arch.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xn = norm(&x);
        if xn > 0.0 {
            x.iter_mut().for_each(|v| *v /= xn);
        }
        let err = equivalence_error(&arch, &params, &x)?;
        let pass = err <= ec.tolerance;
        if !pass {
            failed.push(format!("net {i}: relative error {err:e}"));
        }
        let widths: Vec<String> = arch.widths.iter().map(|w| w.to_string()).collect();
        rows.push(vec![i.to_string(), widths.join("-"), fmt_f64(err), pass.to_string()]);
    }
    out.csv("equivalence.csv", &["net", "widths", "max_rel_error", "pass"], &rows)?;
    out.json(RUN_RECORD, &RunRecord::new("code equivalence", &ctx.config, None))?;
    println!("{} of {} nets within {:e}", ec.n_nets - failed.len(), ec.n_nets, ec.tolerance);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Equivalence(failed.join("; ")))
    }
}
