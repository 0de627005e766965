use lipcert_core::bounds::{closed_form_certificate, loss_certificate, refine_over_layer_budgets, SearchConfig};
use lipcert_core::Certificate;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::{fmt_f64, Output, RunRecord, RUN_RECORD};
use crate::Ctx;

#[derive(Serialize)]
struct Report<'a> {
    recursive: &'a Certificate,
    closed_form: Option<&'a Certificate>,
    /// Why the closed form is unavailable for this configuration.
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form_note: Option<String>,
    refined_budgets: Option<&'a Certificate>,
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let out =
        Output::prepare(&ctx.out_dir, ctx.force, &["certificate.json", "certificate.csv", "layers.csv", RUN_RECORD])?;
    let cfg = &ctx.config;
    let arch = cfg.architecture()?;
    let samples = cfg.samples(&ctx.base)?;
    let inputs = cfg.bound_inputs(samples.as_deref())?;
    let loss = cfg.loss_envelope(&arch, &inputs, samples.as_deref())?;

    let recursive = loss_certificate(&arch, &inputs, &loss)?;
    let (closed_form, closed_form_note) = match closed_form_certificate(&arch, &inputs, &loss) {
        Ok(c) => (Some(c), None),
        Err(e) => {
            log::info!("closed form skipped: {e}");
            (None, Some(e.to_string()))
        }
    };
    let refined = match &cfg.refine {
        Some(r) => {
            let search = SearchConfig { restarts: r.restarts, iters: r.iters, seed: cfg.seed };
            Some(refine_over_layer_budgets(&arch, &inputs, &loss, &search)?)
        }
        None => None,
    };

    let methods: Vec<(&str, &Certificate)> = [
        Some(("recursive", &recursive)),
        closed_form.as_ref().map(|c| ("closed_form", c)),
        refined.as_ref().map(|c| ("refined_budgets", c)),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !ctx.allow_inf {
        if let Some((name, _)) = methods.iter().find(|(_, c)| c.overflow) {
            return Err(CliError::Overflow(format!("{name} certificate has an infinite constant")));
        }
    }

    out.json(
        "certificate.json",
        &Report {
            recursive: &recursive,
            closed_form: closed_form.as_ref(),
            closed_form_note,
            refined_budgets: refined.as_ref(),
        },
    )?;
    let rows: Vec<Vec<String>> = methods
        .iter()
        .map(|(name, c)| {
            let mut r = vec![name.to_string()];
            r.extend([c.l_n_final, c.l_grad_n_final, c.l_phi, c.l_grad_phi, c.b_grad_phi].map(fmt_f64));
            r.push(c.inputs_digest.clone());
            r
        })
        .collect();
    out.csv(
        "certificate.csv",
        &["method", "l_n", "l_grad_n", "l_phi", "l_grad_phi", "b_grad_phi", "inputs_digest"],
        &rows,
    )?;
    let mut layer_rows = Vec::new();
    for (name, c) in &methods {
        for (u, l) in c.per_layer.iter().enumerate() {
            let mut r = vec![name.to_string(), (u + 1).to_string()];
            r.extend([l.l_n, l.l_grad_n, l.b_n, l.b_grad_n, l.alpha, l.beta].map(fmt_f64));
            layer_rows.push(r);
        }
    }
    out.csv("layers.csv", &["method", "layer", "l_n", "l_grad_n", "b_n", "b_grad_n", "alpha", "beta"], &layer_rows)?;
    out.json(RUN_RECORD, &RunRecord::new("certify", cfg, samples.as_deref()))?;

    println!("{:<16} {:>14} {:>14} {:>14} {:>14}", "method", "L_N", "L_gradN", "L_Phi", "L_gradPhi");
    for (name, c) in &methods {
        println!(
            "{:<16} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            name, c.l_n_final, c.l_grad_n_final, c.l_phi, c.l_grad_phi
        );
    }
    Ok(())
}
