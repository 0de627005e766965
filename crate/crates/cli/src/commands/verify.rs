//! Empirical soundness sweep: sampled Lipschitz ratios must never exceed
//! the certified constants.

use lipcert_core::bounds::{loss_certificate, network_certificate};
use lipcert_core::empirical::{
    affine_tight_direction, estimate_range, objective_gradient_map, objective_map, output_jacobian_map, output_map,
    worst_case_construction, LipschitzEstimate, PairSampler, SamplingMode,
};
use lipcert_core::{BoundInputs, Result as CoreResult};
use rayon::prelude::*;

use crate::config::{norm, VerifyConfig};
use crate::error::{config_err, CliError, Result};
use crate::output::{fmt_f64, Output, RunRecord, RUN_RECORD};
use crate::Ctx;

/// Pairs per parallel work item. Fixed, so results do not depend on the
/// number of threads.
const CHUNK: u64 = 512;

struct Row {
    check: String,
    input: Option<usize>,
    certificate: f64,
    empirical: f64,
    n_pairs: u64,
    argmax_index: Option<u64>,
    violation: bool,
}

impl Row {
    fn new(check: &str, input: Option<usize>, certificate: f64, est: &LipschitzEstimate) -> Self {
        Row {
            check: check.into(),
            input,
            certificate,
            empirical: est.max_ratio,
            n_pairs: est.n_pairs,
            argmax_index: est.argmax_index,
            violation: est.max_ratio > certificate,
        }
    }

    fn record(&self) -> Vec<String> {
        let tightness = if self.certificate > 0.0 { self.empirical / self.certificate } else { f64::NAN };
        vec![
            self.check.clone(),
            self.input.map(|i| i.to_string()).unwrap_or_default(),
            fmt_f64(self.certificate),
            fmt_f64(self.empirical),
            fmt_f64(tightness),
            self.n_pairs.to_string(),
            self.argmax_index.map(|i| i.to_string()).unwrap_or_default(),
            self.violation.to_string(),
        ]
    }
}

/// Sampled estimate over pairs `0..n`, in parallel chunks merged in order.
pub(crate) fn parallel_estimate<F>(f: &F, sampler: &PairSampler, n: u64) -> CoreResult<LipschitzEstimate>
where
    F: Fn(&[f64]) -> CoreResult<Vec<f64>> + Sync,
{
    let chunks: Vec<(u64, u64)> = (0..n.div_ceil(CHUNK)).map(|k| (k * CHUNK, ((k + 1) * CHUNK).min(n))).collect();
    let parts: Vec<LipschitzEstimate> =
        chunks.par_iter().map(|&(a, b)| estimate_range(f, sampler, a, b)).collect::<CoreResult<_>>()?;
    Ok(parts.into_iter().fold(LipschitzEstimate::empty(sampler.seed), LipschitzEstimate::merge))
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let out = Output::prepare(&ctx.out_dir, ctx.force, &["verify.csv", RUN_RECORD])?;
    let cfg = &ctx.config;
    let vc: VerifyConfig = cfg.verify.clone().ok_or_else(|| config_err!("missing [verify] section"))?;
    if vc.n_pairs == 0 {
        return Err(config_err!("verify.n_pairs must be positive"));
    }
    if !(vc.certificate_scale > 0.0 && vc.certificate_scale.is_finite()) {
        return Err(config_err!("verify.certificate_scale must be positive"));
    }
    let samples = cfg.samples(&ctx.base)?;
    let scale = vc.certificate_scale;
    let mut rows = Vec::new();

    if cfg.architecture.is_some() {
        let arch = cfg.architecture()?;
        let b = cfg.bounds()?;
        if b.layer_budgets.is_some() {
            return Err(config_err!("verify samples the whole ball; remove bounds.layer_budgets"));
        }
        let inputs: Vec<Vec<f64>> = match (&vc.inputs, &samples) {
            (Some(xs), _) => xs.clone(),
            (None, Some(s)) => s.iter().map(|s| s.x.clone()).collect(),
            (None, None) => return Err(config_err!("verify needs verify.inputs or a dataset")),
        };
        let dim = arch.param_count();
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != arch.input_dim() {
                return Err(config_err!("verify input {i} has length {}, expected {}", x.len(), arch.input_dim()));
            }
            let s = norm(x);
            let cert = network_certificate(&arch, &BoundInputs::single(b.b_omega, s), s)?;
            let sampler = PairSampler::new(dim, b.b_omega, cfg.seed.wrapping_add(i as u64), vc.mode.clone())?;
            log::info!("input {i}: sampling {} pairs", vc.n_pairs);
            let l = parallel_estimate(&output_map(&arch, x), &sampler, vc.n_pairs)?;
            rows.push(Row::new("l_n", Some(i), cert.l_n * scale, &l));
            let lg = parallel_estimate(&output_jacobian_map(&arch, x), &sampler, vc.n_pairs)?;
            rows.push(Row::new("l_grad_n", Some(i), cert.l_grad_n * scale, &lg));
            if arch.depth() == 0 {
                // affine maps attain their certificate along this direction
                let mode = SamplingMode::Directed { direction: affine_tight_direction(x, arch.output_dim()), h: 1e-3 };
                let sampler = PairSampler::new(dim, b.b_omega, cfg.seed.wrapping_add(i as u64), mode)?;
                let d = parallel_estimate(&output_map(&arch, x), &sampler, vc.n_pairs.min(1000))?;
                rows.push(Row::new("l_n_directed", Some(i), cert.l_n * scale, &d));
            }
        }
        if let (true, Some(samples)) = (vc.objective, &samples) {
            let inputs = cfg.bound_inputs(Some(samples))?;
            let env = cfg.loss_envelope(&arch, &inputs, Some(samples))?;
            let head = cfg.loss.as_ref().map(|l| l.head).unwrap_or(lipcert_core::LossHead::Zero);
            let cert = loss_certificate(&arch, &inputs, &env)?;
            let seed = cfg.seed.wrapping_add(inputs_len(&vc, samples) as u64);
            let sampler = PairSampler::new(dim, b.b_omega, seed, vc.mode.clone())?;
            let l = parallel_estimate(&objective_map(&arch, samples, &head), &sampler, vc.n_pairs)?;
            rows.push(Row::new("l_phi", None, cert.l_phi * scale, &l));
            let lg = parallel_estimate(&objective_gradient_map(&arch, samples, &head), &sampler, vc.n_pairs)?;
            rows.push(Row::new("l_grad_phi", None, cert.l_grad_phi * scale, &lg));
        }
    }

    if let Some(wc) = &vc.worst_case {
        let pair = worst_case_construction(wc.m, wc.c, wc.r, wc.b_omega)?;
        let cert = network_certificate(&pair.arch, &BoundInputs::single(wc.b_omega, 0.0), 0.0)?;
        let c = cert.per_layer[wc.m - 1].l_n * scale;
        let rel = (pair.observed_ratio - pair.exact_ratio).abs() / pair.exact_ratio;
        log::info!(
            "worst case m={}: exact {} observed {} (rel err {rel:e})",
            wc.m,
            pair.exact_ratio,
            pair.observed_ratio
        );
        rows.push(Row {
            check: format!("worst_case_m{}", wc.m),
            input: None,
            certificate: c,
            empirical: pair.observed_ratio,
            n_pairs: 1,
            argmax_index: None,
            violation: pair.observed_ratio > c || rel > 1e-9,
        });
    }
    if rows.is_empty() {
        return Err(config_err!("nothing to verify: give an architecture or verify.worst_case"));
    }

    let records: Vec<Vec<String>> = rows.iter().map(Row::record).collect();
    out.csv(
        "verify.csv",
        &["check", "input", "certificate", "empirical", "tightness", "n_pairs", "argmax_index", "violation"],
        &records,
    )?;
    out.json(RUN_RECORD, &RunRecord::new("verify", cfg, samples.as_deref()))?;
    for r in &rows {
        println!(
            "{:<16} {:>6} cert {:>14.6e} empirical {:>14.6e} {}",
            r.check,
            r.input.map(|i| i.to_string()).unwrap_or_default(),
            r.certificate,
            r.empirical,
            if r.violation { "VIOLATION" } else { "ok" }
        );
    }
    let bad: Vec<&str> = rows.iter().filter(|r| r.violation).map(|r| r.check.as_str()).collect();
    if !bad.is_empty() {
        return Err(CliError::Soundness(format!(
            "{} check(s) exceeded the certificate: {}",
            bad.len(),
            bad.join(", ")
        )));
    }
    Ok(())
}

fn inputs_len(vc: &VerifyConfig, samples: &[lipcert_core::Sample]) -> usize {
    vc.inputs.as_ref().map(|v| v.len()).unwrap_or(samples.len())
}
