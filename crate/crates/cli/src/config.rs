//! JSON run configuration shared by every subcommand.
//!
//! Each command reads the sections it needs and rejects the run (exit code 2)
//! when one is missing or malformed. Unknown keys are errors everywhere.

use std::path::{Path, PathBuf};

use lipcert_core::activation::ActivationKind;
use lipcert_core::bounds::{LossEnvelope, SampleNorms, SearchConfig};
use lipcert_core::code_net::{CodeSampleNorms, Control, FieldEnvelopes};
use lipcert_core::empirical::SamplingMode;
use lipcert_core::network::{sample_norms, LossHead, Sample};
use lipcert_core::trainer::TrainMethod;
use lipcert_core::{ArchitectureSpec, BoundInputs};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<ArchitectureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<CodeConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub widths: Vec<usize>,
    /// Same activation on every hidden layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationKind>,
    /// One activation per hidden layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<ActivationKind>>,
}

impl ArchitectureConfig {
    pub fn spec(&self) -> Result<ArchitectureSpec> {
        if self.widths.len() < 2 {
            return Err(config_err!("architecture.widths needs at least input and output widths"));
        }
        let m = self.widths.len() - 2;
        let kinds = match (&self.activation, &self.activations) {
            (Some(_), Some(_)) => {
                return Err(config_err!("give either architecture.activation or architecture.activations"))
            }
            (Some(k), None) => vec![*k; m],
            (None, Some(ks)) => ks.clone(),
            (None, None) if m == 0 => vec![],
            (None, None) => return Err(config_err!("architecture needs an activation for its {m} hidden layers")),
        };
        Ok(ArchitectureSpec::new(self.widths.clone(), kinds.iter().map(|k| k.envelope()).collect())?)
    }
}

/// Training samples, inline or from a CSV file whose header names input
/// columns `x…` and target columns `y…`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Sample>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub b_omega: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_budgets: Option<Vec<f64>>,
    /// Defaults to the norms of the dataset inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_norms: Option<SampleNorms>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub head: LossHead,
    /// Bound on `‖y‖`; defaults to the largest target norm in the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bound: Option<f64>,
    /// Explicit envelope, replacing the one derived from `head`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<LossEnvelope>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_iters")]
    pub iters: usize,
}

fn default_restarts() -> usize {
    SearchConfig::default().restarts
}

fn default_iters() -> usize {
    SearchConfig::default().iters
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_pairs")]
    pub n_pairs: u64,
    #[serde(default = "default_mode")]
    pub mode: SamplingMode,
    /// Inputs `x` to test at; defaults to the dataset inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Vec<f64>>>,
    /// Also check `Φ` and `∇Φ` on the dataset.
    #[serde(default = "default_true")]
    pub objective: bool,
    /// Multiplier applied to every certified constant before comparing.
    #[serde(default = "default_one")]
    pub certificate_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_case: Option<WorstCaseConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorstCaseConfig {
    pub m: usize,
    pub c: f64,
    pub r: f64,
    pub b_omega: f64,
}

fn default_pairs() -> u64 {
    10_000
}

fn default_mode() -> SamplingMode {
    SamplingMode::Mixed
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub steps: usize,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    /// Minibatch size for AdaGrad-norm; defaults to the full dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_eps")]
    pub eps_exponent: f64,
    #[serde(default = "default_margin")]
    pub beta_margin: f64,
    #[serde(default = "default_shrink")]
    pub projection_shrink: f64,
    /// Starting point; defaults to a seeded uniform draw from the ball.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    /// Replaces the certified `L_∇Φ` (needed when the certificate is zero).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_grad_phi: Option<f64>,
}

fn default_eps() -> f64 {
    0.1
}

fn default_margin() -> f64 {
    1e-3
}

fn default_shrink() -> f64 {
    0.999
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// Mean loss of the configured network over the dataset.
    #[default]
    Network,
    /// `Φ(θ) = L‖θ‖² / 2` on `R^dim`, with `b_omega` as the ball radius.
    Quadratic { l: f64, dim: usize, b_omega: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
    /// User-declared envelopes; the certificate is then at most "sampled".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelopes: Option<FieldEnvelopes>,
    #[serde(default)]
    pub controls: Vec<Control>,
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default = "default_substeps")]
    pub n_substeps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_check: Option<EnvelopeCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<CodeLossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<CodeVerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceConfig>,
}

fn default_substeps() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Zero {
        ell: usize,
        n: usize,
    },
    /// `V = θx` with envelopes valid on `|θ| < 1`.
    ScalarLinear,
    /// Random smooth field; built-in envelopes hold for `|θ_a| ≤ theta_radius`.
    TanhBilinear {
        ell: usize,
        n: usize,
        seed: u64,
        scale: f64,
        theta_radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeCheckConfig {
    pub x_radius: f64,
    pub theta_radius: f64,
    #[serde(default = "default_check_samples")]
    pub n_samples: usize,
}

fn default_check_samples() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeLossConfig {
    pub lip_g: f64,
    pub lip_dg: f64,
    pub sample_norms: CodeSampleNorms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeVerifyConfig {
    /// Parameters are drawn from the open box `|θ_a| < theta_radius`.
    pub theta_radius: f64,
    #[serde(default = "default_pairs_usize")]
    pub n_samples: usize,
}

fn default_pairs_usize() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceConfig {
    #[serde(default = "default_nets")]
    pub n_nets: usize,
    #[serde(default = "default_one")]
    pub b_omega: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_nets() -> usize {
    20
}

fn default_tolerance() -> f64 {
    1e-12
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| config_err!("{}: {e}", path.display()))
    }

    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        self.architecture.as_ref().ok_or_else(|| config_err!("missing [architecture] section"))?.spec()
    }

    pub fn bounds(&self) -> Result<&BoundsConfig> {
        self.bounds.as_ref().ok_or_else(|| config_err!("missing [bounds] section"))
    }

    /// Dataset samples, with relative paths taken from `base`.
    pub fn samples(&self, base: &Path) -> Result<Option<Vec<Sample>>> {
        let Some(ds) = &self.dataset else { return Ok(None) };
        match (&ds.path, &ds.samples) {
            (Some(_), Some(_)) => Err(config_err!("give either dataset.path or dataset.samples")),
            (None, Some(s)) if s.is_empty() => Err(config_err!("dataset.samples is empty")),
            (None, Some(s)) => Ok(Some(s.clone())),
            (Some(p), None) => read_dataset(&base.join(p)).map(Some),
            (None, None) => Err(config_err!("dataset needs path or samples")),
        }
    }

    pub fn bound_inputs(&self, samples: Option<&[Sample]>) -> Result<BoundInputs> {
        let b = self.bounds()?;
        let norms = match (&b.sample_norms, samples) {
            (Some(n), _) => n.clone(),
            (None, Some(s)) => SampleNorms::Finite(sample_norms(s)),
            (None, None) => return Err(config_err!("bounds.sample_norms is required without a dataset")),
        };
        let mut inputs = BoundInputs::new(b.b_omega, norms);
        inputs.layer_budgets = b.layer_budgets.clone();
        Ok(inputs)
    }

    /// Loss envelope from the `loss` section; a missing section means `g ≡ 0`.
    pub fn loss_envelope(
        &self,
        arch: &ArchitectureSpec,
        inputs: &BoundInputs,
        samples: Option<&[Sample]>,
    ) -> Result<LossEnvelope> {
        let Some(loss) = &self.loss else {
            return Ok(LossEnvelope::from_derivative_bounds(0.0, 0.0));
        };
        if let Some(env) = loss.envelope {
            return Ok(env);
        }
        let target = match (loss.target_bound, samples) {
            (Some(t), _) => t,
            (None, Some(s)) => s.iter().map(|s| norm(&s.y)).fold(0.0, f64::max),
            (None, None) => 0.0,
        };
        let s_max = inputs.sample_norms.max_norm().unwrap_or(f64::INFINITY);
        let out = lipcert_core::network::output_bound(arch, inputs.b_omega, s_max)?;
        Ok(loss.head.envelope(out, target, arch.output_dim())?)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| config_err!("{}: {e}", path.display()))?;
    let headers = rdr.headers().map_err(|e| config_err!("{}: {e}", path.display()))?.clone();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match h.trim().chars().next() {
            Some('x') => xs.push(i),
            Some('y') => ys.push(i),
            _ => return Err(config_err!("{}: column {h:?} must start with x or y", path.display())),
        }
    }
    if xs.is_empty() {
        return Err(config_err!("{}: no input columns", path.display()));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| config_err!("{}: {e}", path.display()))?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| config_err!("{}: row {}: bad number {:?}", path.display(), row + 1, &rec[i]))
        };
        let x = xs.iter().map(|&i| parse(i)).collect::<Result<_>>()?;
        let y = ys.iter().map(|&i| parse(i)).collect::<Result<_>>()?;
        out.push(Sample::new(x, y));
    }
    if out.is_empty() {
        return Err(config_err!("{}: dataset has no rows", path.display()));
    }
    Ok(out)
}
