//! Report files: CSV tables with full-precision floats, pretty JSON, and the
//! `run.json` provenance record written next to every report.

use std::fs;
use std::path::{Path, PathBuf};

use lipcert_core::digest::DigestBuilder;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// 17 significant digits, so every float round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Output directory for one command. All target files are checked before
/// any work starts, so a refused overwrite leaves nothing half-written.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn prepare(dir: &Path, force: bool, files: &[&str]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        if !force {
            for f in files {
                let p = dir.join(f);
                if p.exists() {
                    return Err(CliError::Overwrite(p));
                }
            }
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(p, e))
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name);
        let to_io = |e: csv::Error| CliError::io(&p, e.into());
        let mut w = csv::Writer::from_path(&p).map_err(to_io)?;
        w.write_record(header).map_err(to_io)?;
        for r in rows {
            w.write_record(r).map_err(to_io)?;
        }
        w.flush().map_err(|e| CliError::io(&p, e))
    }
}

#[derive(Serialize)]
pub struct RunRecord<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_digest: Option<String>,
    pub seed: u64,
    pub config: &'a RunConfig,
}

impl<'a> RunRecord<'a> {
    pub fn new(command: &'a str, config: &'a RunConfig, dataset: Option<&[lipcert_core::Sample]>) -> Self {
        let canonical = serde_json::to_vec(config).expect("config serializes");
        let mut d = DigestBuilder::new("lipcert-config");
        d.bytes(&canonical);
        let dataset_digest = dataset.map(|samples| {
            let mut d = DigestBuilder::new("lipcert-dataset");
            d.usize(samples.len());
            for s in samples {
                d.f64s(&s.x).f64s(&s.y);
            }
            d.finish()
        });
        Self {
            tool: "lipcert",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_digest: d.finish(),
            dataset_digest,
            seed: config.seed,
            config,
        }
    }
}

pub const RUN_RECORD: &str = "run.json";
