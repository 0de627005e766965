#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Run the built binary with `--config <dir>/config.json --out <dir>/<out>`.
pub fn lipcert(dir: &Path, config: &Value, out: &str, args: &[&str]) -> Run {
    let cfg = dir.join("config.json");
    fs::write(&cfg, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lipcert"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(out))
        .output()
        .expect("binary runs");
    Run {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

/// CSV rows as maps from header to cell.
pub fn read_csv(path: PathBuf) -> Vec<std::collections::BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let h = r.headers().unwrap().clone();
    r.records()
        .map(|rec| h.iter().zip(rec.unwrap().iter()).map(|(a, b)| (a.to_string(), b.to_string())).collect())
        .collect()
}

pub fn f(cell: &str) -> f64 {
    cell.parse().unwrap_or_else(|_| panic!("not a float: {cell:?}"))
}
