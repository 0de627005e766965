//! `lipcert` command-line tool.
//!
//! Every subcommand reads one JSON run configuration, writes its reports and
//! a `run.json` provenance record into the output directory, and exits with a
//! code that says what went wrong:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O error or refused overwrite |
//! | 2 | invalid configuration or arguments |
//! | 3 | a certificate overflowed (see `--allow-inf`) |
//! | 4 | a sampled ratio exceeded its certificate |
//! | 5 | a training step broke the descent inequality |
//! | 6 | the network and its CODE form disagree |

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
pub mod config;
pub mod error;
pub mod output;

use config::RunConfig;
use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "lipcert", version, about = "Certified parameter-space Lipschitz bounds for neural networks")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "lipcert-out")]
    pub out: PathBuf,
    /// Overrides the `seed` in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Write infinite certificates instead of failing with exit code 3.
    #[arg(long, global = true)]
    pub allow_inf: bool,
    /// Overwrite existing report files.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute certificates (recursive, closed form, refined budgets).
    Certify,
    /// Compare certificates against sampled Lipschitz ratios.
    Verify,
    /// Run gradient descent or AdaGrad-norm with certified step sizes.
    Train,
    /// Controlled-ODE networks.
    #[command(subcommand)]
    Code(CodeCommand),
}

#[derive(Debug, Subcommand)]
pub enum CodeCommand {
    /// Grönwall certificate for the configured field and controls.
    Certify,
    /// Sample parameter pairs and compare against the certificate.
    Verify,
    /// Check that dense networks agree with their CODE form.
    Equivalence,
}

/// Everything a command needs besides its own config section.
pub struct Ctx {
    pub config: RunConfig,
    /// Directory relative dataset paths are resolved against.
    pub base: PathBuf,
    pub out_dir: PathBuf,
    pub force: bool,
    pub allow_inf: bool,
}

fn dispatch(cli: Cli) -> Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let base = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let ctx = Ctx { config, base, out_dir: cli.out, force: cli.force, allow_inf: cli.allow_inf };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Certify => commands::certify::run(&ctx),
        Command::Verify => commands::verify::run(&ctx),
        Command::Train => commands::train::run(&ctx),
        Command::Code(CodeCommand::Certify) => commands::code::certify(&ctx),
        Command::Code(CodeCommand::Verify) => commands::code::verify(&ctx),
        Command::Code(CodeCommand::Equivalence) => commands::code::equivalence(&ctx),
    })
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIPCERT_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lipcert: {e}");
            e.exit_code()
        }
    }
}
