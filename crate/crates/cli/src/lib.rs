//! `membrane-lab`: runs the membrane-model experiments and writes CSV/JSON
//! outputs with a hashed manifest.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 validation failure.

pub mod commands;
pub mod config;
pub mod output;
pub mod validate;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

use config::{Command, ConfigError, RunConfig};
use output::OutputDir;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] membrane_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    ValidationFailed,
}

#[derive(Parser, Debug)]
#[command(
    name = "membrane-lab",
    version,
    about = "Experiments for the membrane model with delta-pinning",
    after_help = "Subcommands: green, certificate, pin-sample, pin-enumerate, percolation, decay, validate.\n\
                  Every flag is also a key of the flat `key = value` config file; flags win."
)]
struct Cli {
    /// green | certificate | pin-sample | pin-enumerate | percolation | decay | validate
    subcommand: String,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long = "N")]
    n: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long = "burn_in", alias = "burn-in")]
    burn_in: Option<String>,
    #[arg(long)]
    thinning: Option<String>,
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    scan: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    distances: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    tube: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl Cli {
    fn flags(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("d", &self.d),
            ("N", &self.n),
            ("eps", &self.eps),
            ("xi", &self.xi),
            ("lambda", &self.lambda),
            ("delta", &self.delta),
            ("seed", &self.seed),
            ("backend", &self.backend),
            ("tol", &self.tol),
            ("samples", &self.samples),
            ("burn_in", &self.burn_in),
            ("thinning", &self.thinning),
            ("sampler", &self.sampler),
            ("scan", &self.scan),
            ("rho", &self.rho),
            ("trials", &self.trials),
            ("distances", &self.distances),
            ("k", &self.k),
            ("t", &self.t),
            ("tube", &self.tube),
            ("out", &self.out),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect()
    }
}

/// Executes one configured run and writes its manifest.
pub fn execute(cfg: &RunConfig, config_file: Option<&std::path::Path>) -> Result<(Status, output::Manifest), RunError> {
    let mut out = OutputDir::create(&cfg.out)?;
    let status = match cfg.command {
        Command::Green => commands::green(cfg, &mut out)?,
        Command::Certificate => commands::certificate(cfg, &mut out)?,
        Command::PinSample => commands::pin_sample(cfg, &mut out)?,
        Command::PinEnumerate => commands::pin_enumerate(cfg, &mut out)?,
        Command::Percolation => commands::percolation(cfg, &mut out)?,
        Command::Decay => commands::decay(cfg, &mut out)?,
        Command::Validate => {
            let suite = out.timed("suite", |_| validate::run_suite(cfg.seed))?;
            out.measured.gamma_log_hat = suite.gamma_log_hat;
            out.measured.c_cfg = suite.c_cfg;
            out.write("checks.csv", validate::checks_csv(&suite.checks).as_bytes())?;
            let passed = suite.checks.iter().all(|c| c.passed);
            out.write_json("validate.json", &serde_json::json!({ "all_passed": passed, "checks": suite.checks }))?;
            if passed {
                Status::Ok
            } else {
                Status::ValidationFailed
            }
        }
    };
    let inputs = config_file.map(output::input_entry).transpose()?.into_iter().collect();
    let label = match status {
        Status::Ok => "ok",
        Status::ValidationFailed => "validation-failed",
    };
    let manifest = out.finish(cfg.command.name(), label, cfg.echo(), inputs)?;
    Ok((status, manifest))
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let loaded = cli
        .subcommand
        .parse::<Command>()
        .and_then(|command| config::load(command, cli.config.as_deref(), &cli.flags()));
    let cfg = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(&cfg, cli.config.as_deref()) {
        Ok((Status::Ok, m)) => {
            println!("{}: wrote {} files to {}", cfg.command.name(), m.files.len(), cfg.out.display());
            EXIT_OK
        }
        Ok((Status::ValidationFailed, _)) => {
            eprintln!("{}: validation failed; see {}", cfg.command.name(), cfg.out.join("checks.csv").display());
            EXIT_VALIDATION
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
