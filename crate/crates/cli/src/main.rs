//! `cfs <scenario> --config <path>` runs one experiment and writes its
//! tables into the output directory.

mod config;
mod output;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{ExperimentConfig, Scenario};
use output::Output;

#[derive(Parser, Debug)]
#[command(name = "cfs", version, about = "Run a causal fermion system experiment")]
struct Args {
    scenario: Scenario,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("cfs: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let raw = match std::fs::read_to_string(&args.config) {
        Ok(s) => s,
        Err(e) => return fail(2, format!("cannot read {}: {e}", args.config.display())),
    };
    let cfg = match raw.parse::<ExperimentConfig>() {
        Ok(c) => c,
        Err(e) => return fail(2, format!("invalid config {}: {e}", args.config.display())),
    };
    let env_seed = std::env::var("CFS_SEED").ok();
    let cfg = match cfg.resolve(args.scenario, env_seed.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(2, e),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return fail(2, "--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(2, e);
        }
    }
    let dir = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let out = match Output::new(&dir, args.scenario.name(), &cfg.hash(), cfg.seed) {
        Ok(o) => o,
        Err(e) => return fail(2, format!("cannot create {}: {e}", dir.display())),
    };
    match scenarios::run(&cfg, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.exit_code(), e),
    }
}
