use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvspatial::config::RunConfig;
use mvspatial::workflow;
use mvspatial::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "mvspatial",
    version,
    about = "Multivariate spatial models with nonseparable cross-covariances"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Generate a built-in scenario dataset.
    Simulate,
    /// Fit one model family and write its chain.
    Fit,
    /// Predict hold-out sites or missing values from a fitted chain.
    Predict,
    /// Posterior test of separability with the mixture prior.
    TestSeparability,
    /// Fit several families on a shared hold-out and score them.
    Compare,
    /// Log-likelihood profile over alpha0.
    Profile,
}

fn run(cli: &Cli) -> Result<serde_json::Value, Error> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {t} threads: {e}")))?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(std::env::current_dir()?.join(out));
    }
    let v = cli.verbose;
    match cli.command {
        Cmd::Simulate => workflow::cmd_simulate(&cfg, v),
        Cmd::Fit => workflow::cmd_fit(&cfg, v),
        Cmd::Predict => workflow::cmd_predict(&cfg, v),
        Cmd::TestSeparability => workflow::cmd_test_separability(&cfg, v),
        Cmd::Compare => workflow::cmd_compare(&cfg, v),
        Cmd::Profile => workflow::cmd_profile(&cfg, v),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let doc = json!({
                "error": {
                    "kind": e.kind(),
                    "message": e.to_string(),
                    "exit_code": e.exit_code(),
                }
            });
            eprintln!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
