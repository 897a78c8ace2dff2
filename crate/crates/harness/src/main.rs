use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kbco_harness::config::{parse_horizons, parse_seeds, Algo, EnvConfig, EnvKind, PresetName};
use kbco_harness::runner::{cli_run, cli_sweep};
use kbco_harness::verify::{run_suite, Mutation, Suite};
use kbco_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "kbco", version, about = "Kernel-based bandit convex optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed at one horizon and write traces and a summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Horizon T.
        #[arg(long)]
        t: Option<String>,
    },
    /// Run every seed at several horizons and fit the regret growth.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated horizons, e.g. `1e3,1e4,1e5`.
        #[arg(long)]
        t: Option<String>,
    },
    /// Check kernel, sampler and engine properties.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, value_enum, default_value = "none", hide = true)]
        mutation: Mutation,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    #[arg(long, value_enum)]
    env: Option<EnvKind>,
    /// Dimension.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<PresetName>,
    /// Seeds as `1..20`, `7` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(algo) = self.algo {
            config.algo = algo;
        }
        if let Some(kind) = self.env {
            config.env = EnvConfig::from_kind(kind);
        }
        if let Some(n) = self.n {
            config.n = n;
        }
        if let Some(preset) = self.preset {
            config.preset = preset;
        }
        if let Some(seeds) = &self.seeds {
            config.seeds = parse_seeds(seeds)?;
        }
        if let Some(out) = self.out {
            config.out = Some(out);
        }
        Ok(config)
    }
}

fn single_horizon(text: &str) -> Result<usize> {
    match parse_horizons(text)?.as_slice() {
        [t] => Ok(*t),
        _ => Err(HarnessError::Config(format!("expected one horizon, got {text:?}"))),
    }
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run { common, t } => {
            let mut config = common.resolve()?;
            if let Some(t) = t {
                config.t = single_horizon(&t)?;
            }
            let summary = cli_run(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(true)
        }
        Command::Sweep { common, t } => {
            let mut config = common.resolve()?;
            if let Some(t) = t {
                config.horizons = parse_horizons(&t)?;
            }
            if let Some(&first) = config.horizons.first() {
                config.t = first;
            }
            let sweep = cli_sweep(&config)?;
            println!("{}", serde_json::to_string_pretty(&sweep)?);
            Ok(true)
        }
        Command::Verify { suite, mutation } => {
            let checks = run_suite(suite, mutation);
            for c in &checks {
                println!("{c}");
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("kbco: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
