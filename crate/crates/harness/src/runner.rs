//! Seeded runs, parallel fan-out and horizon sweeps.

use std::fs;
use std::path::Path;

use kbco_core::engine;
use kbco_core::environments::{fkm_baseline, make_env, regret_report, LossOracle};
use kbco_core::kernel1d::k1_run;
use kbco_core::rng::{stream_seed, RunStreams, StreamTag};
use kbco_core::stats::loglog_fit;
use kbco_core::trace::RunTrace;
use rayon::prelude::*;

use crate::config::{Algo, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{
    write_trace_csv, Aggregate, RunSummary, SeedSummary, SweepPoint, SweepSummary,
};

/// Environment variable capping the worker pool.
pub const THREADS_VAR: &str = "KBCO_THREADS";

/// Fractions of the horizon used as checkpoints when none are configured.
const DEFAULT_CHECKPOINTS: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.7, 1.0];

/// Result of one seed: the full trace (partial when aborted) and either its
/// summary or the abort message.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: RunTrace<f64>,
    pub outcome: std::result::Result<SeedSummary, String>,
}

pub fn checkpoints(config: &ExperimentConfig, horizon: usize) -> Vec<usize> {
    if !config.checkpoints.is_empty() {
        return config.checkpoints.clone();
    }
    let mut cps: Vec<usize> = DEFAULT_CHECKPOINTS
        .iter()
        .map(|f| (f * horizon as f64).round() as usize)
        .filter(|&c| c >= 1)
        .collect();
    cps.dedup();
    cps
}

pub fn build_env(config: &ExperimentConfig, horizon: usize, seed: u64) -> Result<Box<dyn LossOracle<f64>>> {
    let spec = config.env.resolve(config.n, horizon);
    let env_seed = stream_seed(seed, 0, StreamTag::Environment);
    make_env(&spec, config.body()?, horizon, env_seed).map_err(|e| HarnessError::Config(e.to_string()))
}

/// Trace of one seeded run; `Err` carries the partial trace on abort.
pub fn run_trace(
    config: &ExperimentConfig,
    env: &dyn LossOracle<f64>,
    horizon: usize,
    seed: u64,
) -> std::result::Result<RunTrace<f64>, (RunTrace<f64>, String)> {
    let mut streams = RunStreams::new(seed, 0);
    let fail = |e: kbco_core::Error| (RunTrace::new(config.n), e.to_string());
    match config.algo {
        Algo::Kernel1d => k1_run(env, horizon, config.grid_size, &mut streams).map_err(fail),
        Algo::Fkm => fkm_baseline(env, horizon, config.fkm_params(), &mut streams).map_err(fail),
        Algo::KernelHd => {
            let params = config.algo_params(horizon).map_err(|e| (RunTrace::new(config.n), e.to_string()))?;
            engine::run(env, &params, config.engine_config(), &mut streams)
                .map_err(|a| (a.partial, a.error.to_string()))
        }
    }
}

pub fn run_seed(config: &ExperimentConfig, horizon: usize, seed: u64) -> Result<SeedRun> {
    let env = build_env(config, horizon, seed)?;
    Ok(match run_trace(config, env.as_ref(), horizon, seed) {
        Ok(trace) => {
            let report = regret_report(env.as_ref(), &trace, &checkpoints(config, horizon));
            let summary = SeedSummary::new(seed, &trace, &report);
            SeedRun {
                seed,
                trace,
                outcome: Ok(summary),
            }
        }
        Err((trace, message)) => SeedRun {
            seed,
            trace,
            outcome: Err(message),
        },
    })
}

/// Worker pool sized by `KBCO_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let threads: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| HarnessError::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot build worker pool: {e}")))
}

/// Runs every seed at `horizon` in parallel; results keep the seed order.
pub fn run_seeds(config: &ExperimentConfig, horizon: usize) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let pool = thread_pool()?;
    pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| run_seed(config, horizon, seed))
            .collect()
    })
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

fn write_traces(dir: &Path, runs: &[SeedRun]) -> Result<()> {
    for r in runs {
        let file = fs::File::create(dir.join(trace_file_name(r.seed)))?;
        write_trace_csv(&r.trace, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn summarize(horizon: usize, runs: &[SeedRun]) -> Result<RunSummary> {
    let summaries = runs
        .iter()
        .map(|r| {
            r.outcome.clone().map_err(|message| HarnessError::Aborted {
                seed: r.seed,
                message,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary {
        horizon,
        aggregate: Aggregate::of(&summaries),
        runs: summaries,
    })
}

/// The `run` command: traces and `summary.json` go to `config.out` when set.
/// Traces are flushed before an abort is reported.
pub fn cli_run(config: &ExperimentConfig) -> Result<RunSummary> {
    let runs = run_seeds(config, config.t)?;
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir)?;
        write_traces(dir, &runs)?;
    }
    let summary = summarize(config.t, &runs)?;
    if let Some(dir) = &config.out {
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary)
}

/// The `sweep` command: every seed at every horizon, then a log-log fit of
/// mean pseudo-regret against the horizon. Writes `sweep.json` to
/// `config.out` when set.
pub fn cli_sweep(config: &ExperimentConfig) -> Result<SweepSummary> {
    if config.horizons.len() < 2 {
        return Err(HarnessError::Config("a sweep needs at least two horizons".into()));
    }
    let mut points = Vec::with_capacity(config.horizons.len());
    for &horizon in &config.horizons {
        let summary = summarize(horizon, &run_seeds(config, horizon)?)?;
        points.push(SweepPoint {
            horizon,
            pseudo_regret: summary.aggregate.pseudo_regret,
            regret: summary.aggregate.regret,
        });
    }
    let sweep = fit_sweep(points)?;
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&sweep)?)?;
    }
    Ok(sweep)
}

pub fn fit_sweep(points: Vec<SweepPoint>) -> Result<SweepSummary> {
    let xs: Vec<f64> = points.iter().map(|p| p.horizon as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.pseudo_regret.mean).collect();
    let (slope, intercept) = loglog_fit(&xs, &ys, 1.0)
        .ok_or_else(|| HarnessError::Config("sweep horizons must be distinct and positive".into()))?;
    Ok(SweepSummary {
        slope,
        intercept,
        points,
    })
}
