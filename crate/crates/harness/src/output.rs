//! Per-round CSV traces and JSON summaries.

use std::io::{Read, Write};

use kbco_core::environments::RegretReport;
use kbco_core::trace::{RoundRecord, RunTrace};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Header of a trace CSV for dimension `n`.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    for c in ["in_K", "in_Omega", "loss", "u", "eta", "focus_cut", "restart"] {
        h.push(c.to_string());
    }
    h
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes the trace with one row per round. Floats use the shortest
/// representation that round-trips, so equal traces give equal bytes.
pub fn write_trace_csv<W: Write>(trace: &RunTrace<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(trace.dim))?;
    let mut row = Vec::with_capacity(trace.dim + 8);
    for r in &trace.records {
        row.clear();
        row.push(r.t.to_string());
        row.extend(r.x.iter().map(|v| v.to_string()));
        row.push(flag(r.in_body).to_string());
        row.push(flag(r.in_omega).to_string());
        row.push(r.loss.to_string());
        row.push(r.u.to_string());
        row.push(r.eta.to_string());
        row.push(flag(r.focus_cut).to_string());
        row.push(flag(r.restart).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_csv_bytes(trace: &RunTrace<f64>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf)?;
    Ok(buf)
}

/// Reads a trace written by [`write_trace_csv`].
pub fn read_trace_csv<R: Read>(input: R) -> Result<RunTrace<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let n = header
        .len()
        .checked_sub(8)
        .ok_or_else(|| HarnessError::Config("trace CSV has too few columns".into()))?;
    if header.iter().collect::<Vec<_>>() != csv_header(n) {
        return Err(HarnessError::Config("unexpected trace CSV header".into()));
    }
    let bad = |what: &str| HarnessError::Config(format!("malformed trace CSV field {what}"));
    let float = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
    let boolean = |s: &str| match s {
        "1" => Ok(true),
        "0" => Ok(false),
        _ => Err(bad(s)),
    };
    let mut trace = RunTrace::new(n);
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).ok_or_else(|| bad("(missing)"));
        let x = (1..=n).map(|i| float(f(i)?)).collect::<Result<Vec<_>>>()?;
        let record = RoundRecord {
            t: f(0)?.parse().map_err(|_| bad("t"))?,
            x,
            in_body: boolean(f(n + 1)?)?,
            in_omega: boolean(f(n + 2)?)?,
            loss: float(f(n + 3)?)?,
            u: float(f(n + 4)?)?,
            eta: float(f(n + 5)?)?,
            focus_cut: boolean(f(n + 6)?)?,
            restart: boolean(f(n + 7)?)?,
        };
        if record.restart {
            trace.restart_times.push(record.t);
        }
        trace.records.push(record);
    }
    Ok(trace)
}

/// Regret summary of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rounds: usize,
    pub cumulative_loss: f64,
    pub best_fixed_loss: f64,
    pub regret: f64,
    pub pseudo_regret: f64,
    pub restarts: usize,
    pub focus_cuts: usize,
    pub best_point: Vec<f64>,
    pub checkpoints: Vec<(usize, f64)>,
    pub growth_exponent: Option<f64>,
    pub warnings: Vec<String>,
}

impl SeedSummary {
    pub fn new(seed: u64, trace: &RunTrace<f64>, report: &RegretReport<f64>) -> Self {
        Self {
            seed,
            rounds: trace.len(),
            cumulative_loss: report.cumulative_loss,
            best_fixed_loss: report.best_fixed_loss,
            regret: report.regret,
            pseudo_regret: report.pseudo_regret,
            restarts: trace.restarts(),
            focus_cuts: trace.focus_cuts(),
            best_point: report.best_point.clone(),
            checkpoints: report.checkpoints.clone(),
            growth_exponent: report.growth_exponent,
            warnings: trace.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = kbco_core::stats::mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cumulative_loss: MeanStd,
    pub best_fixed_loss: MeanStd,
    pub regret: MeanStd,
    pub pseudo_regret: MeanStd,
    pub restarts: MeanStd,
    pub focus_cuts: MeanStd,
}

impl Aggregate {
    pub fn of(runs: &[SeedSummary]) -> Self {
        let col = |f: fn(&SeedSummary) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            cumulative_loss: col(|r| r.cumulative_loss),
            best_fixed_loss: col(|r| r.best_fixed_loss),
            regret: col(|r| r.regret),
            pseudo_regret: col(|r| r.pseudo_regret),
            restarts: col(|r| r.restarts as f64),
            focus_cuts: col(|r| r.focus_cuts as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub horizon: usize,
    pub runs: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub horizon: usize,
    pub pseudo_regret: MeanStd,
    pub regret: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Slope of log mean pseudo-regret against log T.
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<SweepPoint>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> RunTrace<f64> {
        let mut t = RunTrace::new(2);
        for i in 1..=3 {
            t.push(RoundRecord {
                t: i,
                x: vec![0.1 * i as f64, 1.0 / 3.0],
                in_body: i != 2,
                in_omega: true,
                loss: 0.25,
                u: 1.5e-7,
                eta: 0.01,
                focus_cut: i == 3,
                restart: i == 2,
            });
        }
        t.restart_times.push(2);
        t
    }

    #[test]
    fn header_order() {
        assert_eq!(
            csv_header(2).join(","),
            "t,x1,x2,in_K,in_Omega,loss,u,eta,focus_cut,restart"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let trace = sample_trace();
        let bytes = trace_csv_bytes(&trace).unwrap();
        let back = read_trace_csv(bytes.as_slice()).unwrap();
        assert_eq!(back.records, trace.records);
        assert_eq!(back.restart_times, trace.restart_times);
        assert_eq!(trace_csv_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(read_trace_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
