use kbco_core::engine::{self, AlgoParams, EngineConfig, Mode, McmcConfig};
use kbco_core::environments::{fkm_baseline, make_env, regret_report, EnvSpec, FkmParams};
use kbco_core::geometry::ConvexBody;
use kbco_core::kernel1d::{k1_regret_bound, k1_run};
use kbco_core::rng::RunStreams;
use kbco_core::{Body, Env, Oracle, Trace};

fn env(spec: Env, body: Body, horizon: usize) -> Oracle {
    make_env(&spec, body, horizon, 11).unwrap()
}

fn abs_1d(horizon: usize) -> Oracle {
    env(
        EnvSpec::Abs { optimum: vec![0.3] },
        ConvexBody::unit_interval(),
        horizon,
    )
}

#[test]
fn one_d_run_is_complete_and_within_the_bound() {
    let horizon = 2000;
    let e = abs_1d(horizon);
    let trace = k1_run(e.as_ref(), horizon, 512, &mut RunStreams::new(1, 0)).unwrap();
    assert_eq!(trace.len(), horizon);
    assert!(trace.records.iter().all(|r| r.in_body && (0.0..=1.0).contains(&r.x[0])));
    let report = regret_report(e.as_ref(), &trace, &[500, 1000, 2000]);
    assert!(report.pseudo_regret <= k1_regret_bound(horizon));
    assert_eq!(report.checkpoints.len(), 3);
    assert!((report.best_point[0] - 0.3).abs() < 0.01);
}

#[test]
fn one_d_run_learns_the_optimum() {
    let horizon = 5000;
    let e = abs_1d(horizon);
    let trace = k1_run(e.as_ref(), horizon, 512, &mut RunStreams::new(2, 0)).unwrap();
    let late: Vec<f64> = trace.records[4000..].iter().map(|r| r.x[0]).collect();
    let mean = late.iter().sum::<f64>() / late.len() as f64;
    assert!((mean - 0.3).abs() < 0.1, "late mean play {mean}");
}

fn hd_trace(seed: u64, config: EngineConfig, horizon: usize) -> Trace {
    let e = env(
        EnvSpec::Quadratic {
            optimum: vec![0.3, 0.6],
        },
        ConvexBody::unit_cube(2),
        horizon,
    );
    let params = AlgoParams::practical(2, horizon).unwrap();
    engine::run(e.as_ref(), &params, config, &mut RunStreams::new(seed, 0)).unwrap()
}

#[test]
fn grid_engine_runs_are_reproducible() {
    let a = hd_trace(5, EngineConfig::for_dim(2), 300);
    let b = hd_trace(5, EngineConfig::for_dim(2), 300);
    let c = hd_trace(6, EngineConfig::for_dim(2), 300);
    assert_eq!(a.records, b.records);
    assert_ne!(a.records, c.records);
    assert_eq!(a.len(), 300);
    assert!(a.records.iter().all(|r| r.u > 0.0 && r.eta > 0.0));
}

#[test]
fn mcmc_engine_completes_a_short_run() {
    let mut config = EngineConfig::for_dim(2);
    config.mode = Mode::Mcmc(McmcConfig {
        samples: 64,
        core_samples: 16,
        volume_samples: 64,
        ..McmcConfig::default()
    });
    let trace = hd_trace(7, config, 40);
    assert_eq!(trace.len(), 40);
    assert!(trace.records.iter().all(|r| r.loss >= 0.0 && r.loss <= 1.0));
}

#[test]
fn fkm_plays_stay_in_the_body() {
    let horizon = 1000;
    let body = ConvexBody::unit_cube(2);
    let e = env(
        EnvSpec::Abs {
            optimum: vec![0.5, 0.5],
        },
        body.clone(),
        horizon,
    );
    let trace = fkm_baseline(e.as_ref(), horizon, FkmParams::default(), &mut RunStreams::new(3, 0)).unwrap();
    assert_eq!(trace.len(), horizon);
    assert!(trace.records.iter().all(|r| body.contains(&r.x)));
}
