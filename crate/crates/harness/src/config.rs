//! Experiment configuration: a JSON document whose fields can be overridden
//! from the command line.

use std::path::{Path, PathBuf};

use kbco_core::engine::{
    AlgoParams, BetaRule, EngineConfig, FocusPrimitive, McmcConfig, Mode, ParamOverrides, Preset,
};
use kbco_core::environments::{EnvSpec, FkmParams};
use kbco_core::geometry::{ConvexBody, OrientedBox};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Exact one-dimensional kernel on `[0, 1]`.
    Kernel1d,
    /// Gaussian-core kernel with focus regions and restarts.
    KernelHd,
    /// One-point gradient descent baseline.
    Fkm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Theory,
    Practical,
}

impl From<PresetName> for Preset {
    fn from(p: PresetName) -> Self {
        match p {
            PresetName::Theory => Preset::Theory,
            PresetName::Practical => Preset::Practical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Constant,
    Linear,
    Quadratic,
    Abs,
    MovingOptimum,
}

/// Environment description; omitted locations get defaults that depend on
/// the dimension and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Constant {
        value: f64,
    },
    Linear {
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    Quadratic {
        #[serde(default)]
        optimum: Option<Vec<f64>>,
    },
    Abs {
        #[serde(default)]
        optimum: Option<Vec<f64>>,
    },
    Stochastic {
        inner: Box<EnvConfig>,
        noise_scale: f64,
    },
    Corrupted {
        inner: Box<EnvConfig>,
        fraction: f64,
    },
    MovingOptimum {
        #[serde(default)]
        switch_round: Option<usize>,
        #[serde(default)]
        first: Option<Vec<f64>>,
        #[serde(default)]
        second: Option<Vec<f64>>,
    },
}

impl EnvConfig {
    pub fn from_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Constant => EnvConfig::Constant { value: 0.5 },
            EnvKind::Linear => EnvConfig::Linear { direction: None },
            EnvKind::Quadratic => EnvConfig::Quadratic { optimum: None },
            EnvKind::Abs => EnvConfig::Abs { optimum: None },
            EnvKind::MovingOptimum => EnvConfig::MovingOptimum {
                switch_round: None,
                first: None,
                second: None,
            },
        }
    }

    /// Concrete environment for dimension `n` and horizon `horizon`.
    pub fn resolve(&self, n: usize, horizon: usize) -> EnvSpec<f64> {
        let or = |v: &Option<Vec<f64>>, d: f64| v.clone().unwrap_or_else(|| vec![d; n]);
        match self {
            EnvConfig::Constant { value } => EnvSpec::Constant { value: *value },
            EnvConfig::Linear { direction } => EnvSpec::Linear {
                direction: or(direction, 1.0),
            },
            EnvConfig::Quadratic { optimum } => EnvSpec::Quadratic {
                optimum: or(optimum, 0.3),
            },
            EnvConfig::Abs { optimum } => EnvSpec::Abs {
                optimum: or(optimum, 0.3),
            },
            EnvConfig::Stochastic { inner, noise_scale } => EnvSpec::Stochastic {
                inner: Box::new(inner.resolve(n, horizon)),
                noise_scale: *noise_scale,
            },
            EnvConfig::Corrupted { inner, fraction } => EnvSpec::Corrupted {
                inner: Box::new(inner.resolve(n, horizon)),
                fraction: *fraction,
            },
            EnvConfig::MovingOptimum {
                switch_round,
                first,
                second,
            } => EnvSpec::MovingOptimum {
                switch_round: switch_round.unwrap_or(horizon / 2 + 1),
                first: or(first, 0.2),
                second: or(second, 0.8),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BodyConfig {
    /// `[0, 1]^n` (the interval `[0, 1]` when `n = 1`).
    #[default]
    UnitCube,
    AxisBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

impl BodyConfig {
    pub fn build(&self, n: usize) -> Result<ConvexBody<f64>> {
        let body = match self {
            BodyConfig::UnitCube if n == 1 => ConvexBody::unit_interval(),
            BodyConfig::UnitCube => ConvexBody::unit_cube(n),
            BodyConfig::AxisBox { lo, hi } => {
                if lo.len() != n || hi.len() != n {
                    return Err(HarnessError::Config(format!("box bounds must have {n} coordinates")));
                }
                if n == 1 {
                    ConvexBody::Interval { lo: lo[0], hi: hi[0] }
                } else {
                    let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
                    let half = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
                    ConvexBody::Box(OrientedBox::axis_aligned(center, half))
                }
            }
            BodyConfig::Ball { center, radius } => {
                if center.len() != n {
                    return Err(HarnessError::Config(format!("ball center must have {n} coordinates")));
                }
                ConvexBody::Ball {
                    center: center.clone(),
                    radius: *radius,
                }
            }
        };
        body.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaConfig {
    Fixed { value: f64 },
    PseudoCode,
    PerDimension { factor: f64 },
}

impl From<BetaConfig> for BetaRule<f64> {
    fn from(b: BetaConfig) -> Self {
        match b {
            BetaConfig::Fixed { value } => BetaRule::Fixed(value),
            BetaConfig::PseudoCode => BetaRule::PseudoCode,
            BetaConfig::PerDimension { factor } => BetaRule::PerDimension(factor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub sigma2: Option<f64>,
    pub eta1: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<BetaConfig>,
}

impl From<Overrides> for ParamOverrides<f64> {
    fn from(o: Overrides) -> Self {
        ParamOverrides {
            lambda: o.lambda,
            sigma2: o.sigma2,
            eta1: o.eta1,
            alpha: o.alpha,
            gamma: o.gamma,
            beta: o.beta.map(Into::into),
        }
    }
}

/// Backend of the high-dimensional engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeConfig {
    /// Grid for `n <= 2`, hit-and-run above.
    #[default]
    Auto,
    Grid {
        resolution: usize,
    },
    Mcmc {
        samples: usize,
        core_samples: usize,
        volume_samples: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkmConfig {
    pub delta_scale: f64,
    pub step_scale: f64,
}

impl Default for FkmConfig {
    fn default() -> Self {
        let d = FkmParams::<f64>::default();
        Self {
            delta_scale: d.delta_scale,
            step_scale: d.step_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub env: EnvConfig,
    pub n: usize,
    /// Horizon of a single run.
    pub t: usize,
    /// Horizons of a sweep.
    pub horizons: Vec<usize>,
    pub preset: PresetName,
    pub overrides: Overrides,
    pub focus_primitive: FocusPrimitiveName,
    pub mode: ModeConfig,
    pub body: BodyConfig,
    /// Grid size of the 1D kernel.
    pub grid_size: usize,
    pub fkm: FkmConfig,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Rounds at which pseudo-regret snapshots are taken.
    pub checkpoints: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FocusPrimitiveName {
    #[default]
    Box,
    Ellipsoid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Kernel1d,
            env: EnvConfig::Abs { optimum: None },
            n: 1,
            t: 1000,
            horizons: Vec::new(),
            preset: PresetName::Practical,
            overrides: Overrides::default(),
            focus_primitive: FocusPrimitiveName::Box,
            mode: ModeConfig::Auto,
            body: BodyConfig::UnitCube,
            grid_size: kbco_core::kernel1d::DEFAULT_GRID,
            fkm: FkmConfig::default(),
            seeds: vec![1],
            out: None,
            checkpoints: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(HarnessError::Config("n must be at least 1".into()));
        }
        if self.algo == Algo::Kernel1d && self.n != 1 {
            return Err(HarnessError::Config("kernel1d requires n = 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("the seed list is empty".into()));
        }
        if self.grid_size < 2 {
            return Err(HarnessError::Config("grid_size must be at least 2".into()));
        }
        self.body.build(self.n)?;
        if self.algo == Algo::KernelHd {
            self.algo_params(self.t.max(2))?;
        }
        Ok(())
    }

    pub fn body(&self) -> Result<ConvexBody<f64>> {
        self.body.build(self.n)
    }

    pub fn algo_params(&self, horizon: usize) -> Result<AlgoParams<f64>> {
        let mut params = AlgoParams::from_preset(self.preset.into(), self.n, horizon, self.overrides.into())
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        params.focus_primitive = match self.focus_primitive {
            FocusPrimitiveName::Box => FocusPrimitive::Box,
            FocusPrimitiveName::Ellipsoid => FocusPrimitive::Ellipsoid,
        };
        Ok(params)
    }

    pub fn engine_config(&self) -> EngineConfig {
        let mut config = EngineConfig::for_dim(self.n);
        match self.mode {
            ModeConfig::Auto => {}
            ModeConfig::Grid { resolution } => config.mode = Mode::Grid { resolution },
            ModeConfig::Mcmc {
                samples,
                core_samples,
                volume_samples,
            } => {
                config.mode = Mode::Mcmc(McmcConfig {
                    samples,
                    core_samples,
                    volume_samples,
                    ..McmcConfig::default()
                })
            }
        }
        config
    }

    pub fn fkm_params(&self) -> FkmParams<f64> {
        FkmParams {
            delta_scale: self.fkm.delta_scale,
            step_scale: self.fkm.step_scale,
        }
    }
}

/// Parses `"1..20"` (inclusive), `"3"` or `"1,4,9"`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let bad = |s: &str| HarnessError::Config(format!("invalid seed list {s:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let lo: u64 = a.trim().parse().map_err(|_| bad(text))?;
        let hi: u64 = b.trim().parse().map_err(|_| bad(text))?;
        if hi < lo {
            return Ok(Vec::new());
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad(text)))
        .collect()
}

/// Parses a comma-separated list of horizons.
pub fn parse_horizons(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0 && v.fract() == 0.0)
                .map(|v| v as usize)
                .ok_or_else(|| HarnessError::Config(format!("invalid horizon {s:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("1..=2").unwrap(), vec![1, 2]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("3, 1,2").unwrap(), vec![3, 1, 2]);
        assert!(parse_seeds("").unwrap().is_empty());
        assert!(parse_seeds("a..b").is_err());
    }

    #[test]
    fn horizon_lists() {
        assert_eq!(parse_horizons("1000,1e4").unwrap(), vec![1000, 10_000]);
        assert!(parse_horizons("10.5").is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut c = ExperimentConfig {
            algo: Algo::KernelHd,
            n: 2,
            env: EnvConfig::Stochastic {
                inner: Box::new(EnvConfig::Quadratic {
                    optimum: Some(vec![0.3, 0.6]),
                }),
                noise_scale: 0.1,
            },
            ..ExperimentConfig::default()
        };
        c.overrides.beta = Some(BetaConfig::PseudoCode);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let parsed = ExperimentConfig::from_json(r#"{"algo": "fkm", "n": 2, "env": {"kind": "linear"}}"#).unwrap();
        assert_eq!(parsed.algo, Algo::Fkm);
        assert_eq!(parsed.t, 1000);
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation() {
        let c = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let c = ExperimentConfig {
            n: 2,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn defaults_depend_on_dimension() {
        let spec = EnvConfig::from_kind(EnvKind::MovingOptimum).resolve(2, 100);
        assert_eq!(
            spec,
            EnvSpec::MovingOptimum {
                switch_round: 51,
                first: vec![0.2, 0.2],
                second: vec![0.8, 0.8]
            }
        );
    }
}
