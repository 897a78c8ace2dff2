//! The high-dimensional learner: kernel plays, Gaussian-bump loss estimates,
//! exponential weights on a shrinking focus region, learning-rate annealing
//! and restarts.
//!
//! Two backends share the round logic. `Mode::Grid` (`n <= 2`) keeps `Q` and
//! `L̃` on every cell of a regular grid, so `p`, its moments, `K p(x)` and
//! volume ratios are exact for the atomic measure on the grid. `Mode::Mcmc`
//! samples `p` by hit-and-run and estimates all of these.

use rand::distr::{weighted::WeightedIndex, Distribution};

use crate::environments::LossOracle;
use crate::error::{Error, Result};
use crate::geometry::{
    box_from_moments, boundary_facets, mahalanobis_norm, ConvexBody, Cut, Ellipsoid, FocusRegion, Polytope,
};
use crate::grid::GridDensity;
use crate::kernel_hd::{
    estimate_u, gaussian_core, kernel_log_densities, make_bump, shifted_core, theory_eps, GaussianCore,
    KernelParams, U_FLOOR,
};
use crate::linalg::{complement_basis, Matrix};
use crate::rng::RunStreams;
use crate::sampler::{hit_and_run, moments, volume_ratio, BumpSum, ChainConfig};
use crate::scalar::{log_sum_exp, Real};
use crate::trace::{RoundRecord, RunTrace};

/// A cut is added when `Vol(F ∩ cut) / Vol(F)` falls below this.
pub const VOLUME_THRESHOLD: f64 = 3.0 / 8.0;

/// Constant `C` in the theory choice of `λ`.
pub const THEORY_LAMBDA_CONSTANT: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Theory,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocusPrimitive {
    Box,
    Ellipsoid,
}

/// Restart threshold `β`: the test is `η₁ (L̃(boundary) - L̃*) <= β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaRule<S> {
    Fixed(S),
    /// `β = 2`, the threshold `2/η₁` of the pseudo-code.
    PseudoCode,
    /// `β = c n`.
    PerDimension(S),
}

impl<S: Real> BetaRule<S> {
    pub fn value(&self, dim: usize) -> S {
        match *self {
            BetaRule::Fixed(b) => b,
            BetaRule::PseudoCode => S::of(2.0),
            BetaRule::PerDimension(c) => c * S::of_usize(dim),
        }
    }
}

impl<S: Real> Default for BetaRule<S> {
    fn default() -> Self {
        BetaRule::Fixed(S::of(4.0))
    }
}

/// Values replacing the preset's choices; kept across restarts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamOverrides<S> {
    pub lambda: Option<S>,
    pub sigma2: Option<S>,
    pub eta1: Option<S>,
    pub alpha: Option<S>,
    pub gamma: Option<S>,
    pub beta: Option<BetaRule<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgoParams<S> {
    pub dim: usize,
    pub horizon: usize,
    pub preset: Preset,
    pub kernel: KernelParams<S>,
    pub eta1: S,
    pub alpha: S,
    pub gamma: S,
    pub beta: BetaRule<S>,
    pub focus_primitive: FocusPrimitive,
    pub overrides: ParamOverrides<S>,
}

impl<S: Real> AlgoParams<S> {
    /// `α = (2e)^17 n² log²T`, `λ = ε⁴/(C² n⁴ α² log²T)`, `γ = 1/(5n log₂T)`,
    /// `η₁ = 1/(20 e² √(nT log T))`, `β = 4`.
    pub fn theory(dim: usize, horizon: usize) -> Result<Self> {
        Self::from_preset(Preset::Theory, dim, horizon, ParamOverrides::default())
    }

    /// `λ = min(0.05, 1/(4n))`, `σ² = 1/(n ln T)`, `α = 4n`, `γ = 0.1`,
    /// `η₁ = 1/√(nT)`, `β = 4`. Not covered by the regret guarantee.
    pub fn practical(dim: usize, horizon: usize) -> Result<Self> {
        Self::from_preset(Preset::Practical, dim, horizon, ParamOverrides::default())
    }

    pub fn from_preset(preset: Preset, dim: usize, horizon: usize, overrides: ParamOverrides<S>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let n = S::of_usize(dim);
        let big_t = S::of_usize(horizon.max(2));
        let log_t = big_t.ln();
        let (lambda, sigma2, eta1, alpha, gamma) = match preset {
            Preset::Theory => {
                let alpha = overrides
                    .alpha
                    .unwrap_or_else(|| (S::of(2.0) * S::E()).powi(17) * n * n * log_t * log_t);
                let eps = theory_eps::<S>();
                let c = S::of(THEORY_LAMBDA_CONSTANT);
                let lambda = overrides
                    .lambda
                    .unwrap_or_else(|| eps.powi(4) / (c * c * n.powi(4) * alpha * alpha * log_t * log_t));
                let sigma2 = overrides
                    .sigma2
                    .unwrap_or_else(|| eps * eps / (n * log_t * (S::of(2.0) - lambda)));
                let eta1 = S::one() / (S::of(20.0) * S::E() * S::E() * (n * big_t * log_t).sqrt());
                let gamma = S::one() / (S::of(5.0) * n * big_t.log2());
                (lambda, sigma2, eta1, alpha, gamma)
            }
            Preset::Practical => {
                let lambda = S::of(0.05).min(S::one() / (S::of(4.0) * n));
                (lambda, S::one() / (n * log_t), S::one() / (n * big_t).sqrt(), S::of(4.0) * n, S::of(0.1))
            }
        };
        let lambda = overrides.lambda.unwrap_or(lambda);
        let params = Self {
            dim,
            horizon,
            preset,
            kernel: KernelParams::new(lambda, overrides.sigma2.unwrap_or(sigma2), theory_eps())?,
            eta1: overrides.eta1.unwrap_or(eta1),
            alpha: overrides.alpha.unwrap_or(alpha),
            gamma: overrides.gamma.unwrap_or(gamma),
            beta: overrides.beta.unwrap_or_default(),
            focus_primitive: FocusPrimitive::Box,
            overrides,
        };
        params.validate()?;
        if preset == Preset::Theory {
            params.check_theory_assumptions()?;
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: S| {
            if v > S::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("eta1", self.eta1)?;
        positive("alpha", self.alpha)?;
        positive("beta", self.beta.value(self.dim))?;
        if !(self.gamma >= S::zero()) {
            return Err(Error::InvalidParameter(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        Ok(())
    }

    /// `η₁, λ, γ < 1/2`, `α >= 1`, `n α √λ <= 1`.
    pub fn check_theory_assumptions(&self) -> Result<()> {
        let half = S::of(0.5);
        let lam = self.kernel.lambda();
        if !(self.eta1 < half && lam < half && self.gamma < half) {
            return Err(Error::InvalidParameter("eta1, lambda and gamma must be below 1/2".into()));
        }
        if self.alpha < S::one() {
            return Err(Error::InvalidParameter("alpha must be at least 1".into()));
        }
        if S::of_usize(self.dim) * self.alpha * lam.sqrt() > S::one() {
            return Err(Error::InvalidParameter("n alpha sqrt(lambda) must not exceed 1".into()));
        }
        Ok(())
    }

    /// Same preset and overrides for a new horizon (used after a restart).
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut p = Self::from_preset(self.preset, self.dim, horizon, self.overrides)?;
        p.focus_primitive = self.focus_primitive;
        Ok(p)
    }

    /// Radius `10 n α λ + 20 √λ ε` of `Ω_t` in the `Cov(p_t)` norm.
    pub fn omega_radius(&self) -> S {
        let lam = self.kernel.lambda();
        S::of(10.0) * S::of_usize(self.dim) * self.alpha * lam + S::of(20.0) * lam.sqrt() * self.kernel.eps()
    }

    /// `β / η₁`.
    pub fn restart_threshold(&self) -> S {
        self.beta.value(self.dim) / self.eta1
    }

    /// `5 n log₂T`: the number of cuts under which `η_T / η₁ <= e` is guaranteed
    /// for the theory `γ`.
    pub fn cut_budget(&self) -> usize {
        (5.0 * self.dim as f64 * (self.horizon.max(2) as f64).log2()).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McmcConfig {
    /// Draws of `p_t` per round for moments and `u`.
    pub samples: usize,
    /// Draws averaged into the shifted core mean.
    pub core_samples: usize,
    pub volume_samples: usize,
    pub chain: ChainConfig,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            samples: 512,
            core_samples: 64,
            volume_samples: 2048,
            chain: ChainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Grid { resolution: usize },
    Mcmc(McmcConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub mode: Mode,
    /// Interior starts of the restart search.
    pub restart_starts: usize,
    /// Probe points per facet direction in the restart search.
    pub facet_points: usize,
}

pub const DEFAULT_GRID_RESOLUTION: usize = 64;

impl EngineConfig {
    /// Grid backend for `n <= 2`, hit-and-run otherwise.
    pub fn for_dim(dim: usize) -> Self {
        let mode = if dim <= 2 {
            Mode::Grid {
                resolution: DEFAULT_GRID_RESOLUTION,
            }
        } else {
            Mode::Mcmc(McmcConfig::default())
        };
        Self {
            mode,
            restart_starts: 16,
            facet_points: 33,
        }
    }
}

/// Test hooks for a single step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepHooks {
    /// Treat the play as outside `Ω_t` regardless of its position.
    pub force_outside_omega: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct GridBackend<S> {
    lo: Vec<S>,
    hi: Vec<S>,
    resolution: usize,
    density: GridDensity<S>,
    /// `Q` on every cell, shifted so its minimum over `F` is zero.
    q: Vec<S>,
    /// `L̃` on every cell.
    ltilde: Vec<S>,
    in_focus: Vec<bool>,
}

impl<S: Real> GridBackend<S> {
    fn build(focus: &FocusRegion<S>, bumps: &BumpSum<S>, lo: Vec<S>, hi: Vec<S>, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidParameter("grid resolution must be at least 2".into()));
        }
        let mut density = GridDensity::uniform_box(resolution, &lo, &hi)?;
        let pts: Vec<Vec<S>> = density.points().map(|p| p.to_vec()).collect();
        let q: Vec<S> = pts.iter().map(|y| bumps.q(y)).collect();
        let ltilde = pts.iter().map(|y| bumps.cumulative_estimate(y)).collect();
        let in_focus: Vec<bool> = pts.iter().map(|y| focus.contains(y)).collect();
        if !in_focus.iter().any(|&b| b) {
            return Err(Error::InfeasibleRegion("no grid cell lies in the focus region".into()));
        }
        let lw: Vec<S> = q
            .iter()
            .zip(&in_focus)
            .map(|(&v, &f)| if f { -v } else { S::neg_infinity() })
            .collect();
        let mut i = 0;
        density.set_log_weights(|_| {
            i += 1;
            lw[i - 1]
        });
        Ok(Self {
            lo,
            hi,
            resolution,
            density,
            q,
            ltilde,
            in_focus,
        })
    }

    fn focus_count(&self) -> usize {
        self.in_focus.iter().filter(|&&b| b).count()
    }

    /// Re-derives `p ∝ exp(-Q)` on `F` and shifts `Q` to minimum zero there.
    fn refresh(&mut self) -> S {
        let min = self
            .q
            .iter()
            .zip(&self.in_focus)
            .filter(|(_, &f)| f)
            .fold(S::infinity(), |m, (&v, _)| m.min(v));
        if min.is_finite() {
            self.q.iter_mut().for_each(|v| *v = *v - min);
        }
        let (q, f) = (&self.q, &self.in_focus);
        let mut i = 0;
        self.density.set_log_weights(|_| {
            let v = if f[i] { -q[i] } else { S::neg_infinity() };
            i += 1;
            v
        });
        if min.is_finite() {
            min
        } else {
            S::zero()
        }
    }

    /// Multilinear interpolation of cell values at `y` (clamped to the grid).
    fn interpolate(&self, values: &[S], y: &[S]) -> S {
        let n = self.lo.len();
        let res = self.resolution;
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut fracs = Vec::with_capacity(n);
        let mut strides = Vec::with_capacity(n);
        for k in 0..n {
            let h = (self.hi[k] - self.lo[k]) / S::of_usize(res);
            let s = (y[k] - self.lo[k]) / h - S::of(0.5);
            let i0 = s.floor().max(S::zero()).min(S::of_usize(res - 2));
            let frac = (s - i0).max(S::zero()).min(S::one());
            base += i0.to_usize().unwrap_or(0) * stride;
            fracs.push(frac);
            strides.push(stride);
            stride *= res;
        }
        let mut total = S::zero();
        for corner in 0..(1usize << n) {
            let mut w = S::one();
            let mut idx = base;
            for k in 0..n {
                if corner >> k & 1 == 1 {
                    w = w * fracs[k];
                    idx += strides[k];
                } else {
                    w = w * (S::one() - fracs[k]);
                }
            }
            if w > S::zero() {
                total = total + w * values[idx];
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
struct McmcBackend<S> {
    config: McmcConfig,
    chain: Option<Vec<S>>,
    /// Current draws of `p_t`.
    samples: Vec<Vec<S>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Backend<S> {
    Grid(GridBackend<S>),
    Mcmc(McmcBackend<S>),
}

/// Everything the learner carries between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState<S> {
    pub params: AlgoParams<S>,
    pub config: EngineConfig,
    pub body: ConvexBody<S>,
    /// Rounds since the last (re)start.
    pub round: usize,
    pub eta: S,
    /// Number of cuts since the last (re)start.
    pub cuts: usize,
    pub focus: FocusRegion<S>,
    /// `ℓ̃_1, ..., ℓ̃_t`; `Q` and `L̃` are sums over these.
    pub bumps: BumpSum<S>,
    /// Moments of the current `p_t`.
    pub mean: Vec<S>,
    pub covariance: Matrix<S>,
    backend: Backend<S>,
    facet_cache: Option<(usize, Vec<Vec<S>>)>,
}

/// A failed run together with every round completed before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Aborted<S> {
    pub error: Error,
    pub partial: RunTrace<S>,
}

impl<S> std::fmt::Display for Aborted<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted: {}", self.error)
    }
}

impl<S: std::fmt::Debug> std::error::Error for Aborted<S> {}

/// Outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub record: RoundRecord<S>,
    pub restart: bool,
}

impl<S: Real> EngineState<S> {
    /// Fresh state: `p_1` uniform on `K`, `F_1 = K`, `η = η₁`.
    pub fn new(body: ConvexBody<S>, params: AlgoParams<S>, config: EngineConfig) -> Result<Self> {
        body.validate()?;
        if body.dim() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.dim,
                found: body.dim(),
            });
        }
        let focus = FocusRegion::new(body.clone());
        let bumps = BumpSum::new();
        let backend = match config.mode {
            Mode::Grid { resolution } => {
                if params.dim > 2 {
                    return Err(Error::Unsupported("grid mode needs n <= 2".into()));
                }
                let (lo, hi) = body.bounding_box();
                Backend::Grid(GridBackend::build(&focus, &bumps, lo, hi, resolution)?)
            }
            Mode::Mcmc(mc) => {
                if mc.samples < params.dim + 2 {
                    return Err(Error::InvalidParameter("too few moment samples per round".into()));
                }
                Backend::Mcmc(McmcBackend {
                    config: mc,
                    chain: None,
                    samples: Vec::new(),
                })
            }
        };
        let mut state = Self {
            eta: params.eta1,
            params,
            config,
            body,
            round: 0,
            cuts: 0,
            focus,
            bumps,
            mean: Vec::new(),
            covariance: Matrix::zeros(0, 0),
            backend,
            facet_cache: None,
        };
        if let Backend::Grid(g) = &state.backend {
            state.mean = g.density.mean();
            state.covariance = g.density.covariance();
        }
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    /// `η₁ (1 + γ)^N`.
    pub fn scheduled_eta(&self) -> S {
        self.params.eta1 * (S::one() + self.params.gamma).powi(self.cuts as i32)
    }

    /// `x ∈ K` and `‖x - μ‖_{Cov^{-1}} <= 10 n α λ + 20 √λ ε`.
    pub fn omega_contains(&self, x: &[S]) -> Result<bool> {
        if !self.body.contains(x) {
            return Ok(false);
        }
        Ok(mahalanobis_norm(x, &self.mean, &self.covariance)? <= self.params.omega_radius())
    }

    /// The `Ω_t` ellipsoid (intersect with `K` for the region itself).
    pub fn omega_region(&self) -> Result<Ellipsoid<S>> {
        Ellipsoid::new(self.mean.clone(), &self.covariance, self.params.omega_radius())
    }

    /// Density of the current `p_t` when it is an exact grid.
    pub fn grid_density(&self) -> Option<&GridDensity<S>> {
        match &self.backend {
            Backend::Grid(g) => Some(&g.density),
            Backend::Mcmc(_) => None,
        }
    }

    /// `L̃` at `y`: interpolated from the grid or summed over the bumps.
    pub fn cumulative_estimate(&self, y: &[S]) -> S {
        match &self.backend {
            Backend::Grid(g) => g.interpolate(&g.ltilde, y),
            Backend::Mcmc(_) => self.bumps.cumulative_estimate(y),
        }
    }

    /// Minimum of `Q` over the reference set (grid cells in `F`, or the
    /// current draws in MCMC mode); zero after every round.
    pub fn q_reference_min(&self) -> S {
        match &self.backend {
            Backend::Grid(g) => g
                .q
                .iter()
                .zip(&g.in_focus)
                .filter(|(_, &f)| f)
                .fold(S::infinity(), |m, (&v, _)| m.min(v)),
            Backend::Mcmc(m) => m
                .samples
                .iter()
                .take(self.config.restart_starts)
                .map(|y| self.bumps.q(y))
                .fold(S::infinity(), |a, b| a.min(b)),
        }
    }

    pub fn step(
        &mut self,
        t: usize,
        env: &dyn LossOracle<S>,
        streams: &mut RunStreams,
        trace: &mut RunTrace<S>,
    ) -> Result<StepOutcome<S>> {
        self.step_with(t, env, streams, trace, StepHooks::default())
    }

    /// One round: play from `K[p_t] p_t`, estimate, update `p`, test the focus
    /// region and the restart condition.
    pub fn step_with(
        &mut self,
        t: usize,
        env: &dyn LossOracle<S>,
        streams: &mut RunStreams,
        trace: &mut RunTrace<S>,
        hooks: StepHooks,
    ) -> Result<StepOutcome<S>> {
        self.round += 1;
        let mut focus_cut = false;
        if matches!(self.backend, Backend::Mcmc(_)) {
            self.refresh_mcmc_samples(streams)?;
            if self.round > 1 {
                focus_cut = self.update_focus(streams)?;
                if focus_cut {
                    self.refresh_mcmc_samples(streams)?;
                }
            }
        }
        let lam = self.params.kernel.lambda();
        let eta = self.eta;
        let (x, core) = self.draw_play(streams)?;
        let in_body = self.body.contains(&x);
        let played = if in_body { x.clone() } else { self.body.project(&x) };
        let loss = trace.receive(env.raw_query(t, &played, &mut streams.env));
        let estimator_loss = if in_body { loss } else { S::zero() };
        let in_omega = !hooks.force_outside_omega && self.omega_contains(&x)?;

        let u = match &mut self.backend {
            Backend::Grid(g) => {
                let logk = kernel_log_densities(&core, lam, &x, g.density.points());
                let log_u = log_sum_exp(g.density.log_weights().iter().zip(&logk).map(|(&lw, &lk)| lw + lk));
                let floor = S::of(U_FLOOR).max(S::min_positive_value());
                let log_u = if log_u.is_finite() { log_u.max(floor.ln()) } else { floor.ln() };
                if in_omega && estimator_loss > S::zero() {
                    for ((qv, lv), &lk) in g.q.iter_mut().zip(g.ltilde.iter_mut()).zip(&logk) {
                        let b = estimator_loss * (lk - log_u).exp();
                        *qv = *qv + eta * b;
                        *lv = *lv + b;
                    }
                }
                log_u.exp().max(floor)
            }
            Backend::Mcmc(m) => estimate_u(&x, &m.samples, &core, lam)?.value,
        };
        let bump = make_bump(&x, estimator_loss, u, &core, lam, eta, in_omega)?;
        self.bumps.push(bump);

        match &mut self.backend {
            Backend::Grid(g) => {
                let shift = g.refresh();
                self.bumps.shift = self.bumps.shift + shift;
                self.mean = g.density.mean();
                self.covariance = g.density.covariance();
                focus_cut = self.update_focus(streams)?;
            }
            Backend::Mcmc(m) => {
                let reference: Vec<Vec<S>> = m.samples.iter().take(self.config.restart_starts).cloned().collect();
                self.bumps.normalize_on(&reference);
            }
        }
        if self.cuts > self.params.cut_budget() && self.params.preset == Preset::Theory {
            let msg = format!(
                "focus cuts ({}) exceed 5 n log2 T = {}; eta_T / eta_1 <= e is no longer guaranteed",
                self.cuts,
                self.params.cut_budget()
            );
            if !trace.warnings.contains(&msg) {
                trace.warnings.push(msg);
            }
        }
        let restart = self.restart_check()?;
        Ok(StepOutcome {
            record: RoundRecord {
                t,
                x,
                in_body,
                in_omega,
                loss,
                u,
                eta,
                focus_cut,
                restart,
            },
            restart,
        })
    }

    fn draw_play(&mut self, streams: &mut RunStreams) -> Result<(Vec<S>, GaussianCore<S>)> {
        let kp = self.params.kernel;
        let lam = kp.lambda();
        let rng = &mut streams.learner;
        let (sample, core) = match &mut self.backend {
            Backend::Grid(g) => {
                let dist = WeightedIndex::new(g.density.weights().iter().map(|w| w.f64()))
                    .map_err(|e| Error::InfeasibleRegion(format!("density has no mass: {e}")))?;
                let core = gaussian_core(&self.mean, &self.covariance, &kp)?;
                (g.density.point(dist.sample(rng)).to_vec(), core)
            }
            Backend::Mcmc(m) => {
                let k = m.config.core_samples.clamp(1, m.samples.len());
                let core = shifted_core(&m.samples[..k], &self.covariance, &kp)?;
                let n = self.params.dim;
                let start = m.chain.take().ok_or_else(|| Error::InfeasibleRegion("chain not started".into()))?;
                let bumps = &self.bumps;
                let ld = |y: &[S]| -bumps.q(y);
                let (draw, last) = hit_and_run(
                    &ld,
                    &self.focus,
                    start,
                    1,
                    0,
                    m.config.chain.thin_per_dim * n,
                    m.config.chain.knots,
                    rng,
                )?;
                m.chain = Some(last);
                (draw.into_iter().next().unwrap_or_default(), core)
            }
        };
        let c = core.sample(rng);
        let x = sample
            .iter()
            .zip(&c)
            .map(|(&xi, &ci)| lam * xi + (S::one() - lam) * ci)
            .collect();
        Ok((x, core))
    }

    fn refresh_mcmc_samples(&mut self, streams: &mut RunStreams) -> Result<()> {
        let Backend::Mcmc(m) = &mut self.backend else {
            return Ok(());
        };
        let n = self.params.dim;
        let (start, burn_in) = match m.chain.take() {
            Some(x) if self.focus.contains(&x) => (x, 0),
            _ => (self.focus.interior_point()?, m.config.chain.burn_in_per_dim * n),
        };
        let bumps = &self.bumps;
        let ld = |y: &[S]| -bumps.q(y);
        let (samples, last) = hit_and_run(
            &ld,
            &self.focus,
            start,
            m.config.samples,
            burn_in,
            m.config.chain.thin_per_dim * n,
            m.config.chain.knots,
            &mut streams.learner,
        )?;
        let (mean, cov) = moments(&samples)?;
        m.chain = Some(last);
        m.samples = samples;
        self.mean = mean;
        self.covariance = cov;
        Ok(())
    }

    fn candidate_cut(&self) -> Result<Cut<S>> {
        Ok(match self.params.focus_primitive {
            FocusPrimitive::Box => Cut::Box(box_from_moments(&self.mean, &self.covariance, self.params.alpha)?),
            FocusPrimitive::Ellipsoid => {
                Cut::Ellipsoid(Ellipsoid::new(self.mean.clone(), &self.covariance, self.params.alpha)?)
            }
        })
    }

    /// Adds `B_p(α)` (or `E_p(α)`) to `F` when it holds less than 3/8 of
    /// `Vol(F)`, and then multiplies `η` by `1 + γ`.
    pub fn update_focus(&mut self, streams: &mut RunStreams) -> Result<bool> {
        let cut = self.candidate_cut()?;
        let ratio = match &self.backend {
            Backend::Grid(g) => {
                let total = g.focus_count();
                let inside = g
                    .density
                    .points()
                    .zip(&g.in_focus)
                    .filter(|(y, &f)| f && cut.contains(y))
                    .count();
                S::of_usize(inside) / S::of_usize(total.max(1))
            }
            Backend::Mcmc(m) => volume_ratio(&self.focus, &cut, m.config.volume_samples, &m.config.chain, &mut streams.learner)?,
        };
        if ratio >= S::of(VOLUME_THRESHOLD) {
            return Ok(false);
        }
        self.focus.push(cut);
        self.cuts += 1;
        self.eta = self.eta * (S::one() + self.params.gamma);
        self.facet_cache = None;
        if let Backend::Grid(g) = &mut self.backend {
            let full = g.resolution.pow(self.params.dim as u32);
            let mut count = 0;
            for (f, y) in g.in_focus.iter_mut().zip(g.density.points()) {
                *f = *f && self.focus.contains(y);
                count += usize::from(*f);
            }
            if count * 4 < full {
                self.regrid()?;
            } else {
                let shift = g.refresh();
                self.bumps.shift = self.bumps.shift + shift;
            }
            if let Backend::Grid(g) = &self.backend {
                self.mean = g.density.mean();
                self.covariance = g.density.covariance();
            }
        }
        Ok(true)
    }

    /// Rebuilds the grid on the bounding box of `F`, re-evaluating `Q` and `L̃`
    /// from the stored bumps.
    fn regrid(&mut self) -> Result<()> {
        let Backend::Grid(old) = &self.backend else {
            return Ok(());
        };
        let resolution = old.resolution;
        let hs = self
            .focus
            .halfspaces()
            .ok_or_else(|| Error::Unsupported("grid mode needs a polyhedral focus region".into()))?;
        let (lo, hi) = match self.focus.cuts.iter().any(|c| matches!(c, Cut::Ellipsoid(_))) {
            true => self.body.bounding_box(),
            false => ConvexBody::Polytope(Polytope::new(self.params.dim, hs)?).bounding_box(),
        };
        let mut g = GridBackend::build(&self.focus, &self.bumps, lo, hi, resolution)?;
        let shift = g.refresh();
        self.bumps.shift = self.bumps.shift + shift;
        self.backend = Backend::Grid(g);
        Ok(())
    }

    /// Probe points on `∂F ∩ int(K)`: each facet's center and, along each
    /// in-facet direction, `facet_points` equispaced chord points.
    pub fn facet_probes(&mut self) -> Result<Vec<Vec<S>>> {
        if let Some((cuts, pts)) = &self.facet_cache {
            if *cuts == self.focus.cuts.len() {
                return Ok(pts.clone());
            }
        }
        let mut pts = Vec::new();
        for facet in boundary_facets(&self.focus)? {
            let ConvexBody::Polytope(poly) = facet else { continue };
            let Ok((center, _)) = poly.chebyshev_center() else { continue };
            pts.push(center.clone());
            let normal = &poly.equalities[0].normal;
            let m = self.config.facet_points.max(2);
            for d in complement_basis(normal) {
                if let Some((lo, hi)) = poly.chord(&center, &d) {
                    for k in 0..m {
                        let s = lo + (hi - lo) * S::of_usize(k) / S::of_usize(m - 1);
                        pts.push(center.iter().zip(&d).map(|(&c, &di)| c + s * di).collect());
                    }
                }
            }
        }
        self.facet_cache = Some((self.focus.cuts.len(), pts.clone()));
        Ok(pts)
    }

    /// True iff `min_{∂F ∩ int K} L̃ - min_F L̃ <= β / η₁`. Without box cuts
    /// there is no facet inside `K` and the answer is false.
    pub fn restart_check(&mut self) -> Result<bool> {
        if self.focus.cuts.is_empty()
            || self.params.focus_primitive != FocusPrimitive::Box
            || self.body.halfspaces().is_none()
        {
            return Ok(false);
        }
        let probes = self.facet_probes()?;
        if probes.is_empty() {
            return Ok(false);
        }
        let (boundary_min, interior_min) = match &self.backend {
            Backend::Grid(g) => {
                let b = probes
                    .iter()
                    .map(|y| g.interpolate(&g.ltilde, y))
                    .fold(S::infinity(), |a, v| a.min(v));
                let i = g
                    .ltilde
                    .iter()
                    .zip(&g.in_focus)
                    .filter(|(_, &f)| f)
                    .fold(S::infinity(), |a, (&v, _)| a.min(v));
                (b, i)
            }
            Backend::Mcmc(m) => {
                let bumps = &self.bumps;
                let f = |y: &[S]| bumps.cumulative_estimate(y);
                let scale = self.body.diameter_bound();
                let mut b = S::infinity();
                for facet in boundary_facets(&self.focus)? {
                    let ConvexBody::Polytope(poly) = facet else { continue };
                    let Ok((center, _)) = poly.chebyshev_center() else { continue };
                    let dirs = complement_basis(&poly.equalities[0].normal);
                    let (_, v) = compass_minimize(&f, &|y: &[S]| poly.contains(y), center, &dirs, scale);
                    b = b.min(v);
                }
                for p in &probes {
                    b = b.min(f(p));
                }
                let dirs: Vec<Vec<S>> = (0..self.params.dim)
                    .map(|k| {
                        let mut e = vec![S::zero(); self.params.dim];
                        e[k] = S::one();
                        e
                    })
                    .collect();
                let mut i = S::infinity();
                let focus = &self.focus;
                let starts: Vec<Vec<S>> = m.samples.iter().take(self.config.restart_starts).cloned().collect();
                for s in starts {
                    let (_, v) = compass_minimize(&f, &|y: &[S]| focus.contains(y), s, &dirs, scale);
                    i = i.min(v);
                }
                (b, i)
            }
        };
        let interior_min = interior_min.min(boundary_min);
        Ok(boundary_min - interior_min <= self.params.restart_threshold())
    }
}

/// Compass search for the minimum of `f` over `{contains}`, moving along
/// `±dirs`; steps halve from `scale / 4` down to `1e-6 scale`.
pub fn compass_minimize<S: Real>(
    f: &dyn Fn(&[S]) -> S,
    contains: &dyn Fn(&[S]) -> bool,
    start: Vec<S>,
    dirs: &[Vec<S>],
    scale: S,
) -> (Vec<S>, S) {
    let mut x = start;
    let mut fx = f(&x);
    let mut step = scale / S::of(4.0);
    let floor = scale * S::of(1e-6);
    while step > floor {
        let mut improved = false;
        for d in dirs {
            for sign in [S::one(), -S::one()] {
                let y: Vec<S> = x.iter().zip(d).map(|(&a, &b)| a + sign * step * b).collect();
                if contains(&y) {
                    let fy = f(&y);
                    if fy < fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step = step * S::of(0.5);
        }
    }
    (x, fx)
}

/// Runs rounds `1..=T`; a restart discards the state and continues as a fresh
/// run on the remaining horizon.
pub fn run<S: Real>(
    env: &dyn LossOracle<S>,
    params: &AlgoParams<S>,
    config: EngineConfig,
    streams: &mut RunStreams,
) -> std::result::Result<RunTrace<S>, Aborted<S>> {
    let mut trace = RunTrace::new(params.dim);
    let horizon = params.horizon;
    let abort = |error: Error, trace: &mut RunTrace<S>| Aborted {
        error,
        partial: std::mem::replace(trace, RunTrace::new(params.dim)),
    };
    let mut state = match EngineState::new(env.body().clone(), *params, config) {
        Ok(s) => s,
        Err(e) => return Err(abort(e, &mut trace)),
    };
    for t in 1..=horizon {
        let outcome = match state.step(t, env, streams, &mut trace) {
            Ok(o) => o,
            Err(e) => {
                trace.finish();
                return Err(abort(e, &mut trace));
            }
        };
        let restart = outcome.restart && t < horizon;
        let mut record = outcome.record;
        record.restart = restart;
        trace.push(record);
        if restart {
            trace.restart_times.push(t);
            let fresh = params
                .with_horizon(horizon - t)
                .and_then(|p| EngineState::new(env.body().clone(), p, config));
            match fresh {
                Ok(s) => state = s,
                Err(e) => return Err(abort(e, &mut trace)),
            }
        }
    }
    trace.finish();
    Ok(trace)
}

/// Per-point slack of the exponential-weights inequality
/// `Σ ⟨p_t - δ_x, f_t⟩ <= Σ (log p_{t+1}(x) - log p_t(x)) / η_t + Σ η_t ⟨p_t, f_t²⟩`
/// (right side minus left side) for every cell `x` of the last region.
///
/// `p_1` is uniform on `regions[0]`; `p_{t+1} ∝ p_t exp(-η_t f_t)` restricted
/// to `regions[t]`. Regions must be nested and `losses` nonnegative.
pub fn telescoping_slack<S: Real>(losses: &[Vec<S>], etas: &[S], regions: &[Vec<bool>]) -> Result<Vec<(usize, S)>> {
    let rounds = losses.len();
    if etas.len() != rounds || regions.len() != rounds + 1 {
        return Err(Error::DimensionMismatch {
            expected: rounds + 1,
            found: regions.len(),
        });
    }
    let m = regions[0].len();
    let mut p = GridDensity::from_parts(
        1,
        (0..m).map(S::of_usize).collect(),
        regions[0].iter().map(|&f| if f { S::zero() } else { S::neg_infinity() }).collect(),
        S::one(),
    );
    let mut lhs = vec![S::zero(); m];
    let mut rhs = vec![S::zero(); m];
    for t in 0..rounds {
        let f = &losses[t];
        let w = p.weights().to_vec();
        let mean_f: S = w.iter().zip(f).map(|(&a, &b)| a * b).sum();
        let mean_f2: S = w.iter().zip(f).map(|(&a, &b)| a * b * b).sum();
        let before = p.log_weights().to_vec();
        p.exp_update(f, etas[t]);
        let keep = &regions[t + 1];
        let mut i = 0;
        let lw = p.log_weights().to_vec();
        p.set_log_weights(|_| {
            let v = if keep[i] { lw[i] } else { S::neg_infinity() };
            i += 1;
            v
        });
        for x in 0..m {
            lhs[x] = lhs[x] + mean_f - f[x];
            rhs[x] = rhs[x] + (p.log_weights()[x] - before[x]) / etas[t] + etas[t] * mean_f2;
        }
    }
    Ok((0..m)
        .filter(|&x| regions[rounds][x])
        .map(|x| (x, rhs[x] - lhs[x]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{ConstantLoss, LinearLoss};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> ConvexBody<f64> {
        ConvexBody::unit_cube(2)
    }

    fn small_grid() -> EngineConfig {
        EngineConfig {
            mode: Mode::Grid { resolution: 24 },
            restart_starts: 16,
            facet_points: 9,
        }
    }

    #[test]
    fn presets_match_formulas() {
        let p = AlgoParams::<f64>::practical(2, 20_000).unwrap();
        assert!((p.kernel.lambda() - 0.05).abs() < 1e-15);
        assert!((p.kernel.sigma2() - 1.0 / (2.0 * 20_000f64.ln())).abs() < 1e-15);
        assert!((p.eta1 - 1.0 / 200.0).abs() < 1e-15);
        assert_eq!(p.alpha, 8.0);
        let eps = theory_eps::<f64>();
        let r = 10.0 * 2.0 * 8.0 * 0.05 + 20.0 * 0.05f64.sqrt() * eps;
        assert!((p.omega_radius() - r).abs() < 1e-12);
        assert!((p.restart_threshold() - 800.0).abs() < 1e-9);
        let p = AlgoParams::<f64>::practical(8, 100).unwrap();
        assert!((p.kernel.lambda() - 1.0 / 32.0).abs() < 1e-15);

        let th = AlgoParams::<f64>::theory(2, 20_000).unwrap();
        let lt = 20_000f64.ln();
        let alpha = (2.0 * std::f64::consts::E).powi(17) * 4.0 * lt * lt;
        assert!((th.alpha / alpha - 1.0).abs() < 1e-12);
        let lam = eps.powi(4) / (1e6 * 16.0 * alpha * alpha * lt * lt);
        assert!((th.kernel.lambda() / lam - 1.0).abs() < 1e-12);
        assert!((th.gamma - 1.0 / (10.0 * 20_000f64.log2())).abs() < 1e-15);
        assert!(th.omega_radius() > 0.0 && th.omega_radius() < 1e-20);
        assert_eq!(BetaRule::<f64>::PseudoCode.value(3), 2.0);
        assert_eq!(BetaRule::PerDimension(1.5).value(4), 6.0);
    }

    #[test]
    fn overrides_survive_restart_rescaling() {
        let o = ParamOverrides {
            gamma: Some(0.3),
            ..Default::default()
        };
        let p = AlgoParams::<f64>::from_preset(Preset::Practical, 2, 1000, o).unwrap();
        let q = p.with_horizon(400).unwrap();
        assert_eq!(q.gamma, 0.3);
        assert!((q.eta1 - 1.0 / 800f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_environment_leaves_density_uniform() {
        let env = ConstantLoss::new(square(), 0.0);
        let params = AlgoParams::practical(2, 50).unwrap();
        let mut state = EngineState::new(square(), params, small_grid()).unwrap();
        let mut streams = RunStreams::new(1, 0);
        let mut trace = RunTrace::new(2);
        let before = state.grid_density().unwrap().weights().to_vec();
        for t in 1..=5 {
            let o = state.step(t, &env, &mut streams, &mut trace).unwrap();
            trace.push(o.record);
        }
        let after = state.grid_density().unwrap().weights();
        assert!(before.iter().zip(after).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn linear_loss_tilts_density() {
        // loss increasing in x₁: in expectation one step moves the mean toward smaller
        // x₁; a small η keeps the update in its linear regime
        let env = LinearLoss::new(square(), vec![1.0, 0.0]).unwrap();
        let o = ParamOverrides {
            lambda: Some(0.45),
            eta1: Some(0.01),
            ..Default::default()
        };
        let params = AlgoParams::from_preset(Preset::Practical, 2, 50, o).unwrap();
        let shifts: Vec<f64> = (0..2000)
            .map(|seed| {
                let mut state = EngineState::new(square(), params, small_grid()).unwrap();
                let mut streams = RunStreams::new(seed, 0);
                let mut trace = RunTrace::new(2);
                let m0 = state.mean[0];
                state.step(1, &env, &mut streams, &mut trace).unwrap();
                state.mean[0] - m0
            })
            .collect();
        let (m, se) = crate::stats::mean_stderr(&shifts);
        assert!(m < -2.0 * se, "{m} ± {se}");
    }

    #[test]
    fn forced_outside_omega_gives_zero_bump() {
        let env = ConstantLoss::new(square(), 0.7);
        let params = AlgoParams::practical(2, 50).unwrap();
        let mut state = EngineState::new(square(), params, small_grid()).unwrap();
        let mut streams = RunStreams::new(3, 0);
        let mut trace = RunTrace::new(2);
        let before = state.grid_density().unwrap().weights().to_vec();
        let hooks = StepHooks {
            force_outside_omega: true,
        };
        let o = state.step_with(1, &env, &mut streams, &mut trace, hooks).unwrap();
        assert!(!o.record.in_omega);
        assert_eq!(state.bumps.bumps[0].weight, 0.0);
        assert_eq!(state.bumps.bumps[0].value(&[0.5, 0.5]), 0.0);
        assert_eq!(state.grid_density().unwrap().weights(), &before[..]);
    }

    #[test]
    fn concentrated_density_triggers_cut() {
        let params = AlgoParams::practical(2, 1000).unwrap();
        let mut state = EngineState::new(square(), params, small_grid()).unwrap();
        if let Backend::Grid(g) = &mut state.backend {
            for (q, y) in g.q.iter_mut().zip(g.density.points()) {
                *q = 2000.0 * ((y[0] - 0.1).powi(2) + (y[1] - 0.1).powi(2));
            }
            g.refresh();
            state.mean = g.density.mean();
            state.covariance = g.density.covariance();
        }
        let mut streams = RunStreams::new(4, 0);
        assert!(state.update_focus(&mut streams).unwrap());
        assert_eq!(state.cuts, 1);
        assert!((state.eta - params.eta1 * 1.1).abs() < 1e-15);
        assert!((state.eta - state.scheduled_eta()).abs() < 1e-15);
        assert!(!state.focus.contains(&[0.9, 0.9]));
    }

    #[test]
    fn uniform_density_never_cut() {
        let params = AlgoParams::practical(2, 1000).unwrap();
        let mut state = EngineState::new(square(), params, small_grid()).unwrap();
        let mut streams = RunStreams::new(5, 0);
        assert!(!state.update_focus(&mut streams).unwrap());
        assert!(!state.restart_check().unwrap());
    }

    #[test]
    fn constant_estimate_with_facet_restarts() {
        let params = AlgoParams::practical(2, 1000).unwrap();
        let mut state = EngineState::new(square(), params, small_grid()).unwrap();
        state
            .focus
            .push(Cut::Box(box_from_moments(&[0.3, 0.3], &Matrix::identity(2), 0.2).unwrap()));
        assert!(state.restart_check().unwrap());
    }

    #[test]
    fn run_emits_every_round() {
        let env = ConstantLoss::new(square(), 0.4);
        let params = AlgoParams::practical(2, 0).unwrap();
        let mut streams = RunStreams::new(7, 0);
        assert!(run(&env, &params, small_grid(), &mut streams).unwrap().is_empty());
        let params = AlgoParams::practical(2, 200).unwrap();
        let trace = run(&env, &params, small_grid(), &mut streams).unwrap();
        assert_eq!(trace.len(), 200);
        assert!(trace.records.windows(2).all(|w| w[0].t + 1 == w[1].t));
        assert!(trace.records.iter().all(|r| (0.0..=1.0).contains(&r.loss)));
    }

    #[test]
    fn q_is_normalized_each_round() {
        let env = LinearLoss::new(square(), vec![0.3, 1.0]).unwrap();
        let params = AlgoParams::practical(2, 100).unwrap();
        let mut state = EngineState::new(square(), params, small_grid()).unwrap();
        let mut streams = RunStreams::new(8, 0);
        let mut trace = RunTrace::new(2);
        for t in 1..=30 {
            let o = state.step(t, &env, &mut streams, &mut trace).unwrap();
            trace.push(o.record);
            assert!(state.q_reference_min().abs() < 1e-9);
        }
    }

    #[test]
    fn mcmc_mode_runs_and_normalizes() {
        let env = LinearLoss::new(square(), vec![1.0, 0.5]).unwrap();
        let params = AlgoParams::practical(2, 6).unwrap();
        let config = EngineConfig {
            mode: Mode::Mcmc(McmcConfig {
                samples: 64,
                core_samples: 16,
                volume_samples: 128,
                chain: ChainConfig {
                    burn_in_per_dim: 50,
                    thin_per_dim: 2,
                    knots: 16,
                },
            }),
            restart_starts: 8,
            facet_points: 5,
        };
        let mut streams = RunStreams::new(9, 0);
        let trace = run(&env, &params, config, &mut streams).unwrap();
        assert_eq!(trace.len(), 6);
        assert!(trace.records.iter().all(|r| r.u > 0.0));
    }

    #[test]
    fn grid_and_bump_sum_agree() {
        let env = LinearLoss::new(square(), vec![1.0, -0.5]).unwrap();
        let params = AlgoParams::practical(2, 100).unwrap();
        let mut state = EngineState::new(square(), params, small_grid()).unwrap();
        let mut streams = RunStreams::new(10, 0);
        let mut trace = RunTrace::new(2);
        for t in 1..=20 {
            let o = state.step(t, &env, &mut streams, &mut trace).unwrap();
            trace.push(o.record);
        }
        let g = state.grid_density().unwrap();
        if let Backend::Grid(b) = &state.backend {
            for (i, y) in g.points().enumerate().step_by(37) {
                assert!((b.q[i] - state.bumps.q(y)).abs() < 1e-9 * (1.0 + b.q[i].abs()));
                assert!((b.ltilde[i] - state.bumps.cumulative_estimate(y)).abs() < 1e-9 * (1.0 + b.ltilde[i]));
            }
        }
    }

    #[test]
    fn telescoping_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = 50;
            let tau = 30;
            let losses: Vec<Vec<f64>> = (0..tau).map(|_| (0..m).map(|_| 3.0 * rng.random::<f64>()).collect()).collect();
            let etas: Vec<f64> = (0..tau).map(|_| 0.5 * rng.random::<f64>() + 0.01).collect();
            let mut regions = vec![vec![true; m]];
            for _ in 0..tau {
                let mut next = regions.last().unwrap().clone();
                if rng.random::<f64>() < 0.2 {
                    let drop = rng.random_range(0..m);
                    if next.iter().filter(|&&b| b).count() > 1 {
                        next[drop] = false;
                    }
                }
                regions.push(next);
            }
            for (_, s) in telescoping_slack(&losses, &etas, &regions).unwrap() {
                assert!(s >= -1e-9, "{s}");
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let env = LinearLoss::new(square(), vec![1.0, 0.2]).unwrap();
        let params = AlgoParams::practical(2, 100).unwrap();
        let a = run(&env, &params, small_grid(), &mut RunStreams::new(12, 0)).unwrap();
        let b = run(&env, &params, small_grid(), &mut RunStreams::new(12, 0)).unwrap();
        assert_eq!(a, b);
    }
}
