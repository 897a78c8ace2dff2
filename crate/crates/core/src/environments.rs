//! Loss oracles, best-fixed-point search, regret reports and the one-point
//! gradient baseline.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ConvexBody;
use crate::rng::RunStreams;
use crate::scalar::{dot, norm, random_direction, sub, Real};
use crate::stats::loglog_fit;
use crate::trace::{RoundRecord, RunTrace};

/// A sequence of convex losses `ℓ_t : K -> [0, 1]` observed through bandit feedback.
pub trait LossOracle<S: Real>: Send + Sync {
    fn body(&self) -> &ConvexBody<S>;

    fn dim(&self) -> usize {
        self.body().dim()
    }

    /// Lipschitz constant of every `full_loss(t, ·)`.
    fn lipschitz(&self) -> S;

    /// Noiseless loss at round `t` (1-based); convex in `x`.
    fn full_loss(&self, t: usize, x: &[S]) -> S;

    /// Observed value before clipping. Defaults to the noiseless loss.
    fn raw_query(&self, t: usize, x: &[S], _rng: &mut dyn RngCore) -> S {
        self.full_loss(t, x)
    }

    /// Observed value, clipped into `[0, 1]`.
    fn query(&self, t: usize, x: &[S], rng: &mut dyn RngCore) -> S {
        clip01(self.raw_query(t, x, rng))
    }

    /// `sum_{t=1}^{horizon} full_loss(t, x)`.
    fn cumulative_full_loss(&self, x: &[S], horizon: usize) -> S {
        (1..=horizon).map(|t| self.full_loss(t, x)).sum()
    }
}

pub fn clip01<S: Real>(v: S) -> S {
    if v.is_nan() {
        S::zero()
    } else {
        v.max(S::zero()).min(S::one())
    }
}

fn require_inside<S: Real>(body: &ConvexBody<S>, x: &[S], what: &str) -> Result<()> {
    if x.len() != body.dim() {
        return Err(Error::DimensionMismatch {
            expected: body.dim(),
            found: x.len(),
        });
    }
    if !body.contains(x) {
        return Err(Error::Environment(format!("{what} lies outside the body")));
    }
    Ok(())
}

/// `ℓ(x) = c`.
#[derive(Debug, Clone)]
pub struct ConstantLoss<S> {
    body: ConvexBody<S>,
    value: S,
}

impl<S: Real> ConstantLoss<S> {
    pub fn new(body: ConvexBody<S>, value: S) -> Self {
        Self {
            body,
            value: clip01(value),
        }
    }
}

impl<S: Real> LossOracle<S> for ConstantLoss<S> {
    fn body(&self) -> &ConvexBody<S> {
        &self.body
    }
    fn lipschitz(&self) -> S {
        S::zero()
    }
    fn full_loss(&self, _t: usize, _x: &[S]) -> S {
        self.value
    }
    fn cumulative_full_loss(&self, _x: &[S], horizon: usize) -> S {
        self.value * S::of_usize(horizon)
    }
}

/// Affine loss `θ·x` rescaled to span exactly `[0, 1]` over the body.
#[derive(Debug, Clone)]
pub struct LinearLoss<S> {
    body: ConvexBody<S>,
    direction: Vec<S>,
    low: S,
    span: S,
}

impl<S: Real> LinearLoss<S> {
    pub fn new(body: ConvexBody<S>, direction: Vec<S>) -> Result<Self> {
        if direction.len() != body.dim() {
            return Err(Error::DimensionMismatch {
                expected: body.dim(),
                found: direction.len(),
            });
        }
        let neg: Vec<S> = direction.iter().map(|&v| -v).collect();
        let high = body.support(&direction);
        let low = -body.support(&neg);
        let span = high - low;
        if !(span > S::zero()) || !span.is_finite() {
            return Err(Error::Environment("linear loss is constant or unbounded on the body".into()));
        }
        Ok(Self {
            body,
            direction,
            low,
            span,
        })
    }
}

impl<S: Real> LossOracle<S> for LinearLoss<S> {
    fn body(&self) -> &ConvexBody<S> {
        &self.body
    }
    fn lipschitz(&self) -> S {
        norm(&self.direction) / self.span
    }
    fn full_loss(&self, _t: usize, x: &[S]) -> S {
        clip01((dot(&self.direction, x) - self.low) / self.span)
    }
    fn cumulative_full_loss(&self, x: &[S], horizon: usize) -> S {
        self.full_loss(1, x) * S::of_usize(horizon)
    }
}

/// `ℓ(x) = ‖x - x*‖² / diam²`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss<S> {
    body: ConvexBody<S>,
    optimum: Vec<S>,
    diam: S,
}

impl<S: Real> QuadraticLoss<S> {
    pub fn new(body: ConvexBody<S>, optimum: Vec<S>) -> Result<Self> {
        require_inside(&body, &optimum, "quadratic optimum")?;
        let diam = body.diameter_bound();
        Ok(Self {
            body,
            optimum,
            diam,
        })
    }
}

impl<S: Real> LossOracle<S> for QuadraticLoss<S> {
    fn body(&self) -> &ConvexBody<S> {
        &self.body
    }
    fn lipschitz(&self) -> S {
        S::of(2.0) / self.diam
    }
    fn full_loss(&self, _t: usize, x: &[S]) -> S {
        let d = sub(x, &self.optimum);
        clip01(dot(&d, &d) / (self.diam * self.diam))
    }
    fn cumulative_full_loss(&self, x: &[S], horizon: usize) -> S {
        self.full_loss(1, x) * S::of_usize(horizon)
    }
}

/// `ℓ(x) = ‖x - x*‖ / diam` (`|x - x*|` on the unit interval).
#[derive(Debug, Clone)]
pub struct AbsLoss<S> {
    body: ConvexBody<S>,
    optimum: Vec<S>,
    diam: S,
}

impl<S: Real> AbsLoss<S> {
    pub fn new(body: ConvexBody<S>, optimum: Vec<S>) -> Result<Self> {
        require_inside(&body, &optimum, "optimum")?;
        let diam = body.diameter_bound();
        Ok(Self {
            body,
            optimum,
            diam,
        })
    }
}

impl<S: Real> LossOracle<S> for AbsLoss<S> {
    fn body(&self) -> &ConvexBody<S> {
        &self.body
    }
    fn lipschitz(&self) -> S {
        S::one() / self.diam
    }
    fn full_loss(&self, _t: usize, x: &[S]) -> S {
        clip01(norm(&sub(x, &self.optimum)) / self.diam)
    }
    fn cumulative_full_loss(&self, x: &[S], horizon: usize) -> S {
        self.full_loss(1, x) * S::of_usize(horizon)
    }
}

/// Inner loss plus i.i.d. uniform noise on `[-scale, scale]`, clipped on output.
pub struct StochasticLoss<S> {
    inner: Box<dyn LossOracle<S>>,
    noise_scale: S,
}

impl<S: Real> StochasticLoss<S> {
    pub fn new(inner: Box<dyn LossOracle<S>>, noise_scale: S) -> Result<Self> {
        if !(noise_scale >= S::zero()) {
            return Err(Error::Environment("noise scale must be nonnegative".into()));
        }
        Ok(Self { inner, noise_scale })
    }
}

impl<S: Real> LossOracle<S> for StochasticLoss<S> {
    fn body(&self) -> &ConvexBody<S> {
        self.inner.body()
    }
    fn lipschitz(&self) -> S {
        self.inner.lipschitz()
    }
    fn full_loss(&self, t: usize, x: &[S]) -> S {
        self.inner.full_loss(t, x)
    }
    fn raw_query(&self, t: usize, x: &[S], rng: &mut dyn RngCore) -> S {
        let base = self.inner.full_loss(t, x);
        if self.noise_scale == S::zero() {
            return base;
        }
        let u = S::of(rng.random::<f64>());
        base + self.noise_scale * (S::of(2.0) * u - S::one())
    }
    fn cumulative_full_loss(&self, x: &[S], horizon: usize) -> S {
        self.inner.cumulative_full_loss(x, horizon)
    }
}

/// Replaces the observed value on exactly `⌊fraction · horizon⌋` rounds,
/// chosen up front from a seed, by `1 - (true observation)`.
pub struct CorruptedLoss<S> {
    inner: Box<dyn LossOracle<S>>,
    rounds: HashSet<usize>,
}

impl<S: Real> CorruptedLoss<S> {
    pub fn new(inner: Box<dyn LossOracle<S>>, fraction: S, horizon: usize, seed: u64) -> Result<Self> {
        if !(fraction >= S::zero() && fraction <= S::one()) {
            return Err(Error::Environment("corruption fraction must lie in [0, 1]".into()));
        }
        let count = (fraction * S::of_usize(horizon)).floor().to_usize().unwrap_or(0).min(horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rounds = sample_indices(&mut rng, horizon, count)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        Ok(Self { inner, rounds })
    }

    pub fn corrupted_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_corrupted(&self, t: usize) -> bool {
        self.rounds.contains(&t)
    }
}

impl<S: Real> LossOracle<S> for CorruptedLoss<S> {
    fn body(&self) -> &ConvexBody<S> {
        self.inner.body()
    }
    fn lipschitz(&self) -> S {
        self.inner.lipschitz()
    }
    fn full_loss(&self, t: usize, x: &[S]) -> S {
        self.inner.full_loss(t, x)
    }
    fn raw_query(&self, t: usize, x: &[S], rng: &mut dyn RngCore) -> S {
        let honest = self.inner.raw_query(t, x, rng);
        if self.rounds.contains(&t) {
            S::one() - clip01(honest)
        } else {
            honest
        }
    }
    fn cumulative_full_loss(&self, x: &[S], horizon: usize) -> S {
        self.inner.cumulative_full_loss(x, horizon)
    }
}

/// `‖x - x_a‖ / diam` before `switch_round`, `‖x - x_b‖ / diam` from then on.
#[derive(Debug, Clone)]
pub struct MovingOptimum<S> {
    body: ConvexBody<S>,
    switch_round: usize,
    first: Vec<S>,
    second: Vec<S>,
    diam: S,
}

impl<S: Real> MovingOptimum<S> {
    pub fn new(body: ConvexBody<S>, switch_round: usize, first: Vec<S>, second: Vec<S>) -> Result<Self> {
        require_inside(&body, &first, "first optimum")?;
        require_inside(&body, &second, "second optimum")?;
        let diam = body.diameter_bound();
        Ok(Self {
            body,
            switch_round,
            first,
            second,
            diam,
        })
    }

    fn target(&self, t: usize) -> &[S] {
        if t < self.switch_round {
            &self.first
        } else {
            &self.second
        }
    }
}

impl<S: Real> LossOracle<S> for MovingOptimum<S> {
    fn body(&self) -> &ConvexBody<S> {
        &self.body
    }
    fn lipschitz(&self) -> S {
        S::one() / self.diam
    }
    fn full_loss(&self, t: usize, x: &[S]) -> S {
        clip01(norm(&sub(x, self.target(t))) / self.diam)
    }
    fn cumulative_full_loss(&self, x: &[S], horizon: usize) -> S {
        let before = horizon.min(self.switch_round.saturating_sub(1));
        let after = horizon - before;
        self.full_loss(1, x) * S::of_usize(before)
            + clip01(norm(&sub(x, &self.second)) / self.diam) * S::of_usize(after)
    }
}

/// Declarative environment description.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec<S> {
    Constant { value: S },
    Linear { direction: Vec<S> },
    Quadratic { optimum: Vec<S> },
    Abs { optimum: Vec<S> },
    Stochastic { inner: Box<EnvSpec<S>>, noise_scale: S },
    Corrupted { inner: Box<EnvSpec<S>>, fraction: S },
    MovingOptimum { switch_round: usize, first: Vec<S>, second: Vec<S> },
}

/// Builds the oracle; `seed` only drives the choice of corrupted rounds.
pub fn make_env<S: Real>(
    spec: &EnvSpec<S>,
    body: ConvexBody<S>,
    horizon: usize,
    seed: u64,
) -> Result<Box<dyn LossOracle<S>>> {
    Ok(match spec {
        EnvSpec::Constant { value } => Box::new(ConstantLoss::new(body, *value)),
        EnvSpec::Linear { direction } => Box::new(LinearLoss::new(body, direction.clone())?),
        EnvSpec::Quadratic { optimum } => Box::new(QuadraticLoss::new(body, optimum.clone())?),
        EnvSpec::Abs { optimum } => Box::new(AbsLoss::new(body, optimum.clone())?),
        EnvSpec::Stochastic { inner, noise_scale } => Box::new(StochasticLoss::new(
            make_env(inner, body, horizon, seed)?,
            *noise_scale,
        )?),
        EnvSpec::Corrupted { inner, fraction } => Box::new(CorruptedLoss::new(
            make_env(inner, body, horizon, seed)?,
            *fraction,
            horizon,
            seed,
        )?),
        EnvSpec::MovingOptimum {
            switch_round,
            first,
            second,
        } => Box::new(MovingOptimum::new(
            body,
            *switch_round,
            first.clone(),
            second.clone(),
        )?),
    })
}

/// Largest midpoint-convexity violation `f((a+b)/2) - (f(a)+f(b))/2` over
/// `pairs` random pairs in the body's bounding box (points outside the body
/// are projected in first).
pub fn convexity_violation<S: Real>(env: &dyn LossOracle<S>, t: usize, pairs: usize, rng: &mut dyn RngCore) -> S {
    let body = env.body();
    let (lo, hi) = body.bounding_box();
    let draw = |rng: &mut dyn RngCore| -> Vec<S> {
        let x: Vec<S> = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| l + (h - l) * S::of(rng.random::<f64>()))
            .collect();
        body.project(&x)
    };
    let mut worst = S::neg_infinity();
    for _ in 0..pairs {
        let a = draw(rng);
        let b = draw(rng);
        let m: Vec<S> = a.iter().zip(&b).map(|(&p, &q)| (p + q) * S::of(0.5)).collect();
        let v = env.full_loss(t, &m) - (env.full_loss(t, &a) + env.full_loss(t, &b)) * S::of(0.5);
        worst = worst.max(v);
    }
    worst
}

const BEST_GRID: usize = 1024;

/// Minimizer of the cumulative noiseless loss over the body, and its value.
///
/// For `n <= 2` a `1024^n` grid over the bounding box is scanned and the best
/// cell refined by compass search; above that projected subgradient descent
/// with finite-difference gradients runs from 10 starts.
pub fn best_fixed_point<S: Real>(env: &dyn LossOracle<S>, horizon: usize) -> (Vec<S>, S) {
    let body = env.body();
    let n = body.dim();
    let objective = |x: &[S]| env.cumulative_full_loss(x, horizon);
    let (lo, hi) = body.bounding_box();
    let start = if n <= 2 {
        let cells = BEST_GRID.pow(n as u32);
        let mut best: Option<(Vec<S>, S)> = None;
        let mut x = vec![S::zero(); n];
        for idx in 0..cells {
            let mut rest = idx;
            for k in 0..n {
                let i = rest % BEST_GRID;
                rest /= BEST_GRID;
                x[k] = lo[k] + (hi[k] - lo[k]) * (S::of_usize(i) + S::of(0.5)) / S::of_usize(BEST_GRID);
            }
            if !body.contains(&x) {
                continue;
            }
            let v = objective(&x);
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((x.clone(), v));
            }
        }
        best.map(|(x, _)| x)
            .unwrap_or_else(|| body.inner_ball().map(|(c, _)| c).unwrap_or(lo.clone()))
    } else {
        subgradient_start(body, &objective, &lo, &hi)
    };
    let step = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| (h - l) / S::of_usize(BEST_GRID))
        .fold(S::zero(), |m, v| m.max(v));
    compass_refine(body, &objective, start, step)
}

fn compass_refine<S: Real>(
    body: &ConvexBody<S>,
    objective: &dyn Fn(&[S]) -> S,
    mut x: Vec<S>,
    mut step: S,
) -> (Vec<S>, S) {
    let n = x.len();
    let mut fx = objective(&x);
    let mut dirs: Vec<Vec<S>> = Vec::new();
    for k in 0..n {
        for s in [S::one(), -S::one()] {
            let mut e = vec![S::zero(); n];
            e[k] = s;
            dirs.push(e);
        }
    }
    if n == 2 {
        let r = S::FRAC_1_SQRT_2();
        for (a, b) in [(r, r), (r, -r), (-r, r), (-r, -r)] {
            dirs.push(vec![a, b]);
        }
    }
    let floor = S::of(1e-10).max(S::epsilon() * S::of(8.0));
    while step > floor {
        let mut improved = false;
        for d in &dirs {
            let y: Vec<S> = x.iter().zip(d).map(|(&xi, &di)| xi + step * di).collect();
            if !body.contains(&y) {
                continue;
            }
            let fy = objective(&y);
            if fy < fx {
                x = y;
                fx = fy;
                improved = true;
                break;
            }
        }
        if !improved {
            step = step * S::of(0.5);
        }
    }
    (x, fx)
}

fn subgradient_start<S: Real>(
    body: &ConvexBody<S>,
    objective: &dyn Fn(&[S]) -> S,
    lo: &[S],
    hi: &[S],
) -> Vec<S> {
    let n = lo.len();
    let diam = body.diameter_bound();
    let h = diam * S::of(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let center = body.inner_ball().map(|(c, _)| c).unwrap_or_else(|_| lo.to_vec());
    let mut best = (center.clone(), objective(&center));
    for restart in 0..10 {
        let mut x = if restart == 0 {
            center.clone()
        } else {
            let raw: Vec<S> = lo
                .iter()
                .zip(hi)
                .map(|(&l, &u)| l + (u - l) * S::of(rng.random::<f64>()))
                .collect();
            body.project(&raw)
        };
        for k in 0..3000 {
            let fx = objective(&x);
            if fx < best.1 {
                best = (x.clone(), fx);
            }
            let mut g = vec![S::zero(); n];
            for i in 0..n {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] = a[i] + h;
                b[i] = b[i] - h;
                g[i] = (objective(&a) - objective(&b)) / (h + h);
            }
            let gn = norm(&g);
            if gn == S::zero() {
                break;
            }
            let step = diam * S::of(0.5) / S::of_usize(k + 1).sqrt();
            let y: Vec<S> = x.iter().zip(&g).map(|(&xi, &gi)| xi - step * gi / gn).collect();
            x = body.project(&y);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport<S> {
    pub horizon: usize,
    /// Sum of observed (clipped) losses.
    pub cumulative_loss: S,
    /// Sum of noiseless losses at the plays (projected onto the body).
    pub pseudo_cumulative_loss: S,
    pub best_fixed_loss: S,
    pub best_point: Vec<S>,
    /// `cumulative_loss - best_fixed_loss`.
    pub regret: S,
    /// `pseudo_cumulative_loss - best_fixed_loss`.
    pub pseudo_regret: S,
    /// Pseudo-regret at each requested checkpoint.
    pub checkpoints: Vec<(usize, S)>,
    /// Slope of `log max(pseudo_regret, 1)` against `log t` over the checkpoints.
    pub growth_exponent: Option<f64>,
}

/// Post-hoc regret of a trace against the environment's noiseless losses.
/// Plays outside the body are charged the loss at their projection.
pub fn regret_report<S: Real>(env: &dyn LossOracle<S>, trace: &RunTrace<S>, checkpoints: &[usize]) -> RegretReport<S> {
    let horizon = trace.len();
    let body = env.body();
    let mut prefix = Vec::with_capacity(horizon + 1);
    prefix.push(S::zero());
    for r in &trace.records {
        let x = if r.in_body && body.contains(&r.x) {
            r.x.clone()
        } else {
            body.project(&r.x)
        };
        let last = *prefix.last().unwrap_or(&S::zero());
        prefix.push(last + env.full_loss(r.t, &x));
    }
    let (best_point, best_fixed_loss) = best_fixed_point(env, horizon);
    let cumulative_loss = trace.cumulative_loss();
    let pseudo_cumulative_loss = prefix[horizon];
    let mut cps = Vec::new();
    for &c in checkpoints.iter().filter(|&&c| c >= 1 && c <= horizon) {
        let best = if c == horizon {
            best_fixed_loss
        } else {
            best_fixed_point(env, c).1
        };
        cps.push((c, prefix[c] - best));
    }
    let growth_exponent = if cps.len() >= 2 {
        let xs: Vec<f64> = cps.iter().map(|(c, _)| *c as f64).collect();
        let ys: Vec<f64> = cps.iter().map(|(_, r)| r.f64()).collect();
        loglog_fit(&xs, &ys, 1.0).map(|(s, _)| s)
    } else {
        None
    };
    RegretReport {
        horizon,
        cumulative_loss,
        pseudo_cumulative_loss,
        best_fixed_loss,
        best_point,
        regret: cumulative_loss - best_fixed_loss,
        pseudo_regret: pseudo_cumulative_loss - best_fixed_loss,
        checkpoints: cps,
        growth_exponent,
    }
}

/// Tuning of the one-point gradient baseline: `δ = delta_scale · T^{-1/4}`,
/// step `= step_scale · T^{-3/4}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkmParams<S> {
    pub delta_scale: S,
    pub step_scale: S,
}

impl<S: Real> Default for FkmParams<S> {
    fn default() -> Self {
        Self {
            delta_scale: S::one(),
            step_scale: S::one(),
        }
    }
}

/// Projected gradient descent with the spherical one-point gradient estimate.
///
/// The iterate lives in `c + s (K - c)` with `c` the inner-ball center and
/// `s = 1 - δ / r`, so `y + δ u` stays in `K`; if `δ >= r` the iterate is
/// pinned at `c` and plays are projected onto `K`.
pub fn fkm_baseline<S: Real>(
    env: &dyn LossOracle<S>,
    horizon: usize,
    params: FkmParams<S>,
    streams: &mut RunStreams,
) -> Result<RunTrace<S>> {
    let body = env.body();
    let n = body.dim();
    let mut trace = RunTrace::new(n);
    if horizon == 0 {
        return Ok(trace);
    }
    let (center, inradius) = body.inner_ball()?;
    let horizon_s = S::of_usize(horizon);
    let delta = params.delta_scale * horizon_s.powf(S::of(-0.25));
    let step = params.step_scale * horizon_s.powf(S::of(-0.75));
    let shrink = (S::one() - delta / inradius).max(S::zero());
    let project_shrunk = |y: &[S]| -> Vec<S> {
        if shrink == S::zero() {
            return center.clone();
        }
        let scaled: Vec<S> = y
            .iter()
            .zip(&center)
            .map(|(&yi, &ci)| ci + (yi - ci) / shrink)
            .collect();
        body.project(&scaled)
            .iter()
            .zip(&center)
            .map(|(&pi, &ci)| ci + shrink * (pi - ci))
            .collect()
    };
    let mut y = center.clone();
    for t in 1..=horizon {
        let u: Vec<S> = random_direction(n, &mut streams.learner);
        let raw_play: Vec<S> = y.iter().zip(&u).map(|(&yi, &ui)| yi + delta * ui).collect();
        let x = if body.contains(&raw_play) {
            raw_play
        } else {
            body.project(&raw_play)
        };
        let loss = trace.receive(env.raw_query(t, &x, &mut streams.env));
        let scale = S::of_usize(n) / delta * loss;
        let moved: Vec<S> = y.iter().zip(&u).map(|(&yi, &ui)| yi - step * scale * ui).collect();
        y = project_shrunk(&moved);
        trace.push(RoundRecord {
            t,
            x,
            in_body: true,
            in_omega: true,
            loss,
            u: S::zero(),
            eta: step,
            focus_cut: false,
            restart: false,
        });
    }
    trace.finish();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polytope;

    fn square() -> ConvexBody<f64> {
        ConvexBody::Polytope(Polytope::unit_cube(2))
    }

    #[test]
    fn quadratic_zero_at_optimum() {
        let env = QuadraticLoss::new(square(), vec![0.5, 0.5]).unwrap();
        assert_eq!(env.full_loss(1, &[0.5, 0.5]), 0.0);
        let (x, v) = best_fixed_point(&env, 100);
        assert!(v.abs() < 1e-12);
        assert!((x[0] - 0.5).abs() < 1e-5 && (x[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn optimum_outside_body_is_rejected() {
        assert!(QuadraticLoss::new(square(), vec![1.5, 0.5]).is_err());
        assert!(MovingOptimum::new(square(), 3, vec![0.1, 0.1], vec![2.0, 0.0]).is_err());
    }

    #[test]
    fn zero_noise_matches_full_loss() {
        let inner = Box::new(AbsLoss::new(ConvexBody::unit_interval(), vec![0.3]).unwrap());
        let env = StochasticLoss::new(inner, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..50 {
            let x = [i as f64 / 49.0];
            assert_eq!(env.query(i + 1, &x, &mut rng), env.full_loss(i + 1, &x));
        }
    }

    #[test]
    fn corruption_counts_and_identity() {
        let mk = || -> Box<dyn LossOracle<f64>> {
            Box::new(AbsLoss::new(ConvexBody::unit_interval(), vec![0.3]).unwrap())
        };
        let clean = CorruptedLoss::new(mk(), 0.0, 1000, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=1000 {
            let x = [(t as f64 * 0.37) % 1.0];
            assert_eq!(clean.query(t, &x, &mut rng), mk().query(t, &x, &mut rng));
        }
        let env = CorruptedLoss::new(mk(), 0.0377, 1000, 9).unwrap();
        assert_eq!(env.corrupted_rounds(), 37);
        let flipped = (1..=1000)
            .filter(|&t| {
                let x = [0.9];
                (env.query(t, &x, &mut rng) - (1.0 - 0.6)).abs() < 1e-12
            })
            .count();
        assert_eq!(flipped, 37);
    }

    #[test]
    fn queries_stay_in_unit_interval() {
        let inner = Box::new(AbsLoss::new(ConvexBody::unit_interval(), vec![0.0]).unwrap());
        let env = StochasticLoss::new(inner, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in 1..2000 {
            let v = env.query(t, &[rng.random::<f64>()], &mut rng);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn built_in_losses_are_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let specs = [
            EnvSpec::Linear { direction: vec![0.3, -1.0] },
            EnvSpec::Quadratic { optimum: vec![0.2, 0.7] },
            EnvSpec::Abs { optimum: vec![0.9, 0.1] },
            EnvSpec::MovingOptimum { switch_round: 5, first: vec![0.1, 0.1], second: vec![0.9, 0.8] },
        ];
        for spec in &specs {
            let env = make_env(spec, square(), 10, 0).unwrap();
            for t in [1, 9] {
                assert!(convexity_violation(env.as_ref(), t, 1000, &mut rng) <= 1e-9);
            }
        }
    }

    #[test]
    fn moving_optimum_minimizer_on_segment() {
        let a = vec![0.2, 0.3];
        let b = vec![0.8, 0.6];
        let env = MovingOptimum::new(square(), 51, a.clone(), b.clone()).unwrap();
        let (x, v) = best_fixed_point(&env, 100);
        // distance from x to segment [a, b]
        let ab = sub(&b, &a);
        let s = (dot(&sub(&x, &a), &ab) / dot(&ab, &ab)).clamp(0.0, 1.0);
        let proj: Vec<f64> = a.iter().zip(&ab).map(|(p, d)| p + s * d).collect();
        assert!(norm(&sub(&x, &proj)) < 1e-6);
        let expected = 100.0 * norm(&ab) / 2f64.sqrt() / 2.0;
        assert!((v - expected).abs() < 1e-6);
    }

    #[test]
    fn constant_loss_best_value() {
        let env = ConstantLoss::new(square(), 0.25);
        let (_, v) = best_fixed_point(&env, 40);
        assert_eq!(v, 10.0);
    }

    #[test]
    fn subgradient_path_in_three_dimensions() {
        let body = ConvexBody::Polytope(Polytope::unit_cube(3));
        let env = AbsLoss::new(body, vec![0.2, 0.6, 0.9]).unwrap();
        let (x, v) = best_fixed_point(&env, 10);
        assert!(v < 1e-4, "{v} at {x:?}");
    }

    #[test]
    fn fkm_plays_stay_feasible() {
        let env = LinearLoss::new(square(), vec![1.0, 1.0]).unwrap();
        let mut streams = RunStreams::new(3, 0);
        let trace = fkm_baseline(&env, 0, FkmParams::default(), &mut streams).unwrap();
        assert!(trace.is_empty());
        // delta larger than the inradius 0.5
        let params = FkmParams { delta_scale: 4.0, step_scale: 1.0 };
        let trace = fkm_baseline(&env, 16, params, &mut streams).unwrap();
        assert_eq!(trace.len(), 16);
        assert!(trace.records.iter().all(|r| env.body().contains(&r.x)));
    }

    #[test]
    fn regret_identity_holds() {
        let env = AbsLoss::new(ConvexBody::unit_interval(), vec![0.3]).unwrap();
        let mut streams = RunStreams::new(5, 0);
        let trace = fkm_baseline(&env, 500, FkmParams::default(), &mut streams).unwrap();
        let rep = regret_report(&env, &trace, &[50, 500]);
        assert_eq!(rep.regret, rep.cumulative_loss - rep.best_fixed_loss);
        assert_eq!(rep.checkpoints.len(), 2);
        assert!(rep.growth_exponent.is_some());
    }
}
