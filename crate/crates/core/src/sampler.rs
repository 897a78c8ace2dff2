//! Sampling from `p ∝ exp(-Q) 1{F}`: hit-and-run for the analytic bump sum,
//! exact grids for `n <= 2`, and the Monte Carlo volume-ratio test.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{regularize, Cut, FocusRegion};
use crate::grid::GridDensity;
use crate::kernel_hd::GaussianBump;
use crate::linalg::Matrix;
use crate::scalar::{random_direction, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    /// Burn-in steps per dimension on a cold start.
    pub burn_in_per_dim: usize,
    /// Chain steps per dimension between kept draws.
    pub thin_per_dim: usize,
    /// Knots of the discretized line density.
    pub knots: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in_per_dim: 500,
            thin_per_dim: 10,
            knots: 64,
        }
    }
}

/// `Q(y) = Σ_s η_s ℓ̃_s(y) - shift`, together with `L̃(y) = Σ_s ℓ̃_s(y)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BumpSum<S> {
    pub bumps: Vec<GaussianBump<S>>,
    pub shift: S,
}

impl<S: Real> BumpSum<S> {
    pub fn new() -> Self {
        Self {
            bumps: Vec::new(),
            shift: S::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.bumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bumps.is_empty()
    }

    pub fn push(&mut self, bump: GaussianBump<S>) {
        self.bumps.push(bump);
    }

    pub fn q(&self, y: &[S]) -> S {
        self.bumps
            .iter()
            .filter(|b| b.weight > S::zero())
            .map(|b| b.eta * b.value(y))
            .sum::<S>()
            - self.shift
    }

    pub fn cumulative_estimate(&self, y: &[S]) -> S {
        self.bumps
            .iter()
            .filter(|b| b.weight > S::zero())
            .map(|b| b.value(y))
            .sum()
    }

    /// Shifts `Q` so its minimum over `points` is zero.
    pub fn normalize_on(&mut self, points: &[Vec<S>]) {
        if points.is_empty() {
            return;
        }
        let min = points
            .iter()
            .map(|y| self.q(y))
            .fold(S::infinity(), |a, b| a.min(b));
        if min.is_finite() {
            self.shift = self.shift + min;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Density<S> {
    Grid(GridDensity<S>),
    Analytic {
        q: BumpSum<S>,
        focus: FocusRegion<S>,
        /// Last state of the sampling chain, reused as a warm start.
        chain: Option<Vec<S>>,
    },
}

/// Hit-and-run on `F` targeting `exp(log_density)`.
///
/// Each step draws a uniform direction, computes the exact chord through
/// `F`, and proposes a point on the chord from a piecewise-constant envelope
/// over `knots` equispaced knots; a Metropolis–Hastings correction against
/// the envelope makes the target exact.
#[allow(clippy::too_many_arguments)]
pub fn hit_and_run<S: Real, R: Rng + ?Sized>(
    log_density: &dyn Fn(&[S]) -> S,
    focus: &FocusRegion<S>,
    start: Vec<S>,
    count: usize,
    burn_in: usize,
    thin: usize,
    knots: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<S>>, Vec<S>)> {
    if !focus.contains(&start) {
        return Err(Error::InfeasibleRegion("chain start lies outside the focus region".into()));
    }
    let knots = knots.max(2);
    let n = focus.dim();
    let mut x = start;
    let mut lx = log_density(&x);
    if !lx.is_finite() {
        return Err(Error::InfeasibleRegion("chain start has zero density".into()));
    }
    let mut out = Vec::with_capacity(count);
    let total = burn_in + count * thin.max(1);
    let mut cells = vec![S::zero(); knots - 1];
    let mut lvals = vec![S::zero(); knots];
    for step in 0..total {
        let d: Vec<S> = random_direction(n, rng);
        if let Some((lo, hi)) = focus.chord(&x, &d) {
            let width = hi - lo;
            if width > S::epsilon() * (S::one() + x.iter().fold(S::zero(), |m, v| m.max(v.abs()))) {
                let h = width / S::of_usize(knots - 1);
                for (k, lv) in lvals.iter_mut().enumerate() {
                    let t = lo + h * S::of_usize(k);
                    let y: Vec<S> = x.iter().zip(&d).map(|(&a, &b)| a + t * b).collect();
                    *lv = log_density(&y);
                }
                for k in 0..knots - 1 {
                    cells[k] = lvals[k].max(lvals[k + 1]);
                }
                let top = cells.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
                if top.is_finite() {
                    let probs: Vec<f64> = cells.iter().map(|&c| (c - top).exp().f64()).collect();
                    let cell_of = |t: S| -> usize {
                        ((t - lo) / h).floor().to_usize().unwrap_or(0).min(knots - 2)
                    };
                    if let Ok(pick) = WeightedIndex::new(&probs) {
                        let j = pick.sample(rng);
                        let t = lo + h * (S::of_usize(j) + S::uniform(rng));
                        let y: Vec<S> = x.iter().zip(&d).map(|(&a, &b)| a + t * b).collect();
                        let ly = log_density(&y);
                        let log_accept = ly - cells[j] - (lx - cells[cell_of(S::zero())]);
                        if ly.is_finite()
                            && focus.contains(&y)
                            && (log_accept >= S::zero() || S::uniform::<R>(rng).ln() < log_accept)
                        {
                            x = y;
                            lx = ly;
                        }
                    }
                }
            }
        }
        if step >= burn_in && (step + 1 - burn_in).is_multiple_of(thin.max(1)) {
            out.push(x.clone());
        }
    }
    Ok((out, x))
}

/// `count` approximate draws from `p`; analytic densities advance their
/// warm chain (cold starts pay the burn-in).
pub fn sample_p<S: Real, R: Rng + ?Sized>(
    density: &mut Density<S>,
    count: usize,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<Vec<Vec<S>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    match density {
        Density::Grid(g) => {
            let dist = WeightedIndex::new(g.weights().iter().map(|w| w.f64()))
                .map_err(|e| Error::InfeasibleRegion(format!("grid density has no mass: {e}")))?;
            Ok((0..count).map(|_| g.point(dist.sample(rng)).to_vec()).collect())
        }
        Density::Analytic { q, focus, chain } => {
            let n = focus.dim();
            let (start, burn_in) = match chain.take() {
                Some(x) if focus.contains(&x) => (x, 0),
                _ => (focus.interior_point()?, config.burn_in_per_dim * n),
            };
            let q_ref = &*q;
            let log_density = |y: &[S]| -q_ref.q(y);
            let (samples, last) = hit_and_run(
                &log_density,
                focus,
                start,
                count,
                burn_in,
                config.thin_per_dim * n,
                config.knots,
                rng,
            )?;
            *chain = Some(last);
            Ok(samples)
        }
    }
}

/// Sample mean and jitter-regularized sample covariance.
pub fn moments<S: Real>(samples: &[Vec<S>]) -> Result<(Vec<S>, Matrix<S>)> {
    let n = samples.first().map_or(0, |s| s.len());
    let needed = n + 2;
    if samples.len() < needed || n == 0 {
        return Err(Error::NotEnoughSamples {
            needed: needed.max(3),
            got: samples.len(),
        });
    }
    let k = S::of_usize(samples.len());
    let mut mean = vec![S::zero(); n];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / k);
    let mut cov = Matrix::zeros(n, n);
    for s in samples {
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] = cov[(i, j)] + (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    let cov = cov.scale(S::one() / (k - S::one()));
    Ok((mean, regularize(&cov)))
}

/// Exact normalized density `∝ exp(-Q)` on the `resolution^n` cell centers of
/// the bounding box of `K`, truncated to `F`.
pub fn grid_oracle<S: Real>(q: impl Fn(&[S]) -> S, focus: &FocusRegion<S>, resolution: usize) -> Result<GridDensity<S>> {
    if focus.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "grid oracle needs n <= 2, got n = {}",
            focus.dim()
        )));
    }
    let (lo, hi) = focus.base.bounding_box();
    let mut g = GridDensity::uniform_box(resolution, &lo, &hi)?;
    g.set_log_weights(|y| if focus.contains(y) { -q(y) } else { S::neg_infinity() });
    if g.support_size() == 0 {
        return Err(Error::InfeasibleRegion("no grid cell lies in the focus region".into()));
    }
    Ok(g)
}

/// Fraction of `m` approximately uniform draws on `F` that land in `cut`.
pub fn volume_ratio<S: Real, R: Rng + ?Sized>(
    focus: &FocusRegion<S>,
    cut: &Cut<S>,
    m: usize,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<S> {
    if m == 0 {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let n = focus.dim();
    let start = focus.interior_point()?;
    let flat = |_: &[S]| S::zero();
    let (samples, _) = hit_and_run(
        &flat,
        focus,
        start,
        m,
        config.burn_in_per_dim * n,
        config.thin_per_dim * n,
        2,
        rng,
    )?;
    let inside = samples.iter().filter(|x| cut.contains(x)).count();
    Ok(S::of_usize(inside) / S::of_usize(m))
}
