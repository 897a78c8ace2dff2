//! The one-dimensional kernel on `K = [0, 1]` and the grid-based kernelized
//! exponential-weights loop built on it.
//!
//! `K δ_y` is the uniform law on the segment between `y` and the current mean
//! `μ`, or on `[μ - ε, μ]` when `y` is within `ε` of `μ`. When `μ < ε` that
//! short segment would leave `[0, 1]`, so the mirrored segment `[μ, μ + ε]`
//! is used instead.
//!
//! The exponential-weights distribution is an atomic measure on grid cell
//! centers, which makes `K p` an exact finite mixture of uniforms: the mixture
//! density at the played point, and hence the loss estimate, are computed
//! exactly.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::environments::LossOracle;
use crate::error::{Error, Result};
use crate::geometry::ConvexBody;
use crate::grid::GridDensity;
use crate::quadrature::integrate;
use crate::rng::RunStreams;
use crate::scalar::Real;
use crate::trace::{RoundRecord, RunTrace};

/// Default number of grid cells.
pub const DEFAULT_GRID: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel1DParams<S> {
    mu: S,
    eps: S,
    mirrored: bool,
}

impl<S: Real> Kernel1DParams<S> {
    /// Kernel around mean `mu`; the mirrored short segment is selected
    /// automatically when `mu < eps`.
    pub fn new(mu: S, eps: S) -> Result<Self> {
        Self::with_mirror(mu, eps, mu < eps)
    }

    pub fn with_mirror(mu: S, eps: S, mirrored: bool) -> Result<Self> {
        if !(eps > S::zero() && eps <= S::one()) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0, 1], got {eps}")));
        }
        if !(mu >= S::zero() && mu <= S::one()) {
            return Err(Error::InvalidParameter(format!("mu must lie in [0, 1], got {mu}")));
        }
        if !mirrored && mu < eps {
            return Err(Error::InvalidParameter("unmirrored kernel needs mu >= eps".into()));
        }
        if mirrored && mu > S::one() - eps {
            return Err(Error::InvalidParameter("mirrored kernel needs mu <= 1 - eps".into()));
        }
        Ok(Self { mu, eps, mirrored })
    }

    pub fn mu(&self) -> S {
        self.mu
    }

    pub fn eps(&self) -> S {
        self.eps
    }

    pub fn mirrored(&self) -> bool {
        self.mirrored
    }

    /// Support `[lo, hi]` of `K(·, y)`.
    pub fn segment(&self, y: S) -> (S, S) {
        if (y - self.mu).abs() >= self.eps {
            (y.min(self.mu), y.max(self.mu))
        } else if self.mirrored {
            (self.mu, self.mu + self.eps)
        } else {
            (self.mu - self.eps, self.mu)
        }
    }
}

/// `K(x, y)`.
pub fn k1_density<S: Real>(params: &Kernel1DParams<S>, x: S, y: S) -> S {
    let (lo, hi) = params.segment(y);
    if x >= lo && x <= hi {
        S::one() / (hi - lo)
    } else {
        S::zero()
    }
}

/// `K* f(y)`: the average of `f` over the segment of `y`.
pub fn k1_adjoint<S: Real>(f: impl Fn(S) -> S, params: &Kernel1DParams<S>, y: S) -> S {
    let (lo, hi) = params.segment(y);
    let width = hi - lo;
    integrate(f, lo, hi, S::of(1e-10) * width) / width
}

/// Draws `y ~ p`, then `x` uniformly on the segment of `y`.
pub fn k1_sample<S: Real, R: Rng + ?Sized>(p: &GridDensity<S>, params: &Kernel1DParams<S>, rng: &mut R) -> Result<S> {
    let index = WeightedIndex::new(p.weights().iter().map(|w| w.f64()))
        .map_err(|e| Error::InvalidParameter(format!("grid density cannot be sampled: {e}")))?;
    let y = p.point(index.sample(rng))[0];
    Ok(segment_draw(params, y, rng))
}

fn segment_draw<S: Real, R: Rng + ?Sized>(params: &Kernel1DParams<S>, y: S, rng: &mut R) -> S {
    let (lo, hi) = params.segment(y);
    lo + (hi - lo) * S::uniform(rng)
}

/// `K p(x) = sum_i p_i K(x, y_i)`.
pub fn k1_mixture<S: Real>(p: &GridDensity<S>, params: &Kernel1DParams<S>, x: S) -> S {
    p.points()
        .zip(p.weights())
        .filter(|(_, &w)| w > S::zero())
        .fold(S::zero(), |acc, (y, &w)| acc + w * k1_density(params, x, y[0]))
}

/// Loss estimate `ℓ K(x_t, y) / K p(x_t)` at every grid atom.
pub fn k1_estimator<S: Real>(x_t: S, loss: S, p: &GridDensity<S>, params: &Kernel1DParams<S>) -> Result<Vec<S>> {
    k1_estimator_with(k1_density, x_t, loss, p, params).map(|(v, _)| v)
}

/// [`k1_estimator`] with a caller-supplied kernel; also returns `K p(x_t)`.
pub fn k1_estimator_with<S: Real>(
    kernel: impl Fn(&Kernel1DParams<S>, S, S) -> S,
    x_t: S,
    loss: S,
    p: &GridDensity<S>,
    params: &Kernel1DParams<S>,
) -> Result<(Vec<S>, S)> {
    let kvals: Vec<S> = p.points().map(|y| kernel(params, x_t, y[0])).collect();
    let kp = kvals
        .iter()
        .zip(p.weights())
        .fold(S::zero(), |acc, (&k, &w)| acc + k * w);
    if loss == S::zero() {
        return Ok((vec![S::zero(); p.len()], kp));
    }
    if kp == S::zero() || !kp.is_finite() {
        return Err(Error::EstimatorUndefined(x_t.f64()));
    }
    let scale = loss / kp;
    Ok((kvals.into_iter().map(|k| k * scale).collect(), kp))
}

/// `∫ K^(2) p / K p` evaluated by the midpoint rule on `points` equally spaced
/// points of `[0, 1]`.
pub fn k1_second_moment_ratio<S: Real>(p: &GridDensity<S>, params: &Kernel1DParams<S>, points: usize) -> S {
    let h = S::one() / S::of_usize(points);
    (0..points)
        .map(|j| {
            let x = (S::of_usize(j) + S::of(0.5)) * h;
            let mut k1 = S::zero();
            let mut k2 = S::zero();
            for (y, &w) in p.points().zip(p.weights()) {
                let k = k1_density(params, x, y[0]);
                k1 = k1 + w * k;
                k2 = k2 + w * k * k;
            }
            if k1 > S::zero() {
                k2 / k1 * h
            } else {
                S::zero()
            }
        })
        .sum()
}

/// Constants of the 1D method for a given horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct K1Settings<S> {
    pub grid_size: usize,
    pub eps: S,
    pub eta: S,
}

impl<S: Real> K1Settings<S> {
    /// `ε = 1/T²`, and `η = sqrt(2 log(T³) / (C T))` with `C = 2 log(e T²)`.
    pub fn for_horizon(horizon: usize, grid_size: usize) -> Self {
        let t = S::of_usize(horizon.max(1));
        let c = S::of(2.0) * (S::one() + S::of(2.0) * t.ln());
        let eta = (S::of(2.0) * S::of(3.0) * t.ln() / (c * t)).sqrt();
        Self {
            grid_size,
            eps: S::one() / (t * t),
            eta,
        }
    }
}

/// `12 log(T) sqrt(T)`.
pub fn k1_regret_bound(horizon: usize) -> f64 {
    let t = horizon as f64;
    12.0 * t.ln() * t.sqrt()
}

/// Runs the 1D method for `horizon` rounds with the default constants.
pub fn k1_run<S: Real>(
    env: &dyn LossOracle<S>,
    horizon: usize,
    grid_size: usize,
    streams: &mut RunStreams,
) -> Result<RunTrace<S>> {
    k1_run_with(env, horizon, K1Settings::for_horizon(horizon, grid_size), streams)
}

pub fn k1_run_with<S: Real>(
    env: &dyn LossOracle<S>,
    horizon: usize,
    settings: K1Settings<S>,
    streams: &mut RunStreams,
) -> Result<RunTrace<S>> {
    match env.body() {
        ConvexBody::Interval { lo, hi } if *lo == S::zero() && *hi == S::one() => {}
        _ => return Err(Error::Unsupported("the 1D kernel runs on K = [0, 1]".into())),
    }
    let mut trace = RunTrace::new(1);
    let mut p = GridDensity::uniform_interval(settings.grid_size, S::zero(), S::one())?;
    for t in 1..=horizon {
        let mu = p.mean()[0].max(S::zero()).min(S::one());
        let params = Kernel1DParams::new(mu, settings.eps)?;
        let x = k1_sample(&p, &params, &mut streams.learner)?;
        let loss = trace.receive(env.raw_query(t, &[x], &mut streams.env));
        let (estimate, kp) = k1_estimator_with(k1_density, x, loss, &p, &params)?;
        p.exp_update(&estimate, settings.eta);
        trace.push(RoundRecord {
            t,
            x: vec![x],
            in_body: true,
            in_omega: true,
            loss,
            u: kp,
            eta: settings.eta,
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
    use crate::environments::{regret_report, AbsLoss, ConstantLoss};
    use crate::stats::{ks_statistic, mean_stderr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(mu: f64, eps: f64) -> Kernel1DParams<f64> {
        Kernel1DParams::new(mu, eps).unwrap()
    }

    fn delta_at(y: f64) -> GridDensity<f64> {
        GridDensity::from_parts(1, vec![y], vec![0.0], 1.0)
    }

    #[test]
    fn density_examples() {
        let k = params(0.5, 0.01);
        assert!((k1_density(&k, 0.7, 0.9) - 2.5).abs() < 1e-12);
        assert!((k1_density(&k, 0.495, 0.505) - 100.0).abs() < 1e-9);
        assert_eq!(k1_density(&k, 0.2, 0.9), 0.0);
    }

    #[test]
    fn mirroring_rules() {
        assert!(params(0.001, 0.01).mirrored());
        assert!(!params(0.999, 0.01).mirrored());
        assert!(Kernel1DParams::with_mirror(0.001, 0.01, false).is_err());
        let k = params(0.001, 0.01);
        assert_eq!(k.segment(0.0), (0.001, 0.011));
    }

    #[test]
    fn adjoint_examples() {
        let k = params(0.5, 0.01);
        assert!((k1_adjoint(|x| x, &k, 0.9) - 0.7).abs() < 1e-12);
        let k0 = params(0.0, 0.01);
        assert!((k1_adjoint(|x| x * x, &k0, 1.0) - 1.0 / 3.0).abs() < 1e-12);
        for y in [0.0, 0.3, 0.5, 0.505, 1.0] {
            assert!((k1_adjoint(|_| 0.42, &k, y) - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_mass_is_one() {
        // midpoint counting is off by at most one cell, i.e. 1 / (width m)
        let m = 4096;
        for (mu, eps) in [(0.37, 0.01), (0.5, 0.5), (0.005, 0.01)] {
            let k = params(mu, eps);
            for y in [0.0, 0.2, mu, mu + eps / 2.0, 0.9, 1.0] {
                let (lo, hi) = k.segment(y);
                let mass: f64 = (0..m)
                    .map(|j| k1_density(&k, (j as f64 + 0.5) / m as f64, y) / m as f64)
                    .sum();
                assert!((mass - 1.0).abs() <= 1.0 / ((hi - lo) * m as f64) + 1e-12, "{y}: {mass}");
                if hi - lo >= 0.5 {
                    assert!((mass - 1.0).abs() <= 2.0 / m as f64);
                }
            }
        }
    }

    #[test]
    fn sample_from_point_mass_is_uniform_on_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = params(0.5, 0.01);
        let p = delta_at(0.9);
        let xs: Vec<f64> = (0..10_000).map(|_| k1_sample(&p, &k, &mut rng).unwrap()).collect();
        assert!(ks_statistic(&xs, |x| ((x - 0.5) / 0.4).clamp(0.0, 1.0)) < 0.02);
        let p = delta_at(0.5);
        for _ in 0..1000 {
            let x = k1_sample(&p, &k, &mut rng).unwrap();
            assert!((0.49..=0.5).contains(&x));
        }
    }

    #[test]
    fn sample_mean_under_uniform_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GridDensity::uniform_interval(256, 0.0, 1.0).unwrap();
        let mu = p.mean()[0];
        let k = params(0.3, 1e-4);
        let xs: Vec<f64> = (0..40_000).map(|_| k1_sample(&p, &k, &mut rng).unwrap()).collect();
        let (m, se) = mean_stderr(&xs);
        // E[x | y] is the midpoint of the segment between y and the kernel mean
        let expected = (0.3 + mu) / 2.0;
        assert!((m - expected).abs() <= 3.0 * se, "{m} vs {expected} ± {se}");
    }

    #[test]
    fn estimator_examples() {
        let p = GridDensity::uniform_interval(64, 0.0, 1.0).unwrap();
        let k = params(0.5, 0.01);
        let est = k1_estimator(0.7, 0.4, &p, &k).unwrap();
        for (y, v) in p.points().zip(&est) {
            if y[0] < 0.7 {
                assert_eq!(*v, 0.0);
            }
        }
        let zero = k1_estimator(0.7, 0.0, &p, &k).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        // a point no segment reaches
        let p = delta_at(0.9);
        assert!(matches!(k1_estimator(0.1, 0.5, &p, &k), Err(Error::EstimatorUndefined(_))));
    }

    #[test]
    fn estimator_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = GridDensity::uniform_interval(32, 0.0, 1.0).unwrap();
        p.set_log_weights(|y: &[f64]| -3.0 * (y[0] - 0.6).powi(2));
        let k = params(p.mean()[0], 0.05);
        let loss = |x: f64| (x - 0.25).abs();
        let draws = 100_000;
        let mut acc = vec![Vec::with_capacity(draws); p.len()];
        for _ in 0..draws {
            let x = k1_sample(&p, &k, &mut rng).unwrap();
            let est = k1_estimator(x, loss(x), &p, &k).unwrap();
            for (a, v) in acc.iter_mut().zip(est) {
                a.push(v);
            }
        }
        for (i, y) in p.points().enumerate().step_by(3) {
            let (m, se) = mean_stderr(&acc[i]);
            let truth = k1_adjoint(loss, &k, y[0]);
            assert!((m - truth).abs() <= 3.0 * se + 1e-12, "y={}: {m} vs {truth} ± {se}", y[0]);
        }
    }

    #[test]
    fn second_moment_condition() {
        for (eps, mu_shift) in [(1e-3, 0.0), (1e-2, 0.2)] {
            let mut p = GridDensity::uniform_interval(128, 0.0, 1.0).unwrap();
            p.set_log_weights(|y: &[f64]| -5.0 * (y[0] - 0.4 - mu_shift).abs());
            let k = params(p.mean()[0], eps);
            let ratio = k1_second_moment_ratio(&p, &k, 8192);
            assert!(ratio <= 2.0 * (1.0 + (1.0 / eps).ln()), "{ratio}");
        }
    }

    #[test]
    fn constant_environment_has_zero_regret() {
        let env = ConstantLoss::new(ConvexBody::unit_interval(), 0.5);
        let mut streams = RunStreams::new(1, 0);
        let trace = k1_run(&env, 0, 64, &mut streams).unwrap();
        assert!(trace.is_empty());
        let trace = k1_run(&env, 200, 64, &mut streams).unwrap();
        assert_eq!(trace.len(), 200);
        let rep = regret_report(&env, &trace, &[]);
        assert_eq!(rep.regret, 0.0);
        assert_eq!(rep.pseudo_regret, 0.0);
    }

    #[test]
    fn learns_an_absolute_loss() {
        let env = AbsLoss::new(ConvexBody::unit_interval(), vec![0.3]).unwrap();
        let mut streams = RunStreams::new(11, 0);
        let horizon = 5000;
        let trace = k1_run(&env, horizon, 256, &mut streams).unwrap();
        let rep = regret_report(&env, &trace, &[]);
        assert!(rep.pseudo_regret <= k1_regret_bound(horizon));
        let late: f64 = trace.records[4000..].iter().map(|r| (r.x[0] - 0.3).abs()).sum::<f64>() / 1000.0;
        assert!(late < 0.2, "late mean distance {late}");
    }

    #[test]
    fn rejects_other_bodies() {
        let env = ConstantLoss::new(ConvexBody::Interval { lo: 0.0, hi: 2.0 }, 0.5);
        let mut streams = RunStreams::new(1, 0);
        assert!(k1_run(&env, 10, 64, &mut streams).is_err());
    }
}
