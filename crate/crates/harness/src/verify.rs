//! Property suites run by `kbco verify` and by the acceptance gate.
//!
//! Every check draws from its own verification stream, so results are fixed
//! for a given build.

use kbco_core::engine::{telescoping_slack, AlgoParams, EngineConfig, EngineState, ParamOverrides, Preset};
use kbco_core::environments::{convexity_violation, make_env, CorruptedLoss, EnvSpec, QuadraticLoss};
use kbco_core::geometry::{box_from_moments, mahalanobis_norm, ConvexBody, Cut, FocusRegion, OrientedBox};
use kbco_core::grid::GridDensity;
use kbco_core::kernel1d::{
    k1_adjoint, k1_density, k1_estimator_with, k1_sample, k1_second_moment_ratio, Kernel1DParams,
};
use kbco_core::kernel_hd::{
    core_series_sample, gaussian_core, kernel_log_densities, kernel_sample, make_bump, GaussianCore, KernelParams,
    SERIES_TOLERANCE,
};
use kbco_core::linalg::Matrix;
use kbco_core::rng::{stream, RunStreams, StreamRng, StreamTag};
use kbco_core::sampler::{grid_oracle, sample_p, BumpSum, ChainConfig, Density};
use kbco_core::scalar::{log_sum_exp, random_direction, Real};
use kbco_core::stats::ks_statistic;
use kbco_core::trace::RunTrace;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

/// Master seed of the verification streams.
pub const VERIFY_SEED: u64 = 0x5eed_cafe;

/// Horizon used wherever a property depends on `T`.
pub const DESK_HORIZON: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn error(name: &'static str, e: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Kernel1d,
    KernelHd,
    Sampler,
    Engine,
    All,
}

/// Deliberate defects used to confirm that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Mutation {
    #[default]
    None,
    /// Negates the 1D kernel density on the short segment near the mean.
    K1SignFlip,
}

fn rng_for(tag: u64) -> StreamRng {
    stream(VERIFY_SEED, tag, StreamTag::Verify)
}

/// Streaming mean and standard error.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.count += 1.0;
        let d = v - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (v - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2.0 {
            return f64::INFINITY;
        }
        (self.m2 / (self.count - 1.0) / self.count).sqrt()
    }
}

/// `|estimate - truth|` in units of the standard error.
fn z_score(w: &Welford, truth: f64) -> f64 {
    let se = w.stderr();
    let diff = (w.mean() - truth).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / se
    }
}

pub fn run_suite(suite: Suite, mutation: Mutation) -> Vec<Check> {
    match suite {
        Suite::Kernel1d => kernel1d_suite(mutation),
        Suite::KernelHd => kernel_hd_suite(),
        Suite::Sampler => sampler_suite(),
        Suite::Engine => engine_suite(),
        Suite::All => {
            let mut all = kernel1d_suite(mutation);
            all.extend(kernel_hd_suite());
            all.extend(sampler_suite());
            all.extend(engine_suite());
            all
        }
    }
}

pub fn kernel1d_suite(mutation: Mutation) -> Vec<Check> {
    vec![
        k1_kernel_mass(),
        k1_half_domination(50),
        k1_second_moment(),
        k1_lipschitz_pieces(50),
        k1_unbiasedness(1_000_000, mutation),
    ]
}

pub fn kernel_hd_suite() -> Vec<Check> {
    vec![
        gaussian_fixed_point(100_000),
        series_fixed_point(100_000),
        rademacher_core_is_uniform(100_000),
        gaussian_core_self_consistency(20_000),
        hd_unbiasedness(1_000_000),
        convex_domination(200, 100_000),
        ball_domination(200, 100_000),
        smoothness(200),
    ]
}

pub fn sampler_suite() -> Vec<Check> {
    vec![mcmc_matches_grid(20), sampler_determinism(), box_sandwich(1000)]
}

pub fn engine_suite() -> Vec<Check> {
    vec![
        telescoping(100),
        omega_coverage(100_000),
        engine_invariants(1500),
        environment_invariants(),
    ]
}

// ---------------------------------------------------------------- kernel1d

fn tilted_interval(m: usize, center: f64, rate: f64) -> GridDensity<f64> {
    let mut p = GridDensity::uniform_interval(m, 0.0, 1.0).expect("valid interval grid");
    p.set_log_weights(|y: &[f64]| -rate * (y[0] - center).abs());
    p
}

/// `∫ K(x, y) dx` over the cells of a 2048 grid, integrating the piecewise
/// constant density exactly on each cell.
pub fn k1_kernel_mass() -> Check {
    const NAME: &str = "kernel1d/kernel-mass";
    let m = 2048;
    let mut worst: f64 = 0.0;
    for (mu, eps) in [(0.37, 0.01), (0.5, 0.5), (0.004, 0.01), (0.99, 1e-6)] {
        let Ok(k) = Kernel1DParams::new(mu, eps) else {
            return Check::error(NAME, "invalid kernel parameters");
        };
        for y in [0.0, 0.2, mu, mu + eps / 2.0, 0.9, 1.0] {
            let (lo, hi) = k.segment(y);
            let mass: f64 = (0..m)
                .map(|j| {
                    let a = j as f64 / m as f64;
                    let b = (j + 1) as f64 / m as f64;
                    let overlap = (b.min(hi) - a.max(lo)).max(0.0);
                    if overlap > 0.0 {
                        k1_density(&k, 0.5 * (a.max(lo) + b.min(hi)), y) * overlap
                    } else {
                        0.0
                    }
                })
                .sum();
            worst = worst.max((mass - 1.0).abs());
        }
    }
    Check::new(NAME, worst <= 2.0 / m as f64, format!("max |mass - 1| = {worst:.3e}"))
}

/// Convex piecewise-linear `x ↦ max(0, max_j a_j·(x - z_j) + v_j)`.
#[derive(Debug, Clone)]
pub struct ConvexPl {
    pieces: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl ConvexPl {
    /// Up to five pieces, gradients of norm at most `lipschitz`, anchors
    /// drawn in `[lo, hi]^n` with values in `[0, 1]`.
    pub fn random<R: Rng + ?Sized>(n: usize, lipschitz: f64, lo: f64, hi: f64, rng: &mut R) -> Self {
        let k = rng.random_range(1..=5);
        let pieces = (0..k)
            .map(|_| {
                let dir: Vec<f64> = random_direction(n, rng);
                let scale = lipschitz * rng.random::<f64>();
                let grad = dir.iter().map(|d| d * scale).collect();
                let anchor = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
                (grad, anchor, rng.random::<f64>())
            })
            .collect();
        Self { pieces }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.pieces.iter().fold(0.0, |m, (g, z, v)| {
            let s: f64 = g.iter().zip(x).zip(z).map(|((gi, xi), zi)| gi * (xi - zi)).sum();
            m.max(s + v)
        })
    }
}

/// For `|x - μ| >= ε`: `K*f(x) <= ½⟨Kp, f⟩ + ½ f(x) + 2εT` on random convex
/// `T`-Lipschitz `f`.
pub fn k1_half_domination(functions: usize) -> Check {
    const NAME: &str = "kernel1d/condition-half";
    let mut rng = rng_for(11);
    let horizon = 1000.0_f64;
    let eps = 1.0 / (horizon * horizon);
    let p = tilted_interval(256, 0.62, 4.0);
    let Ok(k) = Kernel1DParams::new(p.mean()[0], eps) else {
        return Check::error(NAME, "invalid kernel parameters");
    };
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..functions {
        let f = ConvexPl::random(1, horizon, 0.0, 1.0, &mut rng);
        let adj: Vec<f64> = p.points().map(|y| k1_adjoint(|x| f.eval(&[x]), &k, y[0])).collect();
        let kp_f: f64 = adj.iter().zip(p.weights()).map(|(a, w)| a * w).sum();
        for (y, a) in p.points().zip(&adj) {
            if (y[0] - k.mu()).abs() < eps {
                continue;
            }
            let rhs = 0.5 * kp_f + 0.5 * f.eval(y) + 2.0 * eps * horizon;
            let slack = 1e-9 * (1.0 + rhs.abs());
            let gap = a - rhs;
            worst = worst.max(gap);
            if gap > slack {
                violations += 1;
            }
        }
    }
    Check::new(
        NAME,
        violations == 0,
        format!("{violations} violations over {functions} functions; max lhs - rhs = {worst:.3e}"),
    )
}

/// `∫ K^(2) p / K p <= 2 (1 + log(1/ε))`.
pub fn k1_second_moment() -> Check {
    const NAME: &str = "kernel1d/second-moment";
    let mut worst: f64 = 0.0;
    for (eps, center) in [(1e-3, 0.4), (1e-2, 0.6), (1e-4, 0.05)] {
        let p = tilted_interval(128, center, 5.0);
        let Ok(k) = Kernel1DParams::new(p.mean()[0], eps) else {
            return Check::error(NAME, "invalid kernel parameters");
        };
        let ratio = k1_second_moment_ratio(&p, &k, 8192);
        worst = worst.max(ratio / (2.0 * (1.0 + (1.0 / eps).ln())));
    }
    Check::new(NAME, worst <= 1.0, format!("max ratio / bound = {worst:.4}"))
}

/// `K* f` is 1-Lipschitz on `[0, μ+ε)` and on `[μ+ε, 1]` for 1-Lipschitz `f`.
pub fn k1_lipschitz_pieces(functions: usize) -> Check {
    const NAME: &str = "kernel1d/lipschitz-pieces";
    let mut rng = rng_for(12);
    let p = tilted_interval(128, 0.35, 3.0);
    let eps = 0.05;
    let Ok(k) = Kernel1DParams::new(p.mean()[0], eps) else {
        return Check::error(NAME, "invalid kernel parameters");
    };
    let split = k.mu() + eps;
    let points = 400;
    let mut worst: f64 = 0.0;
    for _ in 0..functions {
        // piecewise linear through random values with slopes in [-1, 1]
        let knots = 8;
        let mut values = vec![rng.random::<f64>()];
        for _ in 0..knots {
            let last = *values.last().unwrap_or(&0.0);
            values.push(last + (2.0 * rng.random::<f64>() - 1.0) / knots as f64);
        }
        let f = |x: f64| {
            let s = (x.clamp(0.0, 1.0) * knots as f64).min(knots as f64 - 1e-12);
            let i = s.floor() as usize;
            values[i] + (values[i + 1] - values[i]) * (s - i as f64)
        };
        // (μ+ε) - μ can round below ε, so start the upper piece just past it
        for (a, b) in [(0.0, split), (split + 1e-12, 1.0)] {
            let h = (b - a) / points as f64;
            let xs: Vec<f64> = (0..points).map(|j| a + h * j as f64).collect();
            let vals: Vec<f64> = xs.iter().map(|&x| k1_adjoint(f, &k, x)).collect();
            for w in vals.windows(2) {
                worst = worst.max((w[1] - w[0]).abs() / h);
            }
        }
    }
    Check::new(
        NAME,
        worst <= 1.0 + 1e-6,
        format!("max finite-difference slope {worst:.6}"),
    )
}

/// Monte Carlo mean of `ℓ(x) K(x, y) / K p(x)` against `K*ℓ(y)` by
/// quadrature at 10 atoms, three of them within `ε` of the mean.
pub fn k1_unbiasedness(draws: usize, mutation: Mutation) -> Check {
    const NAME: &str = "kernel1d/unbiasedness";
    let mut rng = rng_for(13);
    let mut p = GridDensity::uniform_interval(32, 0.0, 1.0).expect("valid interval grid");
    p.set_log_weights(|y: &[f64]| -3.0 * (y[0] - 0.6).powi(2));
    let eps = 0.05;
    let Ok(k) = Kernel1DParams::new(p.mean()[0], eps) else {
        return Check::error(NAME, "invalid kernel parameters");
    };
    let flip = mutation == Mutation::K1SignFlip;
    let kernel = move |k: &Kernel1DParams<f64>, x: f64, y: f64| {
        let v = k1_density(k, x, y);
        if flip && (y - k.mu()).abs() < k.eps() {
            -v
        } else {
            v
        }
    };
    let loss = |x: f64| (x - 0.25).abs();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (p.point(a)[0] - k.mu()).abs();
        let db = (p.point(b)[0] - k.mu()).abs();
        da.total_cmp(&db)
    });
    let mut test: Vec<usize> = order[..3].to_vec();
    for i in (0..p.len()).step_by(4) {
        if test.len() < 10 && !test.contains(&i) {
            test.push(i);
        }
    }
    let mut acc = vec![Welford::default(); test.len()];
    for _ in 0..draws {
        let x = match k1_sample(&p, &k, &mut rng) {
            Ok(x) => x,
            Err(e) => return Check::error(NAME, e),
        };
        let est = match k1_estimator_with(kernel, x, loss(x), &p, &k) {
            Ok((v, _)) => v,
            Err(e) => return Check::error(NAME, e),
        };
        for (a, &i) in acc.iter_mut().zip(&test) {
            a.push(est[i]);
        }
    }
    let worst = acc
        .iter()
        .zip(&test)
        .map(|(a, &i)| z_score(a, k1_adjoint(loss, &k, p.point(i)[0])))
        .fold(0.0, f64::max);
    Check::new(
        NAME,
        worst <= 3.0,
        format!("max |mean - K*l| / stderr = {worst:.2} over {} atoms, {draws} draws", test.len()),
    )
}

// ---------------------------------------------------------------- kernel-hd

/// Raw moments 1..=4 of `samples` against `truth`, in standard errors.
fn moment_z_scores(samples: &[f64], truth: [f64; 4]) -> [f64; 4] {
    let mut acc = [Welford::default(); 4];
    for &v in samples {
        let mut p = 1.0;
        for a in acc.iter_mut() {
            p *= v;
            a.push(p);
        }
    }
    let mut z = [0.0; 4];
    for k in 0..4 {
        z[k] = z_score(&acc[k], truth[k]);
    }
    z
}

/// Two-sample version of [`moment_z_scores`].
fn moment_z_scores_two(a: &[f64], b: &[f64]) -> [f64; 4] {
    let mut wa = [Welford::default(); 4];
    let mut wb = [Welford::default(); 4];
    for (ws, xs) in [(&mut wa, a), (&mut wb, b)] {
        for &v in xs {
            let mut p = 1.0;
            for w in ws.iter_mut() {
                p *= v;
                w.push(p);
            }
        }
    }
    let mut z = [0.0; 4];
    for k in 0..4 {
        let se = (wa[k].stderr().powi(2) + wb[k].stderr().powi(2)).sqrt();
        z[k] = (wa[k].mean() - wb[k].mean()).abs() / se;
    }
    z
}

fn max4(z: [f64; 4]) -> f64 {
    z.into_iter().fold(0.0, f64::max)
}

/// `λ = ½`, `Z ~ N(0, 1/3)`, `X ~ N(0, 1)`: the first four moments of
/// `(1-λ) Z + λ X` equal those of `Z` (0, 1/3, 0, 1/3).
pub fn gaussian_fixed_point(draws: usize) -> Check {
    const NAME: &str = "kernel_hd/gaussian-fixed-point";
    let mut rng = rng_for(21);
    let lambda = 0.5;
    let sd = (1.0_f64 / 3.0).sqrt();
    let w: Vec<f64> = (0..draws)
        .map(|_| {
            let z = sd * f64::standard_normal(&mut rng);
            let x = f64::standard_normal(&mut rng);
            (1.0 - lambda) * z + lambda * x
        })
        .collect();
    let z = moment_z_scores(&w, [0.0, 1.0 / 3.0, 0.0, 1.0 / 3.0]);
    let worst = max4(z);
    Check::new(NAME, worst <= 3.0, format!("moment z-scores {z:.2?}"))
}

/// `Z` from the truncated series with Gaussian `X`: `(1-λ) Z + λ X` and a
/// fresh `Z'` share their first four moments.
pub fn series_fixed_point(draws: usize) -> Check {
    const NAME: &str = "kernel_hd/series-fixed-point";
    let mut rng = rng_for(22);
    let lambda = 0.5;
    let mut draw_x = |r: &mut StreamRng| vec![f64::standard_normal(r)];
    let mut w = Vec::with_capacity(draws);
    let mut fresh = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z = match core_series_sample(&mut draw_x, lambda, 12.0, SERIES_TOLERANCE, &mut rng) {
            Ok(z) => z[0],
            Err(e) => return Check::error(NAME, e),
        };
        let x = f64::standard_normal(&mut rng);
        w.push((1.0 - lambda) * z + lambda * x);
        match core_series_sample(&mut draw_x, lambda, 12.0, SERIES_TOLERANCE, &mut rng) {
            Ok(z) => fresh.push(z[0]),
            Err(e) => return Check::error(NAME, e),
        }
    }
    let z = moment_z_scores_two(&w, &fresh);
    Check::new(NAME, max4(z) <= 3.0, format!("moment z-scores {z:.2?}"))
}

/// The core of a Rademacher variable at `λ = ½` is uniform on `[-1, 1]`.
pub fn rademacher_core_is_uniform(draws: usize) -> Check {
    const NAME: &str = "kernel_hd/rademacher-core";
    let mut rng = rng_for(23);
    let mut draw_x = |r: &mut StreamRng| vec![if r.random::<bool>() { 1.0 } else { -1.0 }];
    let mut zs = Vec::with_capacity(draws);
    for _ in 0..draws {
        match core_series_sample(&mut draw_x, 0.5, 2.0, SERIES_TOLERANCE, &mut rng) {
            Ok(z) => zs.push(z[0]),
            Err(e) => return Check::error(NAME, e),
        }
    }
    let ks = ks_statistic(&zs, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
    Check::new(NAME, ks < 0.01, format!("KS distance {ks:.4} at {draws} draws"))
}

/// For `X ~ N(0, I₂)` the core is `N(0, λ/(2-λ) I₂)`.
pub fn gaussian_core_self_consistency(draws: usize) -> Check {
    const NAME: &str = "kernel_hd/gaussian-core-covariance";
    let mut rng = rng_for(24);
    let lambda = 0.3;
    let var = lambda / (2.0 - lambda);
    let mut draw_x = |r: &mut StreamRng| vec![f64::standard_normal(r), f64::standard_normal(r)];
    let mut acc = [Welford::default(); 5];
    for _ in 0..draws {
        let z = match core_series_sample(&mut draw_x, lambda, 12.0, SERIES_TOLERANCE, &mut rng) {
            Ok(z) => z,
            Err(e) => return Check::error(NAME, e),
        };
        for (a, v) in acc.iter_mut().zip([z[0], z[1], z[0] * z[0], z[1] * z[1], z[0] * z[1]]) {
            a.push(v);
        }
    }
    let truth = [0.0, 0.0, var, var, 0.0];
    let z: Vec<f64> = acc.iter().zip(truth).map(|(a, t)| z_score(a, t)).collect();
    let worst = z.iter().copied().fold(0.0, f64::max);
    Check::new(NAME, worst <= 3.0, format!("z-scores of mean and covariance {z:.2?}"))
}

/// `n = 2` grid density: Monte Carlo mean of `ℓ(x) K(x, y) / K p(x)` against
/// the closed form of `K*ℓ(y)` for a quadratic `ℓ` at 10 atoms.
pub fn hd_unbiasedness(draws: usize) -> Check {
    const NAME: &str = "kernel_hd/unbiasedness";
    let mut rng = rng_for(25);
    let mut p = GridDensity::uniform_box(16, &[0.0, 0.0], &[1.0, 1.0]).expect("valid box grid");
    p.set_log_weights(|y: &[f64]| -4.0 * ((y[0] - 0.35).powi(2) + 0.5 * (y[1] - 0.6).powi(2)));
    let lambda = 0.3;
    let Ok(kp) = KernelParams::new(lambda, 0.05, 0.01) else {
        return Check::error(NAME, "invalid kernel parameters");
    };
    let core = match gaussian_core(&p.mean(), &p.covariance(), &kp) {
        Ok(c) => c,
        Err(e) => return Check::error(NAME, e),
    };
    let target = [0.25, 0.7];
    let loss = |x: &[f64]| ((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)) / 4.0;
    // E ℓ(λy + (1-λ)C) with C ~ N(m, Σ): quadratic in closed form
    let cov = core.covariance();
    let truth = |y: &[f64]| {
        let v0 = lambda * y[0] + (1.0 - lambda) * core.mean()[0] - target[0];
        let v1 = lambda * y[1] + (1.0 - lambda) * core.mean()[1] - target[1];
        (v0 * v0 + v1 * v1 + (1.0 - lambda).powi(2) * (cov[(0, 0)] + cov[(1, 1)])) / 4.0
    };
    let test: Vec<usize> = (0..10).map(|j| (j * 53 + 17) % p.len()).collect();
    let log_w: Vec<f64> = p.log_weights().to_vec();
    let Ok(atoms) = WeightedIndex::new(p.weights()) else {
        return Check::error(NAME, "grid density has no mass");
    };
    let mut acc = vec![Welford::default(); test.len()];
    let mut scratch = vec![0.0; p.len()];
    for _ in 0..draws {
        let mut draw_p = |r: &mut StreamRng| p.point(atoms.sample(r)).to_vec();
        let x = kernel_sample(&core, &mut draw_p, lambda, &mut rng);
        let logk = kernel_log_densities(&core, lambda, &x, p.points());
        for (s, (lk, lw)) in scratch.iter_mut().zip(logk.iter().zip(&log_w)) {
            *s = lk + lw;
        }
        let log_kp = log_sum_exp(scratch.iter().copied());
        let l = loss(&x);
        for (a, &i) in acc.iter_mut().zip(&test) {
            a.push(l * (logk[i] - log_kp).exp());
        }
    }
    let worst = acc
        .iter()
        .zip(&test)
        .map(|(a, &i)| z_score(a, truth(p.point(i))))
        .fold(0.0, f64::max);
    Check::new(
        NAME,
        worst <= 3.0,
        format!("max |mean - K*l| / stderr = {worst:.2} over {} atoms, {draws} draws", test.len()),
    )
}

fn mean_and_stderr_of(f: &ConvexPl, samples: &[Vec<f64>]) -> Welford {
    let mut w = Welford::default();
    for s in samples {
        w.push(f.eval(s));
    }
    w
}

/// Draws of the atomic density `p`.
fn atom_draws(p: &GridDensity<f64>, count: usize, rng: &mut StreamRng) -> Option<Vec<Vec<f64>>> {
    let atoms = WeightedIndex::new(p.weights()).ok()?;
    Some((0..count).map(|_| p.point(atoms.sample(rng)).to_vec()).collect())
}

/// `⟨c[p], f⟩ <= ⟨K[p]p, f⟩ + 1/T² + 3 stderr` for random convex
/// `T`-Lipschitz `f`, `p` a truncated isotropic Gaussian on the unit square,
/// at the practical and at the theory covariance scale.
pub fn convex_domination(functions: usize, draws: usize) -> Check {
    const NAME: &str = "kernel_hd/convex-domination";
    let mut rng = rng_for(26);
    let horizon = DESK_HORIZON as f64;
    let mut p = GridDensity::uniform_box(128, &[0.0, 0.0], &[1.0, 1.0]).expect("valid box grid");
    p.set_log_weights(|y: &[f64]| -((y[0] - 0.45).powi(2) + (y[1] - 0.55).powi(2)) / (2.0 * 0.25 * 0.25));
    let lambda = 0.05;
    let settings = [
        KernelParams::new(lambda, 1.0 / (2.0 * horizon.ln()), 0.01),
        KernelParams::theory_mapping(2, DESK_HORIZON, lambda),
    ];
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for kp in settings {
        let kp = match kp {
            Ok(k) => k,
            Err(e) => return Check::error(NAME, e),
        };
        let core = match gaussian_core(&p.mean(), &p.covariance(), &kp) {
            Ok(c) => c,
            Err(e) => return Check::error(NAME, e),
        };
        let Some(xs) = atom_draws(&p, draws, &mut rng) else {
            return Check::error(NAME, "grid density has no mass");
        };
        let core_draws: Vec<Vec<f64>> = (0..draws).map(|_| core.sample(&mut rng)).collect();
        let kernel_draws: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let c = core.sample(&mut rng);
                x.iter().zip(&c).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
            })
            .collect();
        for _ in 0..functions {
            let f = ConvexPl::random(2, horizon, 0.0, 1.0, &mut rng);
            let a = mean_and_stderr_of(&f, &core_draws);
            let b = mean_and_stderr_of(&f, &kernel_draws);
            let se = (a.stderr().powi(2) + b.stderr().powi(2)).sqrt();
            let gap = (a.mean() - b.mean() - 1.0 / (horizon * horizon)) / se;
            worst = worst.max(gap);
            if gap > 3.0 {
                violations += 1;
            }
        }
    }
    Check::new(
        NAME,
        violations == 0,
        format!("{violations} violations over {} functions; max excess {worst:.2} stderr", 2 * functions),
    )
}

/// `r` uniform on the ball of radius `1/(80e)` around the mean of an
/// isotropic log-concave `p`: `⟨r, f⟩ <= ⟨p, f⟩ + 3 stderr`.
pub fn ball_domination(functions: usize, draws: usize) -> Check {
    const NAME: &str = "kernel_hd/ball-domination";
    let mut rng = rng_for(27);
    let radius = 1.0 / (80.0 * std::f64::consts::E);
    let half = 3.0_f64.sqrt();
    let cube: Vec<Vec<f64>> = (0..draws)
        .map(|_| (0..2).map(|_| half * (2.0 * rng.random::<f64>() - 1.0)).collect())
        .collect();
    let gauss: Vec<Vec<f64>> = (0..draws)
        .map(|_| (0..2).map(|_| f64::standard_normal(&mut rng)).collect())
        .collect();
    let ball: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let d: Vec<f64> = random_direction(2, &mut rng);
            let r = radius * rng.random::<f64>().sqrt();
            d.iter().map(|v| v * r).collect()
        })
        .collect();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for p in [&cube, &gauss] {
        for _ in 0..functions {
            let f = ConvexPl::random(2, DESK_HORIZON as f64, -1.0, 1.0, &mut rng);
            let a = mean_and_stderr_of(&f, &ball);
            let b = mean_and_stderr_of(&f, p);
            let se = (a.stderr().powi(2) + b.stderr().powi(2)).sqrt();
            let gap = (a.mean() - b.mean()) / se;
            worst = worst.max(gap);
            if gap > 3.0 {
                violations += 1;
            }
        }
    }
    Check::new(
        NAME,
        violations == 0,
        format!("{violations} violations over {} functions; max excess {worst:.2} stderr", 2 * functions),
    )
}

/// Uniform draw in the ellipsoid `{x : ‖x - mean‖_{Σ^{-1}} <= r}` given the
/// lower Cholesky factor rows of `Σ`.
fn ellipsoid_draw(mean: &[f64], chol: &Matrix<f64>, r: f64, rng: &mut StreamRng) -> Vec<f64> {
    let d: Vec<f64> = random_direction(mean.len(), rng);
    let s = r * rng.random::<f64>().sqrt();
    let u: Vec<f64> = d.iter().map(|v| v * s).collect();
    let lu = chol.mul_vec(&u);
    mean.iter().zip(&lu).map(|(m, v)| m + v).collect()
}

/// Theory preset at `n = 2`, `T = 2·10⁴`, coordinates centered at the mean of
/// a symmetric `p`: for `x ∈ Ω` and `y ∈ E_p(10nα)` the bump
/// `K(x, y) / K p(x)` is at most `e`, and its `y`-gradient, checked against
/// central differences of the log-ratio, has `Cov(p)`-norm at most `T²`.
pub fn smoothness(pairs_per_axis: usize) -> Check {
    const NAME: &str = "kernel_hd/smoothness";
    let mut rng = rng_for(28);
    let params = match AlgoParams::<f64>::theory(2, DESK_HORIZON) {
        Ok(p) => p,
        Err(e) => return Check::error(NAME, e),
    };
    let horizon = DESK_HORIZON as f64;
    let lambda = params.kernel.lambda();
    let mut p = GridDensity::uniform_box(32, &[-0.5, -0.5], &[0.5, 0.5]).expect("valid box grid");
    p.set_log_weights(|y: &[f64]| -(y[0] * y[0] + y[1] * y[1]) / (2.0 * 0.3 * 0.3));
    // p is symmetric about the origin, so its mean is exactly zero
    let mean = vec![0.0, 0.0];
    let cov = p.covariance();
    let core = match gaussian_core(&mean, &cov, &params.kernel) {
        Ok(c) => c,
        Err(e) => return Check::error(NAME, e),
    };
    // independent route to Σ_c^{-1}: explicit 2x2 inverse
    let sc = core.covariance();
    let det = sc[(0, 0)] * sc[(1, 1)] - sc[(0, 1)] * sc[(1, 0)];
    let a_inv = [
        [sc[(1, 1)] / det, -sc[(0, 1)] / det],
        [-sc[(1, 0)] / det, sc[(0, 0)] / det],
    ];
    let quad = |u: &[f64], v: &[f64]| {
        u[0] * (a_inv[0][0] * v[0] + a_inv[0][1] * v[1]) + u[1] * (a_inv[1][0] * v[0] + a_inv[1][1] * v[1])
    };
    let chol_p = match kbco_core::linalg::Cholesky::new(&cov) {
        Ok(c) => c.lower().clone(),
        Err(e) => return Check::error(NAME, e),
    };
    let omega = params.omega_radius();
    let far = 10.0 * 2.0 * params.alpha;
    let log_w: Vec<f64> = p.log_weights().to_vec();
    let bound = std::f64::consts::E;
    let mut max_value: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut outside = 0usize;
    for _ in 0..pairs_per_axis {
        let x = ellipsoid_draw(&mean, &chol_p, omega, &mut rng);
        match mahalanobis_norm(&x, &mean, &cov) {
            Ok(r) if r <= omega * (1.0 + 1e-9) => {}
            _ => outside += 1,
        }
        let logk = kernel_log_densities(&core, lambda, &x, p.points());
        let log_kp = log_sum_exp(logk.iter().zip(&log_w).map(|(a, b)| a + b));
        // unit weight, so log_value is log K(x, y); K p(x) itself underflows
        // over most of Omega, so the ratio is formed in logs
        let bump = match make_bump(&x, 1.0, 1.0, &core, lambda, 1.0, true) {
            Ok(b) => b,
            Err(e) => return Check::error(NAME, e),
        };
        for _ in 0..pairs_per_axis {
            let y = ellipsoid_draw(&mean, &chol_p, far, &mut rng);
            let value = (bump.log_value(&y) - log_kp).exp();
            max_value = max_value.max(value);
            let grad: Vec<f64> = bump.log_gradient(&y).into_iter().map(|g| g * value).collect();
            // log K(x, y + s) - log K(x, y), expanded exactly
            let one_minus = 1.0 - lambda;
            let d0: Vec<f64> = x
                .iter()
                .zip(&y)
                .zip(core.mean())
                .map(|((xi, yi), m)| (xi - lambda * yi) / one_minus - m)
                .collect();
            let delta_log = |s: &[f64]| {
                lambda / one_minus * quad(&d0, s) - 0.5 * (lambda / one_minus).powi(2) * quad(s, s)
            };
            let h = 1e-3;
            let fd: Vec<f64> = (0..2)
                .map(|j| {
                    let mut s = [0.0; 2];
                    s[j] = h;
                    let up = delta_log(&s).exp_m1();
                    s[j] = -h;
                    let down = delta_log(&s).exp_m1();
                    value * (up - down) / (2.0 * h)
                })
                .collect();
            let g_norm = cov.quad_form(&grad).max(0.0).sqrt();
            let fd_cov_norm = cov.quad_form(&fd).max(0.0).sqrt();
            max_grad = max_grad.max(g_norm).max(fd_cov_norm);
            let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
            let fd_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            if fd_norm > 0.0 {
                max_rel = max_rel.max(diff.iter().map(|v| v * v).sum::<f64>().sqrt() / fd_norm);
            }
        }
    }
    let passed = outside == 0 && max_value <= bound && max_grad <= horizon * horizon && max_rel <= 1e-4;
    Check::new(
        NAME,
        passed,
        format!(
            "lambda {lambda:.3e}; max bump {max_value:.6} (<= e), max |grad|_Cov {max_grad:.3e} (<= T^2), \
             max relative finite-difference error {max_rel:.2e}, {outside} x outside Omega"
        ),
    )
}

// ---------------------------------------------------------------- sampler

fn unit_square_focus() -> FocusRegion<f64> {
    FocusRegion::new(ConvexBody::unit_cube(2))
}

/// Random bump sum whose `Q` varies by about 2 over the unit square.
fn random_bump_sum(rng: &mut StreamRng) -> Option<BumpSum<f64>> {
    let mut q = BumpSum::new();
    let count = rng.random_range(3..=8);
    for _ in 0..count {
        let center: Vec<f64> = (0..2).map(|_| 0.3 + 0.4 * rng.random::<f64>()).collect();
        let var: Vec<f64> = (0..2).map(|_| 0.002 + 0.008 * rng.random::<f64>()).collect();
        let core = GaussianCore::new(center, Matrix::from_diag(&var)).ok()?;
        let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let lambda = 0.2 + 0.3 * rng.random::<f64>();
        q.push(make_bump(&x, rng.random::<f64>(), 1.0, &core, lambda, 1.0, true).ok()?);
    }
    let mut top: f64 = 0.0;
    for i in 0..=40 {
        for j in 0..=40 {
            top = top.max(q.q(&[i as f64 / 40.0, j as f64 / 40.0]));
        }
    }
    if top > 0.0 {
        let scale = 2.0 / top;
        q.bumps.iter_mut().for_each(|b| b.eta *= scale);
    }
    Some(q)
}

/// Hit-and-run mean and raw second moments against the grid oracle on random
/// bump-sum densities (half of them on a focus region cut by a box), with
/// batch-means standard errors.
pub fn mcmc_matches_grid(densities: usize) -> Check {
    // a 256 oracle misplaces box-cut boundaries by enough to bias it at 3 stderr
    mcmc_matches_grid_with(densities, 100, 100, 1024)
}

/// [`mcmc_matches_grid`] with explicit batch layout and oracle resolution.
pub fn mcmc_matches_grid_with(densities: usize, batches: usize, per_batch: usize, resolution: usize) -> Check {
    const NAME: &str = "sampler/mcmc-vs-grid";
    let mut rng = rng_for(31);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for d in 0..densities {
        let Some(q) = random_bump_sum(&mut rng) else {
            return Check::error(NAME, "could not build a bump sum");
        };
        let mut focus = unit_square_focus();
        if d % 2 == 1 {
            let center = [0.4 + 0.2 * rng.random::<f64>(), 0.4 + 0.2 * rng.random::<f64>()];
            match box_from_moments(&center, &Matrix::from_diag(&[0.04, 0.02]), 1.5) {
                Ok(b) => focus.push(Cut::Box(b)),
                Err(e) => return Check::error(NAME, e),
            }
        }
        let grid = match grid_oracle(|y: &[f64]| q.q(y), &focus, resolution) {
            Ok(g) => g,
            Err(e) => return Check::error(NAME, e),
        };
        let features = |y: &[f64]| [y[0], y[1], y[0] * y[0], y[1] * y[1], y[0] * y[1]];
        let truth: Vec<f64> = (0..5).map(|k| grid.expectation(|y| features(y)[k])).collect();
        let mut density = Density::Analytic {
            q,
            focus,
            chain: None,
        };
        let samples = match sample_p(&mut density, batches * per_batch, &ChainConfig::default(), &mut rng) {
            Ok(s) => s,
            Err(e) => return Check::error(NAME, e),
        };
        let mut acc = [Welford::default(); 5];
        for batch in samples.chunks(per_batch) {
            let mut sums = [0.0; 5];
            for y in batch {
                for (s, v) in sums.iter_mut().zip(features(y)) {
                    *s += v;
                }
            }
            for (a, s) in acc.iter_mut().zip(sums) {
                a.push(s / batch.len() as f64);
            }
        }
        for (k, (a, t)) in acc.iter().zip(&truth).enumerate() {
            let z = z_score(a, *t);
            worst = worst.max(z);
            if z > 3.0 {
                failures.push(format!("density {d} moment {k} z {z:.2}"));
            }
        }
    }
    Check::new(
        NAME,
        failures.is_empty(),
        format!(
            "{} of {} moments beyond 3 stderr; max z {worst:.2} {failures:?}",
            failures.len(),
            5 * densities
        ),
    )
}

pub fn sampler_determinism() -> Check {
    const NAME: &str = "sampler/determinism";
    let draw = || {
        let mut rng = rng_for(32);
        let q = random_bump_sum(&mut rng)?;
        let mut density = Density::Analytic {
            q,
            focus: unit_square_focus(),
            chain: None,
        };
        sample_p(&mut density, 200, &ChainConfig::default(), &mut rng).ok()
    };
    let (a, b) = (draw(), draw());
    let same = a.is_some()
        && a.as_ref().zip(b.as_ref()).is_some_and(|(a, b)| {
            a.iter()
                .flatten()
                .zip(b.iter().flatten())
                .all(|(u, v)| u.to_bits() == v.to_bits())
        });
    Check::new(NAME, same, "two runs from one seed agree bit for bit".into())
}

/// Every point within Mahalanobis radius `r` lies in the moment box, and every
/// point of the box lies within `√n r`.
pub fn box_sandwich(points: usize) -> Check {
    const NAME: &str = "geometry/box-sandwich";
    let mut rng = rng_for(33);
    let mut bad = 0;
    for _ in 0..10 {
        let a = Matrix::from_rows(&[
            vec![rng.random::<f64>() + 0.2, rng.random::<f64>() - 0.5],
            vec![rng.random::<f64>() - 0.5, rng.random::<f64>() + 0.2],
        ]);
        let cov = a.matmul(&a.transpose());
        let mean = vec![rng.random::<f64>(), rng.random::<f64>()];
        let r = 0.5 + rng.random::<f64>();
        let b = match box_from_moments(&mean, &cov, r) {
            Ok(b) => b,
            Err(e) => return Check::error(NAME, e),
        };
        let chol = match kbco_core::linalg::Cholesky::new(&cov) {
            Ok(c) => c.lower().clone(),
            Err(e) => return Check::error(NAME, e),
        };
        let oriented: OrientedBox<f64> = b.as_oriented_box();
        for _ in 0..points / 10 {
            let x = ellipsoid_draw(&mean, &chol, r * (1.0 - 1e-9), &mut rng);
            if !b.contains(&x) {
                bad += 1;
            }
            // uniform point of the box
            let u: Vec<f64> = oriented
                .half_widths
                .iter()
                .map(|h| h * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let rotated = oriented.rotation.transpose().mul_vec(&u);
            let y: Vec<f64> = oriented.center.iter().zip(&rotated).map(|(c, v)| c + v).collect();
            match mahalanobis_norm(&y, &mean, &cov) {
                Ok(d) if d <= 2.0_f64.sqrt() * r * (1.0 + 1e-9) => {}
                _ => bad += 1,
            }
        }
    }
    Check::new(NAME, bad == 0, format!("{bad} of {} sampled points misplaced", 2 * (points / 10) * 10))
}

// ---------------------------------------------------------------- engine

/// Exponential-weights telescoping inequality on random small instances:
/// 50 atoms, 30 rounds, losses in `[0, 3]`, random rates and nested regions.
pub fn telescoping(instances: usize) -> Check {
    const NAME: &str = "engine/telescoping";
    let mut rng = rng_for(41);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..instances {
        let (m, rounds) = (50, 30);
        let losses: Vec<Vec<f64>> = (0..rounds)
            .map(|_| (0..m).map(|_| 3.0 * rng.random::<f64>()).collect())
            .collect();
        let etas: Vec<f64> = (0..rounds).map(|_| 0.01 + rng.random::<f64>()).collect();
        let mut regions = vec![vec![true; m]];
        for _ in 0..rounds {
            let mut next = regions.last().cloned().unwrap_or_default();
            for cell in next.iter_mut() {
                if *cell && rng.random::<f64>() < 0.03 {
                    *cell = false;
                }
            }
            if !next.iter().any(|&c| c) {
                next = regions.last().cloned().unwrap_or_default();
            }
            regions.push(next);
        }
        let slack = match telescoping_slack(&losses, &etas, &regions) {
            Ok(s) => s,
            Err(e) => return Check::error(NAME, e),
        };
        for (_, s) in slack {
            worst = worst.min(s);
            if s < -1e-9 {
                violations += 1;
            }
        }
    }
    Check::new(
        NAME,
        violations == 0,
        format!("{violations} violations over {instances} instances; min slack {worst:.3e}"),
    )
}

fn centered_square() -> ConvexBody<f64> {
    ConvexBody::Box(OrientedBox::axis_aligned(vec![0.0, 0.0], vec![0.5, 0.5]))
}

/// Theory preset at `n = 2`, `T = 2·10⁴`, on a square centered at the
/// origin: after 100 engine rounds, draws of `K[p]p` fall outside `Ω` at most
/// 1% of the time.
pub fn omega_coverage(draws: usize) -> Check {
    const NAME: &str = "engine/omega-coverage";
    let result = (|| -> kbco_core::Result<(usize, usize, f64)> {
        let body = centered_square();
        let params = AlgoParams::<f64>::theory(2, DESK_HORIZON)?;
        let env = QuadraticLoss::new(body.clone(), vec![0.1, -0.2])?;
        let mut state = EngineState::new(body, params, EngineConfig::for_dim(2))?;
        let mut streams = RunStreams::new(VERIFY_SEED, 42);
        let mut trace = RunTrace::new(2);
        for t in 1..=100 {
            let o = state.step(t, &env, &mut streams, &mut trace)?;
            trace.push(o.record);
        }
        let trace_outside = trace.records.iter().filter(|r| !r.in_omega).count();
        let p = state
            .grid_density()
            .ok_or_else(|| kbco_core::Error::Unsupported("grid backend expected".into()))?
            .clone();
        let core = gaussian_core(&state.mean, &state.covariance, &state.params.kernel)?;
        let atoms = WeightedIndex::new(p.weights())
            .map_err(|e| kbco_core::Error::InfeasibleRegion(e.to_string()))?;
        let mut rng = rng_for(43);
        let lambda = state.params.kernel.lambda();
        let mut outside = 0;
        for _ in 0..draws {
            let mut draw_p = |r: &mut StreamRng| p.point(atoms.sample(r)).to_vec();
            let x = kernel_sample(&core, &mut draw_p, lambda, &mut rng);
            if !state.omega_contains(&x)? {
                outside += 1;
            }
        }
        Ok((outside, trace_outside, lambda))
    })();
    match result {
        Ok((outside, trace_outside, lambda)) => {
            let fraction = outside as f64 / draws as f64;
            Check::new(
                NAME,
                fraction <= 0.01,
                format!(
                    "{fraction:.4} of {draws} draws outside Omega (lambda {lambda:.2e}); \
                     {trace_outside} of 100 engine plays outside"
                ),
            )
        }
        Err(e) => Check::error(NAME, e),
    }
}

/// Engine bookkeeping over a run that cuts: `η_t = η₁ (1+γ)^N`, nested focus
/// regions between restarts, `min Q = 0` after every round, one record per
/// round.
pub fn engine_invariants(horizon: usize) -> Check {
    const NAME: &str = "engine/bookkeeping";
    let result = (|| -> kbco_core::Result<String> {
        let body = ConvexBody::unit_cube(2);
        let overrides = ParamOverrides {
            eta1: Some(0.5),
            ..ParamOverrides::default()
        };
        let params = AlgoParams::<f64>::from_preset(Preset::Practical, 2, horizon, overrides)?;
        let env = make_env(
            &EnvSpec::Quadratic {
                optimum: vec![0.3, 0.6],
            },
            body.clone(),
            horizon,
            1,
        )?;
        let config = EngineConfig::for_dim(2);
        let mut state = EngineState::new(body.clone(), params, config)?;
        let mut eta1 = params.eta1;
        let mut streams = RunStreams::new(VERIFY_SEED, 44);
        let mut trace = RunTrace::new(2);
        let mut problems = Vec::new();
        let mut max_cuts = 0;
        for t in 1..=horizon {
            let before = state.focus.clone();
            let o = state.step(t, env.as_ref(), &mut streams, &mut trace)?;
            trace.push(o.record);
            let expected = eta1 * (1.0 + state.params.gamma).powi(state.cuts as i32);
            if (state.eta - expected).abs() > 1e-12 * expected {
                problems.push(format!("t={t}: eta {} vs {expected}", state.eta));
            }
            if !state.focus.is_refinement_of(&before) {
                problems.push(format!("t={t}: focus region grew"));
            }
            if state.q_reference_min().abs() > 1e-9 {
                problems.push(format!("t={t}: min Q = {}", state.q_reference_min()));
            }
            max_cuts = max_cuts.max(state.cuts);
            if o.restart && t < horizon {
                let p = params.with_horizon(horizon - t)?;
                eta1 = p.eta1;
                state = EngineState::new(body.clone(), p, config)?;
            }
        }
        if trace.len() != horizon {
            problems.push(format!("{} records for {horizon} rounds", trace.len()));
        }
        if problems.is_empty() {
            Ok(format!(
                "{horizon} rounds, up to {max_cuts} cuts, {} restarts",
                trace.restart_times.len()
            ))
        } else {
            Err(kbco_core::Error::InvalidParameter(problems[..problems.len().min(3)].join("; ")))
        }
    })();
    match result {
        Ok(detail) => Check::new(NAME, true, detail),
        Err(e) => Check::error(NAME, e),
    }
}

/// Every built-in loss: outputs in `[0, 1]`, midpoint convexity, and the
/// exact corruption count.
pub fn environment_invariants() -> Check {
    const NAME: &str = "environments/invariants";
    let mut rng = rng_for(45);
    let horizon = 1000;
    let specs = [
        EnvSpec::Constant { value: 0.4 },
        EnvSpec::Linear {
            direction: vec![1.0, -2.0],
        },
        EnvSpec::Quadratic {
            optimum: vec![0.3, 0.6],
        },
        EnvSpec::Abs {
            optimum: vec![0.7, 0.2],
        },
        EnvSpec::Stochastic {
            inner: Box::new(EnvSpec::Abs {
                optimum: vec![0.5, 0.5],
            }),
            noise_scale: 0.3,
        },
        EnvSpec::MovingOptimum {
            switch_round: 500,
            first: vec![0.2, 0.2],
            second: vec![0.8, 0.8],
        },
    ];
    let mut worst_convexity: f64 = 0.0;
    let mut out_of_range = 0;
    for spec in &specs {
        let env = match make_env(spec, ConvexBody::unit_cube(2), horizon, 3) {
            Ok(e) => e,
            Err(e) => return Check::error(NAME, e),
        };
        for t in [1, 499, 500, 1000] {
            worst_convexity = worst_convexity.max(convexity_violation(env.as_ref(), t, 1000, &mut rng));
        }
        for t in 1..=horizon {
            let x = [rng.random::<f64>() * 1.4 - 0.2, rng.random::<f64>() * 1.4 - 0.2];
            let v = env.query(t, &x, &mut rng);
            if !(0.0..=1.0).contains(&v) {
                out_of_range += 1;
            }
        }
    }
    let mut bad_counts = 0;
    for fraction in [0.0, 0.013, 0.1, 0.5] {
        let inner = Box::new(QuadraticLoss::new(ConvexBody::unit_cube(2), vec![0.5, 0.5]).expect("valid optimum"));
        match CorruptedLoss::new(inner, fraction, horizon, 9) {
            Ok(c) => {
                let expected = (fraction * horizon as f64).floor() as usize;
                let counted = (1..=horizon).filter(|&t| c.is_corrupted(t)).count();
                if c.corrupted_rounds() != expected || counted != expected {
                    bad_counts += 1;
                }
            }
            Err(e) => return Check::error(NAME, e),
        }
    }
    Check::new(
        NAME,
        worst_convexity <= 1e-9 && out_of_range == 0 && bad_counts == 0,
        format!(
            "max midpoint violation {worst_convexity:.2e}, {out_of_range} outputs outside [0, 1], \
             {bad_counts} wrong corruption counts"
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_direct_formulas() {
        let mut w = Welford::default();
        for v in [1.0, 2.0, 4.0, 7.0] {
            w.push(v);
        }
        assert!((w.mean() - 3.5).abs() < 1e-12);
        let var = ((2.5f64).powi(2) + 1.5f64.powi(2) + 0.5f64.powi(2) + 3.5f64.powi(2)) / 3.0;
        assert!((w.stderr() - (var / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn convex_test_functions_are_convex_and_lipschitz() {
        let mut rng = rng_for(99);
        for _ in 0..50 {
            let f = ConvexPl::random(2, 10.0, 0.0, 1.0, &mut rng);
            for _ in 0..50 {
                let a = [rng.random::<f64>(), rng.random::<f64>()];
                let b = [rng.random::<f64>(), rng.random::<f64>()];
                let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                assert!(f.eval(&mid) <= (f.eval(&a) + f.eval(&b)) / 2.0 + 1e-12);
                let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                assert!((f.eval(&a) - f.eval(&b)).abs() <= 10.0 * dist + 1e-12);
                assert!(f.eval(&a) >= 0.0);
            }
        }
    }

    #[test]
    fn cheap_properties_pass() {
        for check in [
            k1_kernel_mass(),
            k1_second_moment(),
            k1_half_domination(5),
            k1_lipschitz_pieces(5),
            box_sandwich(200),
            telescoping(10),
            sampler_determinism(),
            environment_invariants(),
        ] {
            assert!(check.passed, "{check}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let check = k1_unbiasedness(20_000, Mutation::K1SignFlip);
        assert!(!check.passed, "{check}");
        let check = k1_unbiasedness(20_000, Mutation::None);
        assert!(check.passed, "{check}");
    }
}
