//! Gaussian-core kernels in `n` dimensions.
//!
//! For a distribution `p` with mean `μ` and covariance `Σ_p`, the core is
//! `c[p] = N(μ, σ² λ Σ_p)` and the kernel moves `δ_y` to the law of
//! `λ y + (1 - λ) C` with `C ~ c[p]`, whose density is
//! `K(x, y) = c((x - λ y) / (1 - λ)) (1 - λ)^{-n}`.
//! All Gaussian evaluations happen in log space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::regularize;
use crate::linalg::{Cholesky, Matrix, SymmetricEigen};
use crate::scalar::{log_sum_exp, Real};

/// `ε = 1/(80 e · 20)`, the width constant of the convex-domination argument.
pub fn theory_eps<S: Real>() -> S {
    S::one() / (S::of(80.0 * 20.0) * S::E())
}

/// Default truncation tolerance of [`core_series_sample`].
pub const SERIES_TOLERANCE: f64 = 1e-6;

/// Floor applied to an underflowing mixture density estimate.
pub const U_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams<S> {
    lambda: S,
    sigma2: S,
    eps: S,
}

impl<S: Real> KernelParams<S> {
    pub fn new(lambda: S, sigma2: S, eps: S) -> Result<Self> {
        if !(lambda > S::zero() && lambda < S::of(0.5)) {
            return Err(Error::InvalidParameter(format!("lambda must lie in (0, 1/2), got {lambda}")));
        }
        if !(sigma2 > S::zero() && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(eps > S::zero() && eps < S::one() / S::E()) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0, 1/e), got {eps}")));
        }
        Ok(Self { lambda, sigma2, eps })
    }

    /// `σ² = ε² / ((n log T)(2 - λ))` with the theory `ε`, so that the core
    /// covariance equals `ε²/(n log T) · λ/(2-λ) · Σ_p`.
    pub fn theory_mapping(dim: usize, horizon: usize, lambda: S) -> Result<Self> {
        let eps = theory_eps::<S>();
        let nlogt = S::of_usize(dim) * S::of_usize(horizon.max(2)).ln();
        Self::new(lambda, eps * eps / (nlogt * (S::of(2.0) - lambda)), eps)
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    pub fn sigma2(&self) -> S {
        self.sigma2
    }

    pub fn eps(&self) -> S {
        self.eps
    }

    /// Factor `σ² λ` applied to `Σ_p`.
    pub fn core_scale(&self) -> S {
        self.sigma2 * self.lambda
    }
}

/// A Gaussian `N(mean, covariance)` with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCore<S> {
    mean: Vec<S>,
    covariance: Matrix<S>,
    chol: Cholesky<S>,
    log_norm: S,
    shifted: bool,
}

impl<S: Real> GaussianCore<S> {
    pub fn new(mean: Vec<S>, covariance: Matrix<S>) -> Result<Self> {
        if covariance.rows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: covariance.rows(),
            });
        }
        let chol = Cholesky::new(&covariance)?;
        let n = S::of_usize(mean.len());
        let log_norm = -(n * (S::of(2.0) * S::PI()).ln() + chol.log_det()) * S::of(0.5);
        Ok(Self {
            mean,
            covariance,
            chol,
            log_norm,
            shifted: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix<S> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &Cholesky<S> {
        &self.chol
    }

    /// True when the mean is an empirical sample mean rather than `μ(p)`.
    pub fn is_shifted(&self) -> bool {
        self.shifted
    }

    /// `(z - mean)^T Σ^{-1} (z - mean)`.
    pub fn mahalanobis_sq(&self, z: &[S]) -> S {
        let d: Vec<S> = z.iter().zip(&self.mean).map(|(&a, &b)| a - b).collect();
        self.chol.inv_quad_form(&d)
    }

    pub fn log_pdf(&self, z: &[S]) -> S {
        self.log_norm - self.mahalanobis_sq(z) * S::of(0.5)
    }

    /// Log of the peak density.
    pub fn log_peak(&self) -> S {
        self.log_norm
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let z: Vec<S> = (0..self.dim()).map(|_| S::standard_normal(rng)).collect();
        self.chol
            .mul_lower(&z)
            .iter()
            .zip(&self.mean)
            .map(|(&a, &m)| a + m)
            .collect()
    }
}

fn check_psd<S: Real>(cov: &Matrix<S>) -> Result<()> {
    let eig = SymmetricEigen::new(cov);
    let scale = eig.values.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    if eig.values.iter().any(|&v| v < -S::of(1e-9) * scale) {
        return Err(Error::DegenerateGeometry("covariance is not positive semidefinite".into()));
    }
    Ok(())
}

/// `c[p] = N(mean, σ² λ Σ_p)` (with `Σ_p` jitter-regularized).
pub fn gaussian_core<S: Real>(mean: &[S], covariance: &Matrix<S>, params: &KernelParams<S>) -> Result<GaussianCore<S>> {
    check_psd(covariance)?;
    GaussianCore::new(mean.to_vec(), regularize(covariance).scale(params.core_scale()))
}

/// Core translated to the empirical mean of `samples` (all drawn from `p`),
/// with covariance `σ² λ A` for an estimate `A` of `Σ_p`.
pub fn shifted_core<S: Real>(
    samples: &[Vec<S>],
    covariance_estimate: &Matrix<S>,
    params: &KernelParams<S>,
) -> Result<GaussianCore<S>> {
    let first = samples.first().ok_or(Error::NotEnoughSamples { needed: 1, got: 0 })?;
    let k = S::of_usize(samples.len());
    let mut mean = vec![S::zero(); first.len()];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m = *m + v / k;
        }
    }
    let mut core = gaussian_core(&mean, covariance_estimate, params)?;
    core.shifted = true;
    Ok(core)
}

/// `log K(x, y)`.
pub fn kernel_log_density<S: Real>(core: &GaussianCore<S>, lambda: S, x: &[S], y: &[S]) -> S {
    let one_minus = S::one() - lambda;
    let z: Vec<S> = x.iter().zip(y).map(|(&a, &b)| (a - lambda * b) / one_minus).collect();
    core.log_pdf(&z) - S::of_usize(x.len()) * one_minus.ln()
}

/// `log K(x, y)` for many `y` at a fixed `x`, without per-point allocation.
pub fn kernel_log_densities<'a, S: Real>(
    core: &GaussianCore<S>,
    lambda: S,
    x: &[S],
    ys: impl Iterator<Item = &'a [S]>,
) -> Vec<S> {
    let n = x.len();
    let one_minus = S::one() - lambda;
    let shift: Vec<S> = x
        .iter()
        .zip(core.mean())
        .map(|(&a, &m)| a / one_minus - m)
        .collect();
    let w = core.cholesky().solve_lower(&shift);
    // rows of c L^{-1}, with c = λ/(1-λ)
    let c = lambda / one_minus;
    let mut linv = vec![S::zero(); n * n];
    for k in 0..n {
        let mut e = vec![S::zero(); n];
        e[k] = S::one();
        for (i, v) in core.cholesky().solve_lower(&e).into_iter().enumerate() {
            linv[i * n + k] = c * v;
        }
    }
    let constant = core.log_peak() - S::of_usize(n) * one_minus.ln();
    ys.map(|y| {
        let mut quad = S::zero();
        for i in 0..n {
            let mut v = w[i];
            for k in 0..=i {
                v = v - linv[i * n + k] * y[k];
            }
            quad = quad + v * v;
        }
        constant - quad * S::of(0.5)
    })
    .collect()
}

/// `K(x, y) = c((x - λ y)/(1 - λ)) (1 - λ)^{-n}`.
pub fn kernel_density<S: Real>(core: &GaussianCore<S>, lambda: S, x: &[S], y: &[S]) -> S {
    kernel_log_density(core, lambda, x, y).exp()
}

/// `λ X + (1 - λ) C` with `X` from `draw_p` and `C ~ core`.
pub fn kernel_sample<S: Real, R: Rng + ?Sized>(
    core: &GaussianCore<S>,
    draw_p: &mut dyn FnMut(&mut R) -> Vec<S>,
    lambda: S,
    rng: &mut R,
) -> Vec<S> {
    let x = draw_p(rng);
    let c = core.sample(rng);
    x.iter()
        .zip(&c)
        .map(|(&xi, &ci)| lambda * xi + (S::one() - lambda) * ci)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UEstimate<S> {
    pub value: S,
    /// Set when the estimate underflowed and was replaced by the floor.
    pub floored: bool,
}

/// Monte Carlo estimate of `K p(x)`: the mean of `K(x, X_i)` over samples of `p`.
pub fn estimate_u<S: Real>(x: &[S], p_samples: &[Vec<S>], core: &GaussianCore<S>, lambda: S) -> Result<UEstimate<S>> {
    if p_samples.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let logs: Vec<S> = p_samples
        .iter()
        .map(|y| kernel_log_density(core, lambda, x, y))
        .collect();
    let log_u = log_sum_exp(logs.iter().copied()) - S::of_usize(p_samples.len()).ln();
    let value = log_u.exp();
    let floor = S::of(U_FLOOR).max(S::min_positive_value());
    if value < floor || !value.is_finite() {
        Ok(UEstimate { value: floor, floored: true })
    } else {
        Ok(UEstimate { value, floored: false })
    }
}

/// One loss-estimate term `y ↦ weight · K(x_t, y)`, `weight = ℓ / u`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBump<S> {
    pub weight: S,
    pub center_sample: Vec<S>,
    pub core: GaussianCore<S>,
    pub lambda: S,
    /// Learning rate in force when the bump was created.
    pub eta: S,
}

impl<S: Real> GaussianBump<S> {
    /// `log(bump(y))`; `-inf` for a zero-weight bump.
    pub fn log_value(&self, y: &[S]) -> S {
        if self.weight == S::zero() {
            return S::neg_infinity();
        }
        self.weight.ln() + kernel_log_density(&self.core, self.lambda, &self.center_sample, y)
    }

    pub fn value(&self, y: &[S]) -> S {
        if self.weight == S::zero() {
            return S::zero();
        }
        self.log_value(y).exp()
    }

    /// `∇_y bump(y) = bump(y) · λ/(1-λ) · Σ_c^{-1} (z - m)`.
    pub fn gradient(&self, y: &[S]) -> Vec<S> {
        let v = self.value(y);
        self.log_gradient(y).into_iter().map(|g| g * v).collect()
    }

    /// `∇_y log K(x_t, y) = λ/(1-λ) · Σ_c^{-1} (z - m)`, finite even where
    /// the bump itself underflows.
    pub fn log_gradient(&self, y: &[S]) -> Vec<S> {
        let one_minus = S::one() - self.lambda;
        let d: Vec<S> = self
            .center_sample
            .iter()
            .zip(y)
            .zip(self.core.mean())
            .map(|((&x, &yi), &m)| (x - self.lambda * yi) / one_minus - m)
            .collect();
        let s = self.core.cholesky().solve(&d);
        let k = self.lambda / one_minus;
        s.into_iter().map(|g| g * k).collect()
    }

    /// Point where the bump peaks as a function of `y`.
    pub fn mode(&self) -> Vec<S> {
        let one_minus = S::one() - self.lambda;
        self.center_sample
            .iter()
            .zip(self.core.mean())
            .map(|(&x, &m)| (x - one_minus * m) / self.lambda)
            .collect()
    }
}

/// Builds `ℓ̃_t`; `in_omega = false` zeroes the weight.
pub fn make_bump<S: Real>(
    x_t: &[S],
    loss: S,
    u: S,
    core: &GaussianCore<S>,
    lambda: S,
    eta: S,
    in_omega: bool,
) -> Result<GaussianBump<S>> {
    if !(u > S::zero()) {
        return Err(Error::EstimatorUndefined(u.f64()));
    }
    if !(loss >= S::zero() && loss <= S::one()) {
        return Err(Error::InvalidParameter(format!("loss must lie in [0, 1], got {loss}")));
    }
    Ok(GaussianBump {
        weight: if in_omega { loss / u } else { S::zero() },
        center_sample: x_t.to_vec(),
        core: core.clone(),
        lambda,
        eta,
    })
}

/// Truncated draw of `Z = Σ_k (1-λ)^k λ X_k`.
///
/// With `K = ⌈log(D/tol) / -log(1-λ)⌉`, the first `K` terms are summed and
/// the tail is replaced by `(1-λ)^K X_K`; since the tail equals `(1-λ)^K Z'`
/// for a copy `Z'` supported in the hull of the support of `X` (diameter
/// `D`), the result is within `tol` of an exact draw.
pub fn core_series_sample<S: Real, R: Rng + ?Sized>(
    draw_x: &mut dyn FnMut(&mut R) -> Vec<S>,
    lambda: S,
    diameter: S,
    tol: S,
    rng: &mut R,
) -> Result<Vec<S>> {
    if !(lambda > S::zero() && lambda < S::one()) {
        return Err(Error::InvalidParameter("lambda must lie in (0, 1)".into()));
    }
    if !(tol > S::zero()) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let ratio = (diameter / tol).max(S::one());
    let terms = (ratio.ln() / -(S::one() - lambda).ln()).ceil().to_usize().unwrap_or(0);
    let mut weight = lambda;
    let first = draw_x(rng);
    let mut z: Vec<S> = first.iter().map(|&v| v * weight).collect();
    let mut decay = S::one() - lambda;
    for _ in 1..terms {
        weight = weight * (S::one() - lambda);
        let x = draw_x(rng);
        for (zi, &xi) in z.iter_mut().zip(&x) {
            *zi = *zi + weight * xi;
        }
        decay = decay * (S::one() - lambda);
    }
    if terms == 0 {
        decay = S::one();
        z.iter_mut().for_each(|v| *v = S::zero());
    }
    let anchor = draw_x(rng);
    for (zi, &ai) in z.iter_mut().zip(&anchor) {
        *zi = *zi + decay * ai;
    }
    Ok(z)
}
