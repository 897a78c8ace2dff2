//! Exact discrete densities on regular grids (`n <= 2` in practice).
//!
//! A grid density is a weighted set of atoms at cell centers. Log-weights are
//! the source of truth; normalized linear weights are cached and refreshed on
//! every mutation so hot loops never recompute the exponentials.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity<S> {
    dim: usize,
    /// Row-major atom coordinates, `len * dim` entries.
    points: Vec<S>,
    log_weights: Vec<S>,
    weights: Vec<S>,
    cell_volume: S,
}

impl<S: Real> GridDensity<S> {
    /// Uniform density on `m` cell centers `lo + (i + 1/2) (hi - lo) / m`.
    pub fn uniform_interval(m: usize, lo: S, hi: S) -> Result<Self> {
        Self::uniform_box(m, &[lo], &[hi])
    }

    /// Uniform density on the `resolution^n` cell centers of an axis box.
    pub fn uniform_box(resolution: usize, lo: &[S], hi: &[S]) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidParameter("grid resolution must be positive".into()));
        }
        let dim = lo.len();
        if hi.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: hi.len(),
            });
        }
        let count = resolution
            .checked_pow(dim as u32)
            .filter(|&c| c <= 1 << 26)
            .ok_or_else(|| Error::InvalidParameter("grid too large".into()))?;
        let steps: Vec<S> = (0..dim)
            .map(|k| (hi[k] - lo[k]) / S::of_usize(resolution))
            .collect();
        let mut points = Vec::with_capacity(count * dim);
        for idx in 0..count {
            let mut rest = idx;
            for k in 0..dim {
                let i = rest % resolution;
                rest /= resolution;
                points.push(lo[k] + (S::of_usize(i) + S::of(0.5)) * steps[k]);
            }
        }
        let cell_volume = steps.iter().fold(S::one(), |v, &s| v * s);
        Ok(Self::from_parts(dim, points, vec![S::zero(); count], cell_volume))
    }

    /// Builds and normalizes a density from atoms and unnormalized log-weights.
    pub fn from_parts(dim: usize, points: Vec<S>, log_weights: Vec<S>, cell_volume: S) -> Self {
        assert_eq!(points.len(), dim * log_weights.len(), "points and weights disagree");
        let mut d = Self {
            dim,
            points,
            weights: vec![S::zero(); log_weights.len()],
            log_weights,
            cell_volume,
        };
        d.normalize();
        d
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[S] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[S]> {
        self.points.chunks(self.dim)
    }

    pub fn cell_volume(&self) -> S {
        self.cell_volume
    }

    /// Normalized log-weights (`-inf` on truncated cells).
    pub fn log_weights(&self) -> &[S] {
        &self.log_weights
    }

    /// Normalized probabilities; truncated cells are exactly zero.
    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    /// Shifts log-weights so they sum to one in linear scale. A density whose
    /// every cell is truncated stays all-zero.
    pub fn normalize(&mut self) {
        let lse = log_sum_exp(self.log_weights.iter().copied());
        if !lse.is_finite() {
            self.weights.iter_mut().for_each(|w| *w = S::zero());
            return;
        }
        for (lw, w) in self.log_weights.iter_mut().zip(self.weights.iter_mut()) {
            *lw = *lw - lse;
            *w = lw.exp();
        }
    }

    /// Multiplicative-weights step `p <- p exp(-eta * loss)`, renormalized.
    pub fn exp_update(&mut self, loss: &[S], eta: S) {
        for (lw, &l) in self.log_weights.iter_mut().zip(loss) {
            if lw.is_finite() {
                *lw = *lw - eta * l;
            }
        }
        self.normalize();
    }

    /// Zeroes cells whose atom fails `keep`, then renormalizes.
    pub fn restrict(&mut self, keep: impl Fn(&[S]) -> bool) {
        for i in 0..self.len() {
            if !keep(&self.points[i * self.dim..(i + 1) * self.dim]) {
                self.log_weights[i] = S::neg_infinity();
            }
        }
        self.normalize();
    }

    /// Overwrites the log-weights from `f(point)`; `-inf` truncates.
    pub fn set_log_weights(&mut self, mut f: impl FnMut(&[S]) -> S) {
        for i in 0..self.len() {
            self.log_weights[i] = f(&self.points[i * self.dim..(i + 1) * self.dim]);
        }
        self.normalize();
    }

    pub fn expectation(&self, f: impl Fn(&[S]) -> S) -> S {
        self.points()
            .zip(&self.weights)
            .filter(|(_, &w)| w > S::zero())
            .fold(S::zero(), |acc, (x, &w)| acc + w * f(x))
    }

    pub fn mean(&self) -> Vec<S> {
        let mut m = vec![S::zero(); self.dim];
        for (x, &w) in self.points().zip(&self.weights) {
            for k in 0..self.dim {
                m[k] = m[k] + w * x[k];
            }
        }
        m
    }

    /// Exact covariance of the atomic measure.
    pub fn covariance(&self) -> Matrix<S> {
        let mean = self.mean();
        let mut c = Matrix::zeros(self.dim, self.dim);
        for (x, &w) in self.points().zip(&self.weights) {
            if w == S::zero() {
                continue;
            }
            for i in 0..self.dim {
                for j in 0..=i {
                    c[(i, j)] = c[(i, j)] + w * (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        for i in 0..self.dim {
            for j in 0..i {
                c[(j, i)] = c[(i, j)];
            }
        }
        c
    }

    /// Number of cells with positive weight.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w > S::zero()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_interval_moments() {
        let g = GridDensity::<f64>::uniform_interval(1000, 0.0, 1.0).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g.mean()[0] - 0.5).abs() < 1e-12);
        // discrete uniform variance (1 - 1/m^2) / 12
        let v = g.covariance()[(0, 0)];
        assert!((v - (1.0 - 1e-6) / 12.0).abs() < 1e-12);
    }

    #[test]
    fn box_grid_layout_and_truncation() {
        let mut g = GridDensity::<f64>::uniform_box(4, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.point(1), &[0.375, 0.25]);
        assert!((g.cell_volume() - 0.125).abs() < 1e-15);
        g.restrict(|x| x[0] < 0.5);
        assert_eq!(g.support_size(), 8);
        assert!((g.mean()[0] - 0.25).abs() < 1e-12);
        assert!(g.log_weights().iter().filter(|v| v.is_infinite()).count() == 8);
    }

    #[test]
    fn exp_update_is_multiplicative() {
        let mut g = GridDensity::<f64>::uniform_interval(2, 0.0, 1.0).unwrap();
        g.exp_update(&[0.0, 2f64.ln()], 1.0);
        assert!((g.weights()[0] - 2.0 / 3.0).abs() < 1e-12);
        g.exp_update(&[1e6, 0.0], 1.0);
        assert_eq!(g.weights()[0], 0.0);
        assert!((g.weights()[1] - 1.0).abs() < 1e-12);
    }
}
