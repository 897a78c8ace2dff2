//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;

/// Floating point scalar the library is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize is representable in every Real")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::of(rng.random::<f64>())
    }

    /// Standard normal draw.
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::of(rng.sample::<f64, _>(rand_distr::StandardNormal))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `log(sum(exp(v)))` computed stably; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<S: Real>(values: impl IntoIterator<Item = S> + Clone) -> S {
    let max = values
        .clone()
        .into_iter()
        .fold(S::neg_infinity(), |m, v| if v > m { v } else { m });
    if !max.is_finite() {
        return max;
    }
    let acc: S = values.into_iter().map(|v| (v - max).exp()).sum();
    max + acc.ln()
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |s, (&x, &y)| s + x * y)
}

pub fn norm<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn sub<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn axpy<S: Real>(alpha: S, x: &[S], y: &[S]) -> Vec<S> {
    x.iter().zip(y).map(|(&xi, &yi)| alpha * xi + yi).collect()
}

/// Uniformly random unit vector in `dim` dimensions.
pub fn random_direction<S: Real, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<S> {
    loop {
        let v: Vec<S> = (0..dim).map(|_| S::standard_normal(rng)).collect();
        let len = norm(&v);
        if len > S::of(1e-12) {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}
