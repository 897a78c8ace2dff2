//! Convex bodies, Mahalanobis ellipsoids, moment boxes and focus regions.
//!
//! Everything here is a plain value type. Membership is closed (boundary
//! points belong to the set) up to a relative tolerance of a few ulps, and
//! every body can report the chord it cuts out of a line, which is what the
//! hit-and-run sampler and the restart search consume.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix, SymmetricEigen};
use crate::scalar::{dot, norm, sub, Real};

/// Relative jitter added to covariances before inversion.
pub const JITTER_RELATIVE: f64 = 1e-10;
/// A facet is kept when some point of it clears every other constraint by this margin.
pub const FACET_TOLERANCE: f64 = 1e-9;

fn contain_tol<S: Real>() -> S {
    S::of(1e-12).max(S::epsilon() * S::of(16.0))
}

/// Jitter `delta = 1e-10 * trace / n`, floored so an all-zero covariance
/// still becomes invertible.
pub fn jitter<S: Real>(cov: &Matrix<S>) -> S {
    let n = S::of_usize(cov.rows().max(1));
    let rel = S::of(JITTER_RELATIVE).max(S::epsilon());
    (rel * cov.trace().abs() / n).max(S::min_positive_value().sqrt())
}

/// Symmetrizes and adds the jitter to a covariance.
pub fn regularize<S: Real>(cov: &Matrix<S>) -> Matrix<S> {
    let n = cov.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (cov[(i, j)] + cov[(j, i)]) * S::of(0.5);
        }
    }
    out.add_diagonal(jitter(cov));
    out
}

/// `‖x - mean‖` in the `covariance^{-1}` norm (after jitter).
pub fn mahalanobis_norm<S: Real>(x: &[S], mean: &[S], covariance: &Matrix<S>) -> Result<S> {
    check_dim(mean.len(), x.len())?;
    check_dim(covariance.rows(), x.len())?;
    let ch = Cholesky::new(&regularize(covariance))?;
    Ok(ch.inv_quad_form(&sub(x, mean)).sqrt())
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `normal · x <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace<S> {
    pub normal: Vec<S>,
    pub offset: S,
}

impl<S: Real> Halfspace<S> {
    pub fn new(normal: Vec<S>, offset: S) -> Self {
        Self { normal, offset }
    }

    /// Signed slack `offset - normal · x`, scaled by `|normal|`.
    pub fn slack(&self, x: &[S]) -> S {
        (self.offset - dot(&self.normal, x)) / norm(&self.normal)
    }

    fn contains(&self, x: &[S]) -> bool {
        let scale = S::one() + self.offset.abs() + norm(&self.normal);
        dot(&self.normal, x) <= self.offset + contain_tol::<S>() * scale
    }
}

/// Intersects a running chord `[lo, hi]` with the halfspace along `x + t d`.
fn clip_chord<S: Real>(h: &Halfspace<S>, x: &[S], d: &[S], lo: &mut S, hi: &mut S) {
    let ad = dot(&h.normal, d);
    let gap = h.offset - dot(&h.normal, x);
    if ad > S::zero() {
        *hi = hi.min(gap / ad);
    } else if ad < S::zero() {
        *lo = lo.max(gap / ad);
    } else if gap < S::zero() {
        *lo = S::infinity();
        *hi = S::neg_infinity();
    }
}

/// Polytope in H-representation, optionally restricted to an affine subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope<S> {
    pub inequalities: Vec<Halfspace<S>>,
    /// Each entry `h` means `h.normal · x = h.offset`.
    pub equalities: Vec<Halfspace<S>>,
    dim: usize,
}

impl<S: Real> Polytope<S> {
    pub fn new(dim: usize, inequalities: Vec<Halfspace<S>>) -> Result<Self> {
        for h in &inequalities {
            check_dim(dim, h.normal.len())?;
        }
        Ok(Self {
            inequalities,
            equalities: Vec::new(),
            dim,
        })
    }

    /// `A x <= b` with `A` given by rows.
    pub fn from_matrix(a: &Matrix<S>, b: &[S]) -> Result<Self> {
        check_dim(a.rows(), b.len())?;
        let hs = (0..a.rows())
            .map(|i| Halfspace::new(a.row(i).to_vec(), b[i]))
            .collect();
        Self::new(a.cols(), hs)
    }

    /// `[0, 1]^n`.
    pub fn unit_cube(dim: usize) -> Self {
        Self::axis_box(&vec![S::zero(); dim], &vec![S::one(); dim])
    }

    pub fn axis_box(lo: &[S], hi: &[S]) -> Self {
        let dim = lo.len();
        let mut hs = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut e = vec![S::zero(); dim];
            e[i] = S::one();
            hs.push(Halfspace::new(e.clone(), hi[i]));
            e[i] = -S::one();
            hs.push(Halfspace::new(e, -lo[i]));
        }
        Self {
            inequalities: hs,
            equalities: Vec::new(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_equality(mut self, h: Halfspace<S>) -> Self {
        self.equalities.push(h);
        self
    }

    pub fn contains(&self, x: &[S]) -> bool {
        self.inequalities.iter().all(|h| h.contains(x))
            && self.equalities.iter().all(|h| {
                let scale = S::one() + h.offset.abs() + norm(&h.normal);
                (dot(&h.normal, x) - h.offset).abs() <= S::of(FACET_TOLERANCE) * scale
            })
    }

    /// Chord along `x + t d`; equalities are assumed to hold along `d`.
    pub fn chord(&self, x: &[S], d: &[S]) -> Option<(S, S)> {
        let mut lo = S::neg_infinity();
        let mut hi = S::infinity();
        for h in &self.inequalities {
            clip_chord(h, x, d, &mut lo, &mut hi);
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Largest inscribed ball (within the equality subspace): `(center, radius)`.
    pub fn chebyshev_center(&self) -> Result<(Vec<S>, S)> {
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let xs: Vec<_> = (0..self.dim)
            .map(|_| problem.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
            .collect();
        let r = problem.add_var(1.0, (0.0, 1e6));
        for h in &self.inequalities {
            let mut row: Vec<_> = xs
                .iter()
                .zip(&h.normal)
                .map(|(&v, a)| (v, a.f64()))
                .collect();
            row.push((r, norm(&h.normal).f64()));
            problem.add_constraint(&row, ComparisonOp::Le, h.offset.f64());
        }
        for h in &self.equalities {
            let row: Vec<_> = xs
                .iter()
                .zip(&h.normal)
                .map(|(&v, a)| (v, a.f64()))
                .collect();
            problem.add_constraint(&row, ComparisonOp::Eq, h.offset.f64());
        }
        let sol = problem
            .solve()
            .map_err(|e| Error::InfeasibleRegion(format!("polytope has no interior point: {e}")))?;
        let mut center: Vec<S> = xs.iter().map(|&v| S::of(sol[v])).collect();
        // the LP is solved to ~1e-9; snap back onto the affine constraints
        for h in &self.equalities {
            let gap = (dot(&h.normal, &center) - h.offset) / dot(&h.normal, &h.normal);
            for (c, &a) in center.iter_mut().zip(&h.normal) {
                *c = *c - gap * a;
            }
        }
        Ok((center, S::of(sol[r])))
    }

    /// Euclidean projection by Dykstra's alternating projections.
    pub fn project(&self, x: &[S]) -> Vec<S> {
        if self.contains(x) {
            return x.to_vec();
        }
        let sets: Vec<&Halfspace<S>> = self.inequalities.iter().collect();
        let mut y = x.to_vec();
        let mut incr = vec![vec![S::zero(); self.dim]; sets.len()];
        for _ in 0..2000 {
            let prev = y.clone();
            for (k, h) in sets.iter().enumerate() {
                let z: Vec<S> = y.iter().zip(&incr[k]).map(|(&a, &b)| a + b).collect();
                let viol = dot(&h.normal, &z) - h.offset;
                let p = if viol > S::zero() {
                    let nn = dot(&h.normal, &h.normal);
                    z.iter()
                        .zip(&h.normal)
                        .map(|(&zi, &ai)| zi - viol / nn * ai)
                        .collect()
                } else {
                    z.clone()
                };
                incr[k] = z.iter().zip(&p).map(|(&a, &b)| a - b).collect();
                y = p;
            }
            if norm(&sub(&y, &prev)) < S::of(1e-13) {
                break;
            }
        }
        y
    }
}

/// Box `{x : |rotation_i · (x - center)| <= half_widths_i}`; rows of
/// `rotation` are the box axes.
fn rotated_box_contains<S: Real>(rotation: &Matrix<S>, center: &[S], half_widths: &[S], x: &[S]) -> bool {
    let n = center.len();
    (0..n).all(|i| {
        let l = (0..n).fold(S::zero(), |acc, j| acc + rotation[(i, j)] * (x[j] - center[j]));
        let h = half_widths[i];
        l.abs() <= h + contain_tol::<S>() * (S::one() + h)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox<S> {
    pub center: Vec<S>,
    pub half_widths: Vec<S>,
    pub rotation: Matrix<S>,
}

impl<S: Real> OrientedBox<S> {
    pub fn axis_aligned(center: Vec<S>, half_widths: Vec<S>) -> Self {
        let n = center.len();
        Self {
            center,
            half_widths,
            rotation: Matrix::identity(n),
        }
    }

    pub fn halfspaces(&self) -> Vec<Halfspace<S>> {
        let mut hs = Vec::with_capacity(2 * self.center.len());
        for i in 0..self.center.len() {
            let u = self.rotation.row(i).to_vec();
            let c = dot(&u, &self.center);
            hs.push(Halfspace::new(u.clone(), c + self.half_widths[i]));
            hs.push(Halfspace::new(u.iter().map(|&v| -v).collect(), -(c - self.half_widths[i])));
        }
        hs
    }

    pub fn contains(&self, x: &[S]) -> bool {
        rotated_box_contains(&self.rotation, &self.center, &self.half_widths, x)
    }

    fn project(&self, x: &[S]) -> Vec<S> {
        let local = self.rotation.mul_vec(&sub(x, &self.center));
        let clamped: Vec<S> = local
            .iter()
            .zip(&self.half_widths)
            .map(|(&l, &h)| l.max(-h).min(h))
            .collect();
        let back = self.rotation.transpose().mul_vec(&clamped);
        back.iter().zip(&self.center).map(|(&a, &c)| a + c).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexBody<S> {
    Interval { lo: S, hi: S },
    Ball { center: Vec<S>, radius: S },
    Polytope(Polytope<S>),
    Box(OrientedBox<S>),
}

impl<S: Real> ConvexBody<S> {
    pub fn unit_interval() -> Self {
        Self::Interval {
            lo: S::zero(),
            hi: S::one(),
        }
    }

    pub fn unit_cube(dim: usize) -> Self {
        Self::Box(OrientedBox::axis_aligned(
            vec![S::of(0.5); dim],
            vec![S::of(0.5); dim],
        ))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::Ball { center, .. } => center.len(),
            Self::Polytope(p) => p.dim(),
            Self::Box(b) => b.center.len(),
        }
    }

    /// Checks the nonempty-interior invariant.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Interval { lo, hi } => lo < hi,
            Self::Ball { radius, .. } => *radius > S::zero(),
            Self::Box(b) => {
                b.half_widths.iter().all(|&h| h > S::zero())
                    && b.rotation
                        .matmul(&b.rotation.transpose())
                        .max_abs_diff(&Matrix::identity(b.center.len()))
                        < S::of(1e-6)
            }
            Self::Polytope(p) => p.chebyshev_center()?.1 > S::of(FACET_TOLERANCE),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateGeometry("convex body has empty interior".into()))
        }
    }

    pub fn contains(&self, x: &[S]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Self::Interval { lo, hi } => {
                let tol = contain_tol::<S>() * (S::one() + lo.abs().max(hi.abs()));
                x[0] >= *lo - tol && x[0] <= *hi + tol
            }
            Self::Ball { center, radius } => {
                let d = norm(&sub(x, center));
                d <= *radius + contain_tol::<S>() * (S::one() + *radius)
            }
            Self::Polytope(p) => p.contains(x),
            Self::Box(b) => b.contains(x),
        }
    }

    /// H-representation when the body is polyhedral.
    pub fn halfspaces(&self) -> Option<Vec<Halfspace<S>>> {
        match self {
            Self::Interval { lo, hi } => Some(vec![
                Halfspace::new(vec![S::one()], *hi),
                Halfspace::new(vec![-S::one()], -*lo),
            ]),
            Self::Ball { .. } => None,
            Self::Polytope(p) if p.equalities.is_empty() => Some(p.inequalities.clone()),
            Self::Polytope(_) => None,
            Self::Box(b) => Some(b.halfspaces()),
        }
    }

    /// Parameter range `[lo, hi]` of `{t : x + t d ∈ body}`.
    pub fn chord(&self, x: &[S], d: &[S]) -> Option<(S, S)> {
        match self {
            Self::Interval { lo, hi } => {
                if d[0] == S::zero() {
                    return (x[0] >= *lo && x[0] <= *hi)
                        .then_some((S::neg_infinity(), S::infinity()));
                }
                let a = (*lo - x[0]) / d[0];
                let b = (*hi - x[0]) / d[0];
                Some((a.min(b), a.max(b)))
            }
            Self::Ball { center, radius } => {
                let rel = sub(x, center);
                sphere_chord(dot(d, d), dot(d, &rel), dot(&rel, &rel) - *radius * *radius)
            }
            Self::Polytope(p) => p.chord(x, d),
            Self::Box(b) => {
                let mut lo = S::neg_infinity();
                let mut hi = S::infinity();
                for h in b.halfspaces() {
                    clip_chord(&h, x, d, &mut lo, &mut hi);
                }
                (lo <= hi).then_some((lo, hi))
            }
        }
    }

    /// Nearest point of the body.
    pub fn project(&self, x: &[S]) -> Vec<S> {
        match self {
            Self::Interval { lo, hi } => vec![x[0].max(*lo).min(*hi)],
            Self::Ball { center, radius } => {
                let rel = sub(x, center);
                let d = norm(&rel);
                if d <= *radius {
                    x.to_vec()
                } else {
                    center
                        .iter()
                        .zip(&rel)
                        .map(|(&c, &r)| c + r * *radius / d)
                        .collect()
                }
            }
            Self::Polytope(p) => p.project(x),
            Self::Box(b) => b.project(x),
        }
    }

    /// A strictly interior point and the radius of a ball around it inside the body.
    pub fn inner_ball(&self) -> Result<(Vec<S>, S)> {
        match self {
            Self::Interval { lo, hi } => Ok((
                vec![(*lo + *hi) * S::of(0.5)],
                (*hi - *lo) * S::of(0.5),
            )),
            Self::Ball { center, radius } => Ok((center.clone(), *radius)),
            Self::Polytope(p) => p.chebyshev_center(),
            Self::Box(b) => Ok((
                b.center.clone(),
                b.half_widths.iter().fold(S::infinity(), |m, &h| m.min(h)),
            )),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<S>, Vec<S>) {
        let n = self.dim();
        match self {
            Self::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            Self::Ball { center, radius } => (
                center.iter().map(|&c| c - *radius).collect(),
                center.iter().map(|&c| c + *radius).collect(),
            ),
            Self::Box(b) => {
                let mut ext = vec![S::zero(); n];
                for i in 0..n {
                    for (k, ext_k) in ext.iter_mut().enumerate() {
                        *ext_k = *ext_k + b.rotation[(i, k)].abs() * b.half_widths[i];
                    }
                }
                (
                    b.center.iter().zip(&ext).map(|(&c, &e)| c - e).collect(),
                    b.center.iter().zip(&ext).map(|(&c, &e)| c + e).collect(),
                )
            }
            Self::Polytope(p) => {
                let mut lo = vec![S::zero(); n];
                let mut hi = vec![S::zero(); n];
                for k in 0..n {
                    for (sign, slot) in [(S::one(), &mut hi), (-S::one(), &mut lo)] {
                        let mut problem = Problem::new(OptimizationDirection::Maximize);
                        let xs: Vec<_> = (0..n)
                            .map(|j| {
                                let c = if j == k { sign.f64() } else { 0.0 };
                                problem.add_var(c, (f64::NEG_INFINITY, f64::INFINITY))
                            })
                            .collect();
                        for h in &p.inequalities {
                            let row: Vec<_> =
                                xs.iter().zip(&h.normal).map(|(&v, a)| (v, a.f64())).collect();
                            problem.add_constraint(&row, ComparisonOp::Le, h.offset.f64());
                        }
                        slot[k] = match problem.solve() {
                            Ok(sol) => S::of(sol[xs[k]]),
                            Err(_) => sign * S::infinity(),
                        };
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Support function `max_{x in body} dir · x`.
    pub fn support(&self, dir: &[S]) -> S {
        match self {
            Self::Interval { lo, hi } => (dir[0] * *lo).max(dir[0] * *hi),
            Self::Ball { center, radius } => dot(dir, center) + *radius * norm(dir),
            Self::Box(b) => {
                let local = b.rotation.mul_vec(dir);
                dot(dir, &b.center)
                    + local
                        .iter()
                        .zip(&b.half_widths)
                        .fold(S::zero(), |acc, (&l, &h)| acc + l.abs() * h)
            }
            Self::Polytope(p) => {
                let mut problem = Problem::new(OptimizationDirection::Maximize);
                let xs: Vec<_> = dir
                    .iter()
                    .map(|&c| problem.add_var(c.f64(), (f64::NEG_INFINITY, f64::INFINITY)))
                    .collect();
                for h in &p.inequalities {
                    let row: Vec<_> = xs.iter().zip(&h.normal).map(|(&v, a)| (v, a.f64())).collect();
                    problem.add_constraint(&row, ComparisonOp::Le, h.offset.f64());
                }
                for h in &p.equalities {
                    let row: Vec<_> = xs.iter().zip(&h.normal).map(|(&v, a)| (v, a.f64())).collect();
                    problem.add_constraint(&row, ComparisonOp::Eq, h.offset.f64());
                }
                match problem.solve() {
                    Ok(sol) => S::of(sol.objective()),
                    Err(_) => S::infinity(),
                }
            }
        }
    }

    /// Euclidean diameter of the bounding box (an upper bound on the diameter).
    pub fn diameter_bound(&self) -> S {
        match self {
            Self::Interval { lo, hi } => *hi - *lo,
            Self::Ball { radius, .. } => *radius * S::of(2.0),
            _ => {
                let (lo, hi) = self.bounding_box();
                norm(&sub(&hi, &lo))
            }
        }
    }
}

/// Roots of `a t^2 + 2 b t + c = 0` as a chord, `None` when the line misses.
fn sphere_chord<S: Real>(a: S, b: S, c: S) -> Option<(S, S)> {
    if a <= S::zero() {
        return (c <= S::zero()).then_some((S::neg_infinity(), S::infinity()));
    }
    let disc = b * b - a * c;
    if disc < S::zero() {
        return None;
    }
    let r = disc.sqrt();
    Some(((-b - r) / a, (-b + r) / a))
}

/// Mahalanobis ellipsoid `{x : ‖x - mean‖_{Σ^{-1}} <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid<S> {
    pub mean: Vec<S>,
    pub covariance: Matrix<S>,
    pub radius: S,
    chol: Cholesky<S>,
}

impl<S: Real> Ellipsoid<S> {
    pub fn new(mean: Vec<S>, covariance: &Matrix<S>, radius: S) -> Result<Self> {
        check_dim(covariance.rows(), mean.len())?;
        if !(radius > S::zero()) {
            return Err(Error::InvalidParameter("ellipsoid radius must be positive".into()));
        }
        let covariance = regularize(covariance);
        let chol = Cholesky::new(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            radius,
            chol,
        })
    }

    pub fn norm_of(&self, x: &[S]) -> S {
        self.chol.inv_quad_form(&sub(x, &self.mean)).sqrt()
    }

    pub fn contains(&self, x: &[S]) -> bool {
        self.norm_of(x) <= self.radius * (S::one() + contain_tol::<S>())
    }

    pub fn chord(&self, x: &[S], d: &[S]) -> Option<(S, S)> {
        let rel = sub(x, &self.mean);
        let zd = self.chol.solve_lower(d);
        let zr = self.chol.solve_lower(&rel);
        sphere_chord(dot(&zd, &zd), dot(&zd, &zr), dot(&zr, &zr) - self.radius * self.radius)
    }
}

/// Box `B_p(r)` aligned with the eigenvectors of a covariance. The
/// half-width along eigenvector `i` is `r * sqrt(eigenvalue_i)`, so
/// `E_p(r) ⊂ B_p(r) ⊂ E_p(√n r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBox<S> {
    pub mean: Vec<S>,
    /// Eigenvalues of the (regularized) covariance.
    pub eigenvalues: Vec<S>,
    /// Rows are the corresponding unit eigenvectors.
    pub axes: Matrix<S>,
    pub radius: S,
}

impl<S: Real> MomentBox<S> {
    pub fn half_widths(&self) -> Vec<S> {
        self.eigenvalues
            .iter()
            .map(|&d| self.radius * d.sqrt())
            .collect()
    }

    pub fn as_oriented_box(&self) -> OrientedBox<S> {
        OrientedBox {
            center: self.mean.clone(),
            half_widths: self.half_widths(),
            rotation: self.axes.clone(),
        }
    }

    pub fn contains(&self, x: &[S]) -> bool {
        let n = self.mean.len();
        (0..n).all(|i| {
            let l = (0..n).fold(S::zero(), |acc, j| acc + self.axes[(i, j)] * (x[j] - self.mean[j]));
            let h = self.radius * self.eigenvalues[i].sqrt();
            l.abs() <= h + contain_tol::<S>() * (S::one() + h)
        })
    }

    pub fn halfspaces(&self) -> Vec<Halfspace<S>> {
        self.as_oriented_box().halfspaces()
    }

    /// Covariance `U^T D U` the box was built from.
    pub fn covariance(&self) -> Matrix<S> {
        self.axes
            .transpose()
            .matmul(&Matrix::from_diag(&self.eigenvalues))
            .matmul(&self.axes)
    }
}

/// Builds `B_p(r)` from a mean and covariance.
pub fn box_from_moments<S: Real>(mean: &[S], covariance: &Matrix<S>, r: S) -> Result<MomentBox<S>> {
    check_dim(covariance.rows(), mean.len())?;
    if !(r > S::zero()) {
        return Err(Error::InvalidParameter("box radius must be positive".into()));
    }
    if !covariance.is_symmetric(S::of(1e-9) * (S::one() + covariance.trace().abs())) {
        return Err(Error::DegenerateGeometry("covariance is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(covariance);
    let scale = eig.values.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    if eig
        .values
        .iter()
        .any(|&v| v < -S::of(1e-9) * (S::one() + scale))
    {
        return Err(Error::DegenerateGeometry(
            "covariance is not positive semidefinite".into(),
        ));
    }
    let delta = jitter(covariance);
    let eigenvalues = eig.values.iter().map(|&v| v.max(S::zero()) + delta).collect();
    Ok(MomentBox {
        mean: mean.to_vec(),
        eigenvalues,
        axes: eig.vectors.transpose(),
        radius: r,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cut<S> {
    Box(MomentBox<S>),
    Ellipsoid(Ellipsoid<S>),
}

impl<S: Real> Cut<S> {
    pub fn contains(&self, x: &[S]) -> bool {
        match self {
            Cut::Box(b) => b.contains(x),
            Cut::Ellipsoid(e) => e.contains(x),
        }
    }

    pub fn chord(&self, x: &[S], d: &[S]) -> Option<(S, S)> {
        match self {
            Cut::Box(b) => {
                let mut lo = S::neg_infinity();
                let mut hi = S::infinity();
                for h in b.halfspaces() {
                    clip_chord(&h, x, d, &mut lo, &mut hi);
                }
                (lo <= hi).then_some((lo, hi))
            }
            Cut::Ellipsoid(e) => e.chord(x, d),
        }
    }
}

/// `F = K ∩ cut_1 ∩ ... ∩ cut_k`. Cuts only accumulate, so later regions
/// are subsets of earlier ones.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusRegion<S> {
    pub base: ConvexBody<S>,
    pub cuts: Vec<Cut<S>>,
}

impl<S: Real> FocusRegion<S> {
    pub fn new(base: ConvexBody<S>) -> Self {
        Self {
            base,
            cuts: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn push(&mut self, cut: Cut<S>) {
        self.cuts.push(cut);
    }

    pub fn contains(&self, x: &[S]) -> bool {
        self.base.contains(x) && self.cuts.iter().all(|c| c.contains(x))
    }

    pub fn chord(&self, x: &[S], d: &[S]) -> Option<(S, S)> {
        let (mut lo, mut hi) = self.base.chord(x, d)?;
        for c in &self.cuts {
            let (a, b) = c.chord(x, d)?;
            lo = lo.max(a);
            hi = hi.min(b);
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// True when `self` was obtained from `other` by appending cuts.
    pub fn is_refinement_of(&self, other: &Self) -> bool {
        self.base == other.base
            && self.cuts.len() >= other.cuts.len()
            && self.cuts.iter().zip(&other.cuts).all(|(a, b)| a == b)
    }

    /// H-representation of `F` when the base is polyhedral and every cut is a box.
    pub fn halfspaces(&self) -> Option<Vec<Halfspace<S>>> {
        let mut hs = self.base.halfspaces()?;
        for c in &self.cuts {
            match c {
                Cut::Box(b) => hs.extend(b.halfspaces()),
                Cut::Ellipsoid(_) => return None,
            }
        }
        Some(hs)
    }

    /// A point strictly inside `F`.
    pub fn interior_point(&self) -> Result<Vec<S>> {
        if let Some(hs) = self.halfspaces() {
            let p = Polytope::new(self.dim(), hs)?;
            let (c, r) = p.chebyshev_center()?;
            if r > S::zero() {
                return Ok(c);
            }
            return Err(Error::InfeasibleRegion("focus region has empty interior".into()));
        }
        // Ellipsoid cuts: the most recent cut center lies in every earlier one
        // only approximately, so fall back to shrinking toward it.
        let (kc, _) = self.base.inner_ball()?;
        let target = match self.cuts.last() {
            Some(Cut::Ellipsoid(e)) => e.mean.clone(),
            Some(Cut::Box(b)) => b.mean.clone(),
            None => return Ok(kc),
        };
        for k in 0..=60 {
            let w = S::one() - S::of(k as f64 / 60.0);
            let x: Vec<S> = target
                .iter()
                .zip(&kc)
                .map(|(&t, &c)| w * t + (S::one() - w) * c)
                .collect();
            if self.contains(&x) {
                return Ok(x);
            }
        }
        Err(Error::InfeasibleRegion("no interior point of the focus region found".into()))
    }
}

/// The `(n-1)`-dimensional faces of `∂F` that reach into `int(K)`: for every
/// box face, the face hyperplane is added as an equality and the face is kept
/// when some point clears all other constraints by [`FACET_TOLERANCE`].
pub fn boundary_facets<S: Real>(focus: &FocusRegion<S>) -> Result<Vec<ConvexBody<S>>> {
    let base = focus.base.halfspaces().ok_or_else(|| {
        Error::Unsupported("facet enumeration needs a polyhedral body".into())
    })?;
    let mut cut_faces = Vec::new();
    for c in &focus.cuts {
        match c {
            Cut::Box(b) => cut_faces.extend(b.halfspaces()),
            Cut::Ellipsoid(_) => {
                return Err(Error::Unsupported(
                    "facet enumeration needs box cuts, not ellipsoids".into(),
                ))
            }
        }
    }
    let n = focus.dim();
    let all: Vec<&Halfspace<S>> = base.iter().chain(cut_faces.iter()).collect();
    let mut facets = Vec::new();
    for (k, face) in cut_faces.iter().enumerate() {
        let own = base.len() + k;
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let xs: Vec<_> = (0..n)
            .map(|_| problem.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
            .collect();
        let s = problem.add_var(1.0, (f64::NEG_INFINITY, 1.0));
        let row = |h: &Halfspace<S>| -> Vec<(microlp::Variable, f64)> {
            xs.iter().zip(&h.normal).map(|(&v, a)| (v, a.f64())).collect()
        };
        problem.add_constraint(row(face), ComparisonOp::Eq, face.offset.f64());
        for (j, h) in all.iter().enumerate() {
            if j == own {
                continue;
            }
            let mut r = row(h);
            r.push((s, norm(&h.normal).f64()));
            problem.add_constraint(&r, ComparisonOp::Le, h.offset.f64());
        }
        let Ok(sol) = problem.solve() else { continue };
        if sol[s] > FACET_TOLERANCE {
            let ineq = all
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != own)
                .map(|(_, h)| (*h).clone())
                .collect();
            let poly = Polytope::new(n, ineq)?.with_equality(face.clone());
            facets.push(ConvexBody::Polytope(poly));
        }
    }
    Ok(facets)
}
