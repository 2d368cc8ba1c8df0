//! Euclidean projection onto the feasible domain
//!
//! ```text
//! D(r, B) = { z : |z| <= B,  sum_i (y_i - z^T x_i)^2 x_i x_i^T  <=  r sum_i x_i x_i^T }
//! ```
//!
//! The spectral constraint is checked in the basis where the covariate second
//! moment `X = (1/n) sum x x^T` is the identity: with `W = X^{-1/2}` it reads
//! `lambda_max(W A(z) W) <= r n`. Points outside are separated by the gradient
//! of the convex quadratic `q_v(z) = sum (y - z^T x)^2 (v^T x)^2` along the
//! violating direction `v`, and the projection itself is found by bisection on
//! the distance with an ellipsoid-method feasibility search at each radius.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{sqrt_and_inv_sqrt, top_eigen};

/// Default tolerance for [`project`].
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Smallest admissible eigenvalue of the covariate second moment.
pub const MIN_COVARIATE_EIGENVALUE: f64 = 1e-12;
const TIE_SLACK: f64 = 1e-12;
// moment tensors cost k^4 memory; above this the per-sample loop is used
const TENSOR_MAX_DIM: usize = 16;
const OUTER_ROUNDS: usize = 40;
const DENSE_EIGEN_MAX_DIM: usize = 64;
const DUAL_ITERATIONS: usize = 200;
// spectral or norm violation, relative to r, below which a line search toward a member is tried
const NEAR_FEASIBLE: f64 = 1e-3;

/// `r* = 4 ln(2/a) + 7`.
pub fn r_star(a: f64) -> f64 {
    4.0 * (2.0 / a).ln() + 7.0
}

/// Spectral slack `r`, norm bound `bound` and the survival constant `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainParams {
    pub r: f64,
    pub bound: f64,
    pub a: f64,
}

impl DomainParams {
    pub fn new(r: f64, bound: f64, a: f64) -> Result<Self> {
        let p = DomainParams { r, bound, a };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with `r = r*(a)`.
    pub fn from_survival(a: f64, bound: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::InvalidParameter(format!("survival constant a={a} outside (0,1]")));
        }
        Self::new(r_star(a), bound, a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::InvalidParameter(format!("r={} must be positive", self.r)));
        }
        if !(self.bound > 0.0) || self.bound.is_infinite() {
            return Err(Error::InvalidParameter(format!("B={} must be positive and finite", self.bound)));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::InvalidParameter(format!("a={} outside (0,1]", self.a)));
        }
        Ok(())
    }
}

/// Outcome of a separation query.
#[derive(Clone, Debug, PartialEq)]
pub enum SeparationResult {
    Member,
    /// Every feasible `z` has `normal^T z <= offset`, while the query has `normal^T u >= offset`.
    Hyperplane { normal: DVector<f64>, offset: f64 },
}

/// How far a point is from satisfying each constraint (positive means violated).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    /// `lambda_max / n - r`.
    pub spectral: f64,
    /// `|z| - B`.
    pub norm: f64,
}

impl Residual {
    pub fn max(&self) -> f64 {
        self.spectral.max(self.norm)
    }
}

/// `A(u) = sum_i (y_i - u^T x_i)^2 x_i x_i^T`, in the original coordinates.
pub fn spectral_matrix(u: &DVector<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
    ensure_dim(data.k(), u.len())?;
    let k = data.k();
    let mut a = DMatrix::zeros(k, k);
    for s in data.samples() {
        let res = s.y - u.dot(&s.x);
        a.ger(res * res, &s.x, &s.x, 1.0);
    }
    Ok(a)
}

/// Separation query against `D(r, B)` for a single point.
pub fn find_separation(u: &DVector<f64>, params: DomainParams, data: &Dataset) -> Result<SeparationResult> {
    Domain::new(params, data)?.separate(u, 0.0)
}

/// Approximate projection of `w` onto `D(r, B)`.
pub fn project(w: &DVector<f64>, params: DomainParams, data: &Dataset, tol: f64) -> Result<DVector<f64>> {
    Domain::new(params, data)?.project(w, tol)
}

/// Fourth-order covariate moments, so `A(u)` costs `O(k^4)` instead of `O(n k^2)`.
#[derive(Clone, Debug)]
struct Moments {
    /// `sum y^2 x x^T`
    t0: DVector<f64>,
    /// rows `(p, q)`, column `l`: `sum y x_p x_q x_l`
    t1: DMatrix<f64>,
    /// rows `(p, q)`, columns `(l, m)`: `sum x_p x_q x_l x_m`
    t2: DMatrix<f64>,
}

impl Moments {
    fn new(data: &Dataset) -> Self {
        let k = data.k();
        let kk = k * k;
        let mut t0 = DVector::zeros(kk);
        let mut t1 = DMatrix::zeros(kk, k);
        let mut t2 = DMatrix::zeros(kk, kk);
        let mut outer = DVector::zeros(kk);
        for s in data.samples() {
            for p in 0..k {
                for q in 0..k {
                    outer[p * k + q] = s.x[p] * s.x[q];
                }
            }
            t0.axpy(s.y * s.y, &outer, 1.0);
            t1.ger(s.y, &outer, &s.x, 1.0);
            t2.ger(1.0, &outer, &outer, 1.0);
        }
        Moments { t0, t1, t2 }
    }
}

/// `X^{-1/2} A(u) X^{-1/2}` from whitened covariates, keeping only the
/// `k(k+1)/2` distinct entries of each symmetric index pair.
#[derive(Clone, Debug)]
struct WhitenedMoments {
    pairs: Vec<(usize, usize)>,
    /// `X^{1/2}`, mapping `u` to whitened coordinates
    sqrt: DMatrix<f64>,
    t0: DVector<f64>,
    t1: DMatrix<f64>,
    t2: DMatrix<f64>,
}

impl WhitenedMoments {
    fn new(data: &Dataset, sqrt: DMatrix<f64>, inv_sqrt: &DMatrix<f64>) -> Self {
        let k = data.k();
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|p| (p..k).map(move |q| (p, q))).collect();
        let np = pairs.len();
        let mut t0 = DVector::zeros(np);
        let mut t1 = DMatrix::zeros(np, k);
        let mut t2 = DMatrix::zeros(np, np);
        let mut row = DVector::zeros(np);
        let mut col = DVector::zeros(np);
        for s in data.samples() {
            let x = inv_sqrt * &s.x;
            for (a, &(p, q)) in pairs.iter().enumerate() {
                row[a] = x[p] * x[q];
                col[a] = if p == q { row[a] } else { 2.0 * row[a] };
            }
            t0.axpy(s.y * s.y, &row, 1.0);
            t1.ger(s.y, &row, &x, 1.0);
            t2.ger(1.0, &row, &col, 1.0);
        }
        WhitenedMoments { pairs, sqrt, t0, t1, t2 }
    }

    fn eval(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let k = u.len();
        let ut = &self.sqrt * u;
        let uu = DVector::from_fn(self.pairs.len(), |a, _| {
            let (p, q) = self.pairs[a];
            ut[p] * ut[q]
        });
        let mut flat = self.t0.clone();
        flat.gemv(-2.0, &self.t1, &ut, 1.0);
        flat.gemv(1.0, &self.t2, &uu, 1.0);
        let mut m = DMatrix::zeros(k, k);
        for (a, &(p, q)) in self.pairs.iter().enumerate() {
            m[(p, q)] = flat[a];
            m[(q, p)] = flat[a];
        }
        m
    }
}

/// True when `lambda_max(m) <= limit` follows from `lambda_max^4 <= |m^2|_F^2`
/// or `lambda_max^8 <= |m^4|_F^2`; `m` must be positive semidefinite.
fn certify_below(m: &DMatrix<f64>, limit: f64) -> bool {
    if !(limit > 0.0) {
        return false;
    }
    let scaled = m / limit;
    if scaled.norm_squared() <= 1.0 {
        return true;
    }
    let m2 = &scaled * &scaled;
    if m2.norm_squared() <= 1.0 {
        return true;
    }
    let m4 = &m2 * &m2;
    m4.norm_squared() <= 1.0
}

fn outer_flat(u: &DVector<f64>) -> DVector<f64> {
    let k = u.len();
    DVector::from_fn(k * k, |i, _| u[i / k] * u[i % k])
}

/// Preprocessed dataset for repeated membership, separation and projection
/// queries against one `D(r, B)`.
#[derive(Clone, Debug)]
pub struct Domain {
    params: DomainParams,
    k: usize,
    n: usize,
    /// `X^{-1/2}`; `None` for an empty dataset (ball-only domain).
    inv_sqrt: Option<DMatrix<f64>>,
    moments: Option<Moments>,
    whitened: Option<WhitenedMoments>,
    xs: Vec<DVector<f64>>,
    ys: Vec<f64>,
}

impl Domain {
    pub fn new(params: DomainParams, data: &Dataset) -> Result<Self> {
        params.validate()?;
        let k = data.k();
        let n = data.n();
        let roots = if n == 0 {
            None
        } else {
            Some(sqrt_and_inv_sqrt(&data.second_moment(), MIN_COVARIATE_EIGENVALUE)?)
        };
        let tensors = n > 0 && k <= TENSOR_MAX_DIM && k * k <= n;
        let moments = tensors.then(|| Moments::new(data));
        let whitened = match (&roots, tensors) {
            (Some((sqrt, inv)), true) => Some(WhitenedMoments::new(data, sqrt.clone(), inv)),
            _ => None,
        };
        let inv_sqrt = roots.map(|r| r.1);
        Ok(Domain {
            params,
            k,
            n,
            inv_sqrt,
            moments,
            whitened,
            xs: data.samples().iter().map(|s| s.x.clone()).collect(),
            ys: data.samples().iter().map(|s| s.y).collect(),
        })
    }

    pub fn params(&self) -> DomainParams {
        self.params
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `A(u)` in original coordinates.
    pub fn spectral(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let k = self.k;
        match &self.moments {
            Some(m) => {
                let mut flat = m.t0.clone();
                flat.gemv(-2.0, &m.t1, u, 1.0);
                flat.gemv(1.0, &m.t2, &outer_flat(u), 1.0);
                let a = DMatrix::from_fn(k, k, |p, q| flat[p * k + q]);
                (&a + a.transpose()) * 0.5
            }
            None => {
                let mut a = DMatrix::zeros(k, k);
                for (x, y) in self.xs.iter().zip(&self.ys) {
                    let res = y - u.dot(x);
                    a.ger(res * res, x, x, 1.0);
                }
                a
            }
        }
    }

    /// Largest eigenvalue of the whitened `A(u)` and the matching direction
    /// `v = X^{-1/2} v~` in original coordinates, normalized so `v^T X v = 1`.
    fn top_direction(&self, u: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.top_of(&self.whitened_spectral(u))
    }

    fn top_of(&self, m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
        let w = self.inv_sqrt.as_ref().expect("non-empty dataset");
        let top = top_eigen(m)?;
        Ok((top.value, w * top.vector))
    }

    /// `X^{-1/2} A(u) X^{-1/2}`.
    fn whitened_spectral(&self, u: &DVector<f64>) -> DMatrix<f64> {
        match &self.whitened {
            Some(t) => t.eval(u),
            None => {
                let w = self.inv_sqrt.as_ref().expect("non-empty dataset");
                let m = w * self.spectral(u) * w;
                (&m + m.transpose()) * 0.5
            }
        }
    }

    /// Directions `v` with `v^T X v = 1` and `v^T A(u) v > limit`: every
    /// violated eigenvector for moderate `k`, otherwise just the top one.
    fn violated_directions(&self, u: &DVector<f64>, limit: f64) -> Result<Vec<DVector<f64>>> {
        let w = self.inv_sqrt.as_ref().expect("non-empty dataset");
        if self.k > DENSE_EIGEN_MAX_DIM {
            let (lambda, v) = self.top_direction(u)?;
            return Ok(if lambda > limit { vec![v] } else { Vec::new() });
        }
        let m = self.whitened_spectral(u);
        if certify_below(&m, limit) {
            return Ok(Vec::new());
        }
        let eig = m.symmetric_eigen();
        Ok((0..self.k)
            .filter(|&i| eig.eigenvalues[i] > limit)
            .map(|i| w * eig.eigenvectors.column(i))
            .collect())
    }

    /// `grad q_v(u) = -2 sum (y - u^T x)(v^T x)^2 x`.
    fn cut_normal(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        match &self.moments {
            Some(m) => {
                let vv = outer_flat(v);
                // sum y (v^T x)^2 x
                let first = m.t1.tr_mul(&vv);
                // sum (v^T x)^2 x x^T, then applied to u
                let wflat = &m.t2 * &vv;
                let wmat = DMatrix::from_fn(k, k, |p, q| wflat[p * k + q]);
                (&wmat * u - first) * 2.0
            }
            None => {
                let mut d = DVector::zeros(k);
                for (x, y) in self.xs.iter().zip(&self.ys) {
                    let t = v.dot(x);
                    d.axpy(-2.0 * (y - u.dot(x)) * t * t, x, 1.0);
                }
                d
            }
        }
    }

    pub fn residual(&self, u: &DVector<f64>) -> Result<Residual> {
        ensure_dim(self.k, u.len())?;
        let norm = u.norm() - self.params.bound;
        if self.n == 0 {
            return Ok(Residual { spectral: f64::NEG_INFINITY, norm });
        }
        let (lambda, _) = self.top_direction(u)?;
        Ok(Residual { spectral: lambda / self.n as f64 - self.params.r, norm })
    }

    pub fn is_member(&self, u: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(matches!(self.separate(u, tol)?, SeparationResult::Member))
    }

    /// Separation against the domain with `r` and `B` both enlarged by `slack`.
    ///
    /// Hyperplanes are deep cuts: feasible points satisfy `d^T z <= offset`
    /// and the query sits strictly on the other side.
    pub fn separate(&self, u: &DVector<f64>, slack: f64) -> Result<SeparationResult> {
        ensure_dim(self.k, u.len())?;
        let bound = self.params.bound + slack;
        let norm = u.norm();
        if norm > bound {
            return Ok(SeparationResult::Hyperplane { normal: u / norm, offset: bound });
        }
        if self.n == 0 {
            return Ok(SeparationResult::Member);
        }
        let n = self.n as f64;
        let limit = (self.params.r + slack) * n;
        let m = self.whitened_spectral(u);
        if certify_below(&m, limit) {
            return Ok(SeparationResult::Member);
        }
        let (lambda, v) = self.top_of(&m)?;
        if lambda <= limit + TIE_SLACK * n {
            return Ok(SeparationResult::Member);
        }
        let d = self.cut_normal(u, &v);
        let dn = d.norm();
        if !(dn > 0.0) || !dn.is_finite() {
            // u minimizes q_v and still violates it: nothing is feasible
            return Err(Error::EmptyDomain);
        }
        let offset = d.dot(u) - (lambda - limit);
        Ok(SeparationResult::Hyperplane { normal: d, offset })
    }

    /// Ellipsoid-method search for a point of the `slack`-relaxed domain
    /// within distance `tau + slack` of `w`. `None` means none was found within
    /// the volume-based iteration bound.
    fn search(&self, w: &DVector<f64>, tau: f64, slack: f64) -> Result<Option<DVector<f64>>> {
        let k = self.k;
        let radius = tau + slack;
        let kf = k as f64;
        let iters = (2.0 * kf * (kf + 1.0) * (radius / slack).ln()).ceil().max(1.0) as usize;
        let mut c = w.clone();
        let mut p = DMatrix::identity(k, k) * (radius * radius);
        for _ in 0..iters {
            let (a, beta) = {
                let off = &c - w;
                let dist = off.norm();
                if dist > radius {
                    let a = off / dist;
                    let beta = a.dot(w) + radius;
                    (a, beta)
                } else {
                    match self.separate(&c, slack)? {
                        SeparationResult::Member => return Ok(Some(c)),
                        SeparationResult::Hyperplane { normal, offset } => (normal, offset),
                    }
                }
            };
            let pa = &p * &a;
            let apa = a.dot(&pa);
            if !(apa > 0.0) || !apa.is_finite() {
                if apa.is_nan() {
                    return Err(Error::VolumeUnderflow);
                }
                return Ok(None);
            }
            let s = apa.sqrt();
            // cuts come from a violated center, so alpha >= 0 up to rounding
            let alpha = ((a.dot(&c) - beta) / s).max(0.0);
            if alpha >= 1.0 {
                // the whole ellipsoid violates the cut
                return Ok(None);
            }
            if k == 1 {
                let (lo, hi) = (c[0] - s / a[0].abs(), c[0] + s / a[0].abs());
                let edge = beta / a[0];
                let (lo, hi) = if a[0] > 0.0 { (lo, hi.min(edge)) } else { (lo.max(edge), hi) };
                c[0] = 0.5 * (lo + hi);
                p[(0, 0)] = (0.5 * (hi - lo)).powi(2);
                continue;
            }
            let b = &pa / s;
            c -= &b * ((1.0 + kf * alpha) / (kf + 1.0));
            let shrink = kf * kf * (1.0 - alpha * alpha) / (kf * kf - 1.0);
            let rank1 = 2.0 * (1.0 + kf * alpha) / ((kf + 1.0) * (1.0 + alpha));
            p = (&p - (&b * b.transpose()) * rank1) * shrink;
            p = (&p + p.transpose()) * 0.5;
        }
        Ok(None)
    }

    /// `q_v(z) = z^T P z - 2 b^T z + c` with `q_v(z) = sum (y - z^T x)^2 (v^T x)^2`.
    fn quadric(&self, v: &DVector<f64>) -> Quadric {
        let k = self.k;
        match &self.moments {
            Some(m) => {
                let vv = outer_flat(v);
                let pflat = &m.t2 * &vv;
                let p = DMatrix::from_fn(k, k, |i, j| pflat[i * k + j]);
                Quadric { p: (&p + p.transpose()) * 0.5, b: m.t1.tr_mul(&vv), c: m.t0.dot(&vv) }
            }
            None => {
                let mut p = DMatrix::zeros(k, k);
                let mut b = DVector::zeros(k);
                let mut c = 0.0;
                for (x, y) in self.xs.iter().zip(&self.ys) {
                    let t2 = v.dot(x).powi(2);
                    p.ger(t2, x, x, 1.0);
                    b.axpy(y * t2, x, 1.0);
                    c += y * y * t2;
                }
                Quadric { p, b, c }
            }
        }
    }

    /// Closest member to `w` on the segment from `w` to the member `z`.
    fn pull_toward(&self, w: &DVector<f64>, z: DVector<f64>, slack: f64) -> Result<DVector<f64>> {
        let dir = &z - w;
        let len = dir.norm();
        let (mut lo, mut hi) = (0.0, 1.0);
        while (hi - lo) * len > 0.5 * slack {
            let mid = 0.5 * (lo + hi);
            if self.is_member(&(w + &dir * mid), slack)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if hi == 1.0 {
            return Ok(z);
        }
        Ok(w + dir * hi)
    }

    /// Projection of `w` onto the domain, feasible to within `tol` and at most
    /// `tol` farther from `w` than the exact projection.
    pub fn project(&self, w: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        self.project_from(w, None, tol)
    }

    /// As [`Domain::project`], starting the upper bracket from `hint` when it
    /// is a member.
    pub fn project_from(&self, w: &DVector<f64>, hint: Option<&DVector<f64>>, tol: f64) -> Result<DVector<f64>> {
        ensure_dim(self.k, w.len())?;
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("cannot project a non-finite point".into()));
        }
        let slack = tol / 10.0;
        if self.is_member(w, slack)? {
            return Ok(w.clone());
        }
        let norm = w.norm();
        let bound = self.params.bound;
        if norm > bound {
            let radial = w * (bound / norm);
            if self.is_member(&radial, slack)? {
                return Ok(radial);
            }
        }
        let lower = match self.separate(w, 0.0)? {
            SeparationResult::Hyperplane { normal, offset } => ((normal.dot(w) - offset) / normal.norm()).max(0.0),
            SeparationResult::Member => 0.0,
        };
        let mut lower = lower.max(norm - bound);
        // outer approximation by quadric supersets, refined at the violated point
        let anchor = match hint {
            Some(h) if self.is_member(h, slack)? => Some(h.clone()),
            _ => None,
        };
        let limit = self.params.r * self.n as f64;
        let mut quads = Vec::new();
        let mut mu: Vec<f64> = Vec::new();
        let mut idle: Vec<usize> = Vec::new();
        let mut nu = 0.0;
        let mut probe = w.clone();
        for _ in 0..OUTER_ROUNDS {
            for v in self.violated_directions(&probe, limit)? {
                quads.push(self.quadric(&v));
                mu.push(0.0);
                idle.push(0);
            }
            let Some(sol) = dual_projection(w, &quads, &mut mu, &mut nu, self.params, self.n, slack) else {
                break;
            };
            lower = lower.max(sol.lower);
            if sol.converged && self.is_member(&sol.z, slack)? {
                if (&sol.z - w).norm() - lower <= 0.5 * tol {
                    return Ok(sol.z);
                }
                break;
            }
            if let Some(anchor) = &anchor {
                let res = self.residual(&sol.z)?;
                if res.max() <= NEAR_FEASIBLE * self.params.r {
                    let z = self.pull_toward(&sol.z, anchor.clone(), slack)?;
                    if (&z - w).norm() - lower <= 0.5 * tol {
                        return Ok(z);
                    }
                }
            }
            // drop cuts that stayed inactive
            for (c, &m) in idle.iter_mut().zip(&mu) {
                *c = if m > 0.0 { 0 } else { *c + 1 };
            }
            let mut i = 0;
            while i < quads.len() {
                if idle[i] >= 3 {
                    quads.remove(i);
                    mu.remove(i);
                    idle.remove(i);
                } else {
                    i += 1;
                }
            }
            probe = sol.z;
        }
        let start = match anchor {
            Some(h) => h,
            None => self.search(w, norm + bound, slack)?.ok_or(Error::EmptyDomain)?,
        };
        let mut best = self.pull_toward(w, start, slack)?;
        let mut hi = (&best - w).norm();
        let mut lo = lower.min(hi);
        while hi - lo > 0.5 * tol {
            let tau = 0.5 * (lo + hi);
            match self.search(w, tau, slack)? {
                Some(z) => {
                    let z = self.pull_toward(w, z, slack)?;
                    let d = (&z - w).norm();
                    if d < (&best - w).norm() {
                        best = z;
                    }
                    hi = tau.min(d);
                }
                None => lo = tau,
            }
        }
        Ok(best)
    }
}

struct Quadric {
    p: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

struct DualSolution {
    z: DVector<f64>,
    /// `sqrt(2 phi)`: no point of the constraint set is closer to `w`.
    lower: f64,
    converged: bool,
}

/// Projected Newton ascent on the dual of
/// `min |z - w|^2 / 2` s.t. `q_i(z) <= r n` and `|z| <= B`.
fn dual_projection(
    w: &DVector<f64>,
    quads: &[Quadric],
    mu: &mut [f64],
    nu: &mut f64,
    params: DomainParams,
    n: usize,
    slack: f64,
) -> Option<DualSolution> {
    let k = w.len();
    let m = quads.len() + 1;
    let limit = params.r * n as f64;
    let bound = params.bound;
    // multipliers packed as [mu..., nu]
    let eval = |y: &[f64]| -> Option<(DVector<f64>, f64, DVector<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
        let mut mm = DMatrix::identity(k, k) * (1.0 + y[m - 1]);
        let mut rhs = w.clone();
        for (q, &t) in quads.iter().zip(y) {
            if t > 0.0 {
                mm += &q.p * t;
                rhs.axpy(t, &q.b, 1.0);
            }
        }
        let chol = mm.cholesky()?;
        let z = chol.solve(&rhs);
        let mut cons = DVector::zeros(m);
        for (i, q) in quads.iter().enumerate() {
            cons[i] = 0.5 * ((&q.p * &z).dot(&z) - 2.0 * q.b.dot(&z) + q.c - limit);
        }
        cons[m - 1] = 0.5 * (z.norm_squared() - bound * bound);
        let phi = 0.5 * (&z - w).norm_squared() + y.iter().zip(cons.iter()).map(|(a, b)| a * b).sum::<f64>();
        Some((z, phi, cons, chol))
    };
    let feas = |cons: &DVector<f64>| {
        let mut ok = cons[m - 1] <= 0.5 * ((bound + slack).powi(2) - bound * bound);
        for i in 0..m - 1 {
            ok &= cons[i] <= 0.5 * slack * n as f64;
        }
        ok
    };
    let mut y: Vec<f64> = mu.iter().copied().chain(std::iter::once(*nu)).collect();
    let (mut z, mut phi, mut cons, mut chol) = eval(&y)?;
    let mut converged = false;
    for _ in 0..DUAL_ITERATIONS {
        let gap = -(y.iter().zip(cons.iter()).map(|(a, b)| a * b).sum::<f64>());
        let dist = (2.0 * phi.max(0.0)).sqrt();
        // distance gap ~ gap / dist, floored by rounding in phi
        if feas(&cons) && gap.abs() <= (0.05 * slack).max(1e-12 * dist) * (dist + slack) {
            converged = true;
            break;
        }
        let free: Vec<usize> = (0..m).filter(|&j| y[j] > 0.0 || cons[j] > 0.0).collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let grads: Vec<DVector<f64>> = free
            .iter()
            .map(|&j| if j == m - 1 { z.clone() } else { &quads[j].p * &z - &quads[j].b })
            .collect();
        let solved: Vec<DVector<f64>> = grads.iter().map(|g| chol.solve(g)).collect();
        let f = free.len();
        let mut h = DMatrix::from_fn(f, f, |a, b| grads[a].dot(&solved[b]));
        h = (&h + h.transpose()) * 0.5;
        let ridge = 1e-14 * (0..f).map(|i| h[(i, i)]).fold(0.0, f64::max) + f64::MIN_POSITIVE;
        for i in 0..f {
            h[(i, i)] += ridge;
        }
        let rhs = DVector::from_fn(f, |a, _| cons[free[a]]);
        let dir = h.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| rhs.clone());
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial = y.clone();
            for (a, &j) in free.iter().enumerate() {
                trial[j] = (y[j] + t * dir[a]).max(0.0);
            }
            let ascent: f64 = (0..m).map(|j| cons[j] * (trial[j] - y[j])).sum();
            if let Some((z2, phi2, cons2, chol2)) = eval(&trial) {
                // tolerate rounding in phi once the predicted gain drops below it
                if phi2 >= phi + 1e-4 * ascent - 1e-13 * phi.abs() && phi2.is_finite() {
                    moved = phi2 > phi || trial != y;
                    y = trial;
                    (z, phi, cons, chol) = (z2, phi2, cons2, chol2);
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    for (dst, src) in mu.iter_mut().zip(&y) {
        *dst = *src;
    }
    *nu = y[m - 1];
    Some(DualSolution { z, lower: (2.0 * phi.max(0.0)).sqrt(), converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn random_data(k: usize, n: usize, seed: u64, noise: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = x.iter().sum::<f64>() + noise * rng.random_range(-1.0..1.0);
                Sample::new(x, y)
            })
            .collect();
        Dataset::new(k, samples).unwrap()
    }

    #[test]
    fn r_star_values() {
        assert!((r_star(1.0) - (4.0 * 2f64.ln() + 7.0)).abs() < 1e-15);
        assert!(r_star(0.5) > 7.0);
        assert!(DomainParams::from_survival(0.0, 1.0).is_err());
        assert!(DomainParams::new(1.0, -1.0, 0.5).is_err());
    }

    #[test]
    fn spectral_matrix_examples() {
        let d = Dataset::from_rows(&[vec![1.0, 0.0]], &[2.0]).unwrap();
        let a = spectral_matrix(&v(&[0.0, 0.0]), &d).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]));
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![-1.0, 1.0]], &[3.0, 0.0]).unwrap();
        let a = spectral_matrix(&v(&[1.0, 1.0]), &d).unwrap();
        assert!(a.norm() < 1e-15);
    }

    #[test]
    fn spectral_matrix_against_triple_loop() {
        let d = random_data(3, 10, 4, 2.0);
        let u = v(&[0.3, -0.2, 1.4]);
        let a = spectral_matrix(&u, &d).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                let mut want = 0.0;
                for s in d.samples() {
                    let mut fit = 0.0;
                    for l in 0..3 {
                        fit += u[l] * s.x[l];
                    }
                    want += (s.y - fit) * (s.y - fit) * s.x[p] * s.x[q];
                }
                assert!((a[(p, q)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_path_matches_sample_loop() {
        let d = random_data(4, 200, 8, 3.0);
        let dom = Domain::new(DomainParams::from_survival(0.1, 10.0).unwrap(), &d).unwrap();
        assert!(dom.moments.is_some());
        let u = v(&[0.5, -1.0, 2.0, 0.1]);
        let want = spectral_matrix(&u, &d).unwrap();
        assert!((dom.spectral(&u) - &want).norm() <= 1e-10 * want.norm());
        let dir = v(&[0.2, 0.4, -0.1, 0.9]);
        let mut naive = dom.clone();
        naive.moments = None;
        let (a, b) = (dom.cut_normal(&u, &dir), naive.cut_normal(&u, &dir));
        assert!((&a - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn whitened_tensor_matches_direct_whitening() {
        let d = random_data(5, 300, 12, 2.0);
        let dom = Domain::new(DomainParams::from_survival(0.1, 10.0).unwrap(), &d).unwrap();
        let mut naive = dom.clone();
        naive.whitened = None;
        for u in [v(&[0.0; 5]), v(&[1.0, -2.0, 0.5, 3.0, 0.0])] {
            let (a, b) = (dom.whitened_spectral(&u), naive.whitened_spectral(&u));
            assert!((&a - &b).norm() <= 1e-10 * b.norm());
            let (qa, qb) = (dom.quadric(&u), naive.quadric(&u));
            assert!((&qa.p - &qb.p).norm() <= 1e-10 * qb.p.norm());
            assert!((&qa.b - &qb.b).norm() <= 1e-10 * qb.b.norm());
            assert!((qa.c - qb.c).abs() <= 1e-10 * qb.c.abs());
        }
    }

    #[test]
    fn certificate_never_accepts_a_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let k = rng.random_range(1..7);
            let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let m = &g * g.transpose();
            let top = m.clone().symmetric_eigen().eigenvalues.max();
            let limit = top * rng.random_range(0.5..3.0);
            if certify_below(&m, limit) {
                assert!(top <= limit * (1.0 + 1e-12));
            }
        }
        // isotropic matrices are certified well before the Frobenius bound would
        let m = DMatrix::<f64>::identity(10, 10);
        assert!(certify_below(&m, 1.9));
        assert!(!certify_below(&m, 0.99));
    }

    #[test]
    fn separation_examples() {
        // interpolating data: A vanishes, only the ball matters
        let d = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]).unwrap();
        let params = DomainParams::new(8.0, 1.0, 1.0).unwrap();
        assert_eq!(find_separation(&v(&[0.0, 0.0]), params, &d).unwrap(), SeparationResult::Member);
        match find_separation(&v(&[2.0, 0.0]), params, &d).unwrap() {
            SeparationResult::Hyperplane { normal, offset } => {
                assert!((normal - v(&[1.0, 0.0])).norm() < 1e-15);
                assert_eq!(offset, 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separation_is_valid_on_sampled_members() {
        let d = random_data(2, 15, 3, 4.0);
        let params = DomainParams::new(2.0, 6.0, 1.0).unwrap();
        let dom = Domain::new(params, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut members = Vec::new();
        while members.len() < 1000 {
            let z = v(&[rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)]);
            if dom.is_member(&z, 0.0).unwrap() {
                members.push(z);
            }
        }
        let mut checked = 0;
        for _ in 0..200 {
            let u = v(&[rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)]);
            if let SeparationResult::Hyperplane { normal, offset } = dom.separate(&u, 0.0).unwrap() {
                assert!(normal.norm() > 0.0);
                assert!(normal.dot(&u) >= offset - 1e-9);
                for z in &members {
                    assert!(normal.dot(z) <= offset + 1e-9);
                }
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn membership_matches_all_directions() {
        let d = random_data(3, 12, 21, 3.0);
        let params = DomainParams::new(3.0, 10.0, 1.0).unwrap();
        let dom = Domain::new(params, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = d.gram();
        for _ in 0..40 {
            let u = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let a = spectral_matrix(&u, &d).unwrap();
            let worst = (0..1000)
                .map(|_| {
                    let dir = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)).normalize();
                    dir.dot(&(&a * &dir)) - 3.0 * dir.dot(&(&g * &dir))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let member = dom.is_member(&u, 0.0).unwrap();
            // random directions can only under-report a violation
            if worst > 1e-9 {
                assert!(!member);
            }
            if member {
                assert!(worst <= 1e-9);
            }
        }
    }

    #[test]
    fn project_member_is_identity() {
        let d = random_data(2, 20, 1, 0.5);
        let params = DomainParams::from_survival(0.1, 5.0).unwrap();
        let w = v(&[1.0, 1.0]);
        assert!(Domain::new(params, &d).unwrap().is_member(&w, 0.0).unwrap());
        assert_eq!(project(&w, params, &d, 1e-6).unwrap(), w);
    }

    #[test]
    fn project_ball_only() {
        let empty = Dataset::new(3, vec![]).unwrap();
        let params = DomainParams::new(f64::INFINITY, 2.0, 1.0).unwrap();
        let w = v(&[4.0, 0.0, 0.0]);
        let z = project(&w, params, &empty, 1e-6).unwrap();
        assert!((z - v(&[2.0, 0.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn project_spectral_constraint_feasible_and_idempotent() {
        for seed in 0..4 {
            let d = random_data(2, 20, 100 + seed, 3.0);
            let params = DomainParams::new(5.0, 5.0, 1.0).unwrap();
            let dom = Domain::new(params, &d).unwrap();
            let w = v(&[4.0, -3.0]);
            assert!(!dom.is_member(&w, 0.0).unwrap());
            let tol = 1e-6;
            let z = dom.project(&w, tol).unwrap();
            let res = dom.residual(&z).unwrap();
            assert!(res.spectral <= tol && res.norm <= tol, "{res:?}");
            let again = dom.project(&z, tol).unwrap();
            assert!((again - &z).norm() <= 2.0 * tol);
        }
    }

    #[test]
    fn project_one_dimensional() {
        // k = 1: the domain is an interval; its nearest endpoint is found
        let d = Dataset::from_rows(&[vec![1.0], vec![1.0]], &[1.0, 3.0]).unwrap();
        // (1-z)^2 + (3-z)^2 <= 2 r  with r = 5 gives z in [2 - 2, 2 + 2]
        let params = DomainParams::new(5.0, 100.0, 1.0).unwrap();
        let z = project(&v(&[7.0]), params, &d, 1e-8).unwrap();
        assert!((z[0] - 4.0).abs() < 1e-7, "{z}");
        let z = project(&v(&[-3.0]), params, &d, 1e-8).unwrap();
        assert!(z[0].abs() < 1e-7, "{z}");
    }

    #[test]
    fn empty_domain_is_reported() {
        // A(z) >= 1 everywhere along e1 but r = 0.1
        let d = Dataset::from_rows(&[vec![1.0], vec![1.0]], &[1.0, -1.0]).unwrap();
        let params = DomainParams::new(0.1, 10.0, 1.0).unwrap();
        assert!(matches!(project(&v(&[3.0]), params, &d, 1e-6), Err(Error::EmptyDomain)));
    }
}
