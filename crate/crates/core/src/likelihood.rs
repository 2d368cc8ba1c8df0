//! Negative log-likelihood of the truncated regression model and its derivatives.
//!
//! For one sample with `mu = w^T x` the negative log-likelihood is
//!
//! ```text
//! -l(w; x, y) = (y - mu)^2 / 2 + ln sqrt(2 pi) + ln N(mu, 1; S)
//! ```
//!
//! which is the textbook form `y^2/2 - y mu + ln int_S exp(-z^2/2 + z mu) dz`
//! after completing the square. Its gradient in `w` is `(E[z] - y) x` and its
//! Hessian `Var[z] x x^T`, with `z ~ N(mu, 1, S)`.
//!
//! Stochastic gradients use the descent sign: `v = z_j x_j - y_i x_i` so that
//! `w <- w - eta v` decreases the objective.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dataset::{Dataset, Sample};
use crate::error::{ensure_dim, Error, Result};
use crate::sampler::{sample_truncated, SamplerAccuracy};
use crate::sets::{Interval, TruncationSet};
use crate::special::{integrate_adaptive, ln_normal_pdf, ln_std_interval_mass, ln_sum_exp, LN_SQRT_2PI};

const QUAD_REL_TOL: f64 = 1e-12;
/// Closed forms are abandoned once the raw second moment exceeds the variance
/// by this factor; the terms carry ~1e-13 relative error.
const CANCELLATION_LIMIT: f64 = 1e3;

/// Mean and variance of `N(mu, 1, S)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub variance: f64,
}

fn ln_mass_unit(mu: f64, ivs: &[Interval]) -> f64 {
    let parts: Vec<f64> = ivs.iter().map(|iv| ln_std_interval_mass(iv.lo - mu, iv.hi - mu)).collect();
    ln_sum_exp(&parts)
}

fn require_intervals(set: &TruncationSet) -> Result<&[Interval]> {
    set.as_intervals().ok_or_else(|| {
        Error::InvalidParameter("likelihood evaluation needs an interval-union set".into())
    })
}

/// Moments of `N(mu, 1, S)` from the closed forms
/// `E[t] = sum (phi(a) - phi(b)) / Z` and `E[t^2] = 1 + sum (a phi(a) - b phi(b)) / Z`
/// in standardized coordinates, with a quadrature fallback under cancellation.
pub fn truncated_moments(mu: f64, set: &TruncationSet) -> Result<TruncatedMoments> {
    let ivs = require_intervals(set)?;
    let ln_z = ln_mass_unit(mu, ivs);
    if ln_z == f64::NEG_INFINITY || ln_z.is_nan() {
        return Err(Error::MassUnderflow);
    }
    let (mut first, mut second) = (0.0, 1.0);
    for iv in ivs {
        let (a, b) = (iv.lo - mu, iv.hi - mu);
        let (pa, pb) = (ln_normal_pdf(a) - ln_z, ln_normal_pdf(b) - ln_z);
        let ea = if a.is_finite() { pa.exp() } else { 0.0 };
        let eb = if b.is_finite() { pb.exp() } else { 0.0 };
        first += ea - eb;
        if a.is_finite() {
            second += a * ea;
        }
        if b.is_finite() {
            second -= b * eb;
        }
    }
    let variance = second - first * first;
    if !(variance > 0.0) || !variance.is_finite() || second / variance > CANCELLATION_LIMIT {
        return truncated_moments_quadrature(mu, set);
    }
    Ok(TruncatedMoments { mean: mu + first, variance })
}

/// Moments of `N(mu, 1, S)` by adaptive Gauss-Kronrod quadrature.
///
/// Integrands are scaled by the peak density on `S`, so masses far below the
/// `f64` range are handled; the mean is computed first and the variance as a
/// central moment, avoiding the cancellation of the closed forms.
pub fn truncated_moments_quadrature(mu: f64, set: &TruncationSet) -> Result<TruncatedMoments> {
    let ivs = require_intervals(set)?;
    // standardized pieces, each clipped where the density is below e^-750 of the peak
    // distance from the mean to the nearest point of S, in standardized units
    let peak = ivs
        .iter()
        .map(|iv| (iv.lo - mu).max(0.0) + (mu - iv.hi).max(0.0))
        .fold(f64::INFINITY, f64::min);
    let reach = (peak * peak + 1500.0).sqrt();
    let pieces: Vec<(f64, f64)> = ivs
        .iter()
        .filter_map(|iv| {
            let lo = (iv.lo - mu).max(-reach);
            let hi = (iv.hi - mu).min(reach);
            (hi > lo).then_some((lo, hi))
        })
        .collect();
    if pieces.is_empty() {
        return Err(Error::MassUnderflow);
    }
    let density = |t: f64| (-0.5 * (t * t - peak * peak)).exp();
    let integrate = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let mut total = 0.0;
        for &(lo, hi) in &pieces {
            total += integrate_adaptive(g, lo, hi, 0.0, QUAD_REL_TOL).ok_or(Error::QuadratureDiverged)?;
        }
        Ok(total)
    };
    let z = integrate(&|t| density(t))?;
    if !(z > 0.0) {
        return Err(Error::MassUnderflow);
    }
    let m = integrate(&|t| t * density(t))? / z;
    let v = integrate(&|t| (t - m) * (t - m) * density(t))? / z;
    Ok(TruncatedMoments { mean: mu + m, variance: v })
}

/// Negative log-likelihood `-l(w; x, y)` of one sample.
pub fn nll_single(w: &DVector<f64>, s: &Sample, set: &TruncationSet) -> Result<f64> {
    ensure_dim(w.len(), s.x.len())?;
    if !set.contains(s.y) {
        return Err(Error::OutsideSet(s.y));
    }
    let mu = w.dot(&s.x);
    let ln_mass = ln_mass_unit(mu, require_intervals(set)?);
    if ln_mass == f64::NEG_INFINITY {
        return Err(Error::MassUnderflow);
    }
    Ok(0.5 * (s.y - mu).powi(2) + LN_SQRT_2PI + ln_mass)
}

/// Average negative log-likelihood over a dataset.
pub fn nll(w: &DVector<f64>, data: &Dataset, set: &TruncationSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in data.samples() {
        total += nll_single(w, s, set)?;
    }
    Ok(total / data.n() as f64)
}

/// Stochastic gradient `v = z_j x_j - y_i x_i` of the `i`-th component.
///
/// With `z_j ~ N(w^T x_j, 1, S)` and `j` uniform, `E[v] = (1/n) sum_j E[z_j] x_j - y_i x_i`,
/// whose average over `i` is the gradient of the average negative log-likelihood.
pub fn grad_fi(w: &DVector<f64>, s_i: &Sample, x_j: &DVector<f64>, z_j: f64) -> Result<DVector<f64>> {
    ensure_dim(w.len(), s_i.x.len())?;
    ensure_dim(w.len(), x_j.len())?;
    Ok(x_j * z_j - &s_i.x * s_i.y)
}

/// Draws `j` uniformly and `z_j ~ N(w^T x_j, 1, S)`, then returns [`grad_fi`].
pub fn sample_gradient<R: Rng + ?Sized>(
    w: &DVector<f64>,
    data: &Dataset,
    i: usize,
    set: &TruncationSet,
    acc: &SamplerAccuracy,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let j = rng.random_range(0..data.n());
    let x_j = &data.samples()[j].x;
    let z = sample_truncated(w.dot(x_j), set, acc, rng)?;
    grad_fi(w, &data.samples()[i], x_j, z)
}

/// Exact gradient of the average negative log-likelihood:
/// `(1/n) sum_i (E[z_i] - y_i) x_i`.
pub fn population_gradient(w: &DVector<f64>, data: &Dataset, set: &TruncationSet) -> Result<DVector<f64>> {
    ensure_dim(data.k(), w.len())?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut g = DVector::zeros(w.len());
    for s in data.samples() {
        let m = truncated_moments(w.dot(&s.x), set)?;
        g.axpy(m.mean - s.y, &s.x, 1.0);
    }
    Ok(g / data.n() as f64)
}

/// Hessian of the average negative log-likelihood from closed-form variances.
pub fn hessian(w: &DVector<f64>, data: &Dataset, set: &TruncationSet) -> Result<DMatrix<f64>> {
    ensure_dim(data.k(), w.len())?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = w.len();
    let mut h = DMatrix::zeros(k, k);
    for s in data.samples() {
        let m = truncated_moments(w.dot(&s.x), set)?;
        h.ger(m.variance, &s.x, &s.x, 1.0);
    }
    Ok(h / data.n() as f64)
}

/// Hessian of the average negative log-likelihood,
/// `(1/n) sum_i Var[z_i] x_i x_i^T`, with variances by quadrature.
pub fn hessian_quadrature(w: &DVector<f64>, data: &Dataset, set: &TruncationSet) -> Result<DMatrix<f64>> {
    ensure_dim(data.k(), w.len())?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = w.len();
    let mut h = DMatrix::zeros(k, k);
    for s in data.samples() {
        let m = truncated_moments_quadrature(w.dot(&s.x), set)?;
        h.ger(m.variance, &s.x, &s.x, 1.0);
    }
    Ok(h / data.n() as f64)
}
