//! Projected stochastic gradient descent without replacement.
//!
//! Covariates are divided by `B_cov sqrt(k)` so that `|x| <= 1`, which scales
//! the coefficient bound to `B_cov C_norm sqrt(k)`. Each pass visits the
//! samples in a fresh random order; step `t` (counted across passes) uses
//! `eta_t = 1 / (lambda t)` and is followed by a projection onto the feasible
//! domain. The estimate is the average of all iterates, mapped back to the
//! original covariate scale.
//!
//! With [`ZDraw::Uniform`] the gradient variance carries the spread of
//! `y x` over the whole sample, which for strongly truncated data is orders of
//! magnitude above the curvature; [`ZDraw::Paired`] keeps only the
//! conditional noise of each response.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::datagen::ols;
use crate::error::{ensure_dim, Error, Result};
use crate::likelihood::{grad_fi, hessian};
use crate::linalg::{min_eigenvalue, sqrt_and_inv_sqrt, top_eigen};
use crate::projection::{Domain, DomainParams, Residual, DEFAULT_TOLERANCE};
use crate::sampler::{sample_truncated, SamplerAccuracy};
use crate::sets::{survival_probability, TruncationSet};

/// Steps whose gradient norm exceeds this multiple of the coefficient bound are skipped.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

fn default_passes() -> usize {
    1
}
fn default_a() -> f64 {
    0.05
}
fn default_tv_budget() -> f64 {
    SamplerAccuracy::default().tv_budget
}
fn default_projection_tol() -> f64 {
    DEFAULT_TOLERANCE
}

/// Which covariate the step's `z` is drawn at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZDraw {
    /// A fresh uniform index `j`, independent of the visiting order.
    #[default]
    Uniform,
    /// The visited sample itself (`j = i`), giving `v = (z_i - y_i) x_i`.
    Paired,
}

/// Estimator settings. `lambda = None` selects the data-driven default
/// (see [`default_lambda`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(rename = "B_cov")]
    pub b_cov: f64,
    #[serde(rename = "C_norm")]
    pub c_norm: f64,
    #[serde(default = "default_tv_budget")]
    pub tv_budget: f64,
    #[serde(default = "default_projection_tol")]
    pub projection_tol: f64,
    #[serde(default)]
    pub z_draw: ZDraw,
    #[serde(skip)]
    pub record_trace: bool,
}

impl SgdConfig {
    pub fn new(b_cov: f64, c_norm: f64) -> Self {
        SgdConfig {
            lambda: None,
            passes: default_passes(),
            seed: 0,
            a: default_a(),
            b_cov,
            c_norm,
            tv_budget: default_tv_budget(),
            projection_tol: default_projection_tol(),
            z_draw: ZDraw::Uniform,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return bad(format!("lambda={l} must be positive"));
            }
        }
        if self.passes == 0 {
            return bad("passes must be at least 1".into());
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return bad(format!("a={} outside (0,1]", self.a));
        }
        if !(self.b_cov > 0.0) || !self.b_cov.is_finite() {
            return bad(format!("B_cov={} must be positive", self.b_cov));
        }
        if !(self.c_norm > 0.0) || !self.c_norm.is_finite() {
            return bad(format!("C_norm={} must be positive", self.c_norm));
        }
        if !(self.projection_tol > 0.0) {
            return bad(format!("projection_tol={} must be positive", self.projection_tol));
        }
        self.sampler_accuracy().validate()
    }

    pub fn sampler_accuracy(&self) -> SamplerAccuracy {
        SamplerAccuracy { tv_budget: self.tv_budget, ..SamplerAccuracy::default() }
    }

    /// Coefficient bound after normalization, `B_cov C_norm sqrt(k)`.
    pub fn normalized_bound(&self, k: usize) -> f64 {
        self.b_cov * self.c_norm * (k as f64).sqrt()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: SgdConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub grad_norm: f64,
    /// Largest constraint violation of the iterate after projection.
    pub residual: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub w_hat: Vec<f64>,
    pub steps: usize,
    pub lambda: f64,
    pub rejected_steps: usize,
    pub projected_steps: usize,
    /// Word position of the generator after the run.
    pub rng_state: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

/// Divides covariates by `B_cov sqrt(k)`; returns the scaled data and the factor.
pub fn normalize(data: &Dataset, cfg: &SgdConfig) -> Result<(Dataset, f64)> {
    for s in data.samples() {
        if let Some(&v) = s.x.iter().find(|v| v.abs() > cfg.b_cov) {
            return Err(Error::CovariateOutOfBounds { value: v, bound: cfg.b_cov });
        }
    }
    let scale = cfg.b_cov * (data.k() as f64).sqrt();
    let mut out = data.map_covariates(1.0 / scale);
    out.scale = data.scale * scale;
    Ok((out, scale))
}

/// Strong-convexity constant used when the config leaves `lambda` unset:
/// half the smallest eigenvalue of the Hessian at `pilot`.
pub fn default_lambda(pilot: &DVector<f64>, data: &Dataset, set: &TruncationSet) -> Result<f64> {
    let h = hessian(pilot, data, set)?;
    let l = 0.5 * min_eigenvalue(&h);
    if l > 0.0 && l.is_finite() {
        Ok(l)
    } else {
        Err(Error::SingularCovariates(l))
    }
}

/// Runs the estimator on `data` (original covariate scale).
pub fn estimate(data: &Dataset, set: &TruncationSet, cfg: &SgdConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_responses(set)?;
    let (norm, scale) = normalize(data, cfg)?;
    let k = data.k();
    let n = norm.n();
    let bound = cfg.normalized_bound(k);
    let domain = Domain::new(DomainParams::from_survival(cfg.a, bound)?, &norm)?;
    let tol = cfg.projection_tol;
    let acc = cfg.sampler_accuracy();

    let w0 = domain.project(&DVector::zeros(k), tol)?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => {
            let pilot = match ols(&norm).ok() {
                Some(w) if set.as_intervals().is_some() => domain.project(&w, tol)?,
                _ => w0.clone(),
            };
            match set.as_intervals() {
                Some(_) => default_lambda(&pilot, &norm, set)?,
                // without masses, the untruncated curvature stands in
                None => 0.5 * min_eigenvalue(&norm.second_moment()),
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: &[Sample] = norm.samples();
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = w0;
    let mut sum = DVector::zeros(k);
    let mut trace = cfg.record_trace.then(Vec::new);
    let (mut step, mut rejected, mut projected) = (0usize, 0usize, 0usize);
    for _ in 0..cfg.passes {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = 1.0 / (lambda * step as f64);
            let j = match cfg.z_draw {
                ZDraw::Uniform => rng.random_range(0..n),
                ZDraw::Paired => i,
            };
            let x_j = &samples[j].x;
            let z = sample_truncated(w.dot(x_j), set, &acc, &mut rng)?;
            let v = grad_fi(&w, &samples[i], x_j, z)?;
            let grad_norm = v.norm();
            let reject = !(grad_norm <= DIVERGENCE_FACTOR * bound);
            if reject {
                rejected += 1;
            } else {
                let moved = &w - v * eta;
                let next = domain.project_from(&moved, Some(&w), tol)?;
                if next != moved {
                    projected += 1;
                }
                w = next;
            }
            if w.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteIterate(step));
            }
            if let Some(t) = trace.as_mut() {
                t.push(TraceEntry {
                    step,
                    grad_norm,
                    residual: domain.residual(&w).map(|r: Residual| r.max()).unwrap_or(f64::NAN),
                    rejected: reject,
                });
            }
            sum += &w;
        }
    }
    let w_hat = sum / (step as f64 * scale);
    Ok(EstimateResult {
        w_hat: w_hat.iter().copied().collect(),
        steps: step,
        lambda,
        rejected_steps: rejected,
        projected_steps: projected,
        rng_state: rng.get_word_pos() as u64,
        trace,
    })
}

/// Witness values for the survival and thickness conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Smallest eigenvalue of `X = (1/n) sum x x^T`.
    pub min_eigenvalue: f64,
    /// `max_i x_i^T X^{-1} x_i`, compared against `n / ln k`.
    pub max_leverage: Option<f64>,
    pub leverage_limit: f64,
    pub thickness_holds: bool,
    /// `exp(-lambda_max(X^{-1/2} [(1/n) sum ln(1/alpha_i) x x^T] X^{-1/2}))`.
    pub implied_a: Option<f64>,
    pub min_survival: f64,
    pub survival_holds: bool,
}

/// Checks the survival and thickness conditions at reference coefficients `w_ref`.
pub fn check_assumptions(data: &Dataset, w_ref: &DVector<f64>, set: &TruncationSet) -> Result<AssumptionReport> {
    ensure_dim(data.k(), w_ref.len())?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.n() as f64;
    let k = data.k();
    let x = data.second_moment();
    let min_eig = min_eigenvalue(&x);
    let leverage_limit = if k >= 2 { n / (k as f64).ln() } else { f64::INFINITY };
    let alphas = data
        .samples()
        .iter()
        .map(|s| survival_probability(w_ref, &s.x, set))
        .collect::<Result<Vec<f64>>>()?;
    let min_survival = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let inv_sqrt = match sqrt_and_inv_sqrt(&x, crate::projection::MIN_COVARIATE_EIGENVALUE) {
        Ok((_, w)) => Some(w),
        Err(Error::SingularCovariates(_)) => None,
        Err(e) => return Err(e),
    };
    let (max_leverage, implied_a) = match &inv_sqrt {
        Some(w) => {
            let lev = data
                .samples()
                .iter()
                .map(|s| (w * &s.x).norm_squared())
                .fold(0.0, f64::max);
            let mut l = DMatrix::zeros(k, k);
            for (s, a) in data.samples().iter().zip(&alphas) {
                l.ger(-a.ln(), &s.x, &s.x, 1.0);
            }
            let m = w * (l / n) * w;
            let top = top_eigen(&((&m + m.transpose()) * 0.5))?;
            (Some(lev), Some((-top.value).exp()))
        }
        None => (None, None),
    };
    let thickness_holds = max_leverage.is_some_and(|lev| lev <= leverage_limit);
    let survival_holds = implied_a.is_some_and(|a| a > 0.0);
    Ok(AssumptionReport {
        min_eigenvalue: min_eig,
        max_leverage,
        leverage_limit,
        thickness_holds,
        implied_a,
        min_survival,
        survival_holds,
    })
}
