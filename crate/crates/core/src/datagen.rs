//! Synthetic truncated-regression data, the least-squares baseline, and the
//! noisy-ReLU reduction.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{ensure_dim, Error, Result};
use crate::sets::{SetSpec, TruncationSet};

pub const DEFAULT_MAX_ATTEMPTS: usize = 1_000_000;

pub type CovariateFn = Arc<dyn Fn(&mut dyn RngCore) -> DVector<f64> + Send + Sync>;
pub type FilterFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

#[derive(Clone)]
pub enum CovariateSource {
    /// Independent standard normal coordinates, each clamped to `[-clip, clip]` if set.
    GaussianIid { k: usize, clip: Option<f64> },
    /// Uniform draws from a fixed list of vectors.
    FixedList(Vec<DVector<f64>>),
    Custom { k: usize, draw: CovariateFn },
}

impl fmt::Debug for CovariateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateSource::GaussianIid { k, clip } => f.debug_struct("GaussianIid").field("k", k).field("clip", clip).finish(),
            CovariateSource::FixedList(v) => f.debug_tuple("FixedList").field(&v.len()).finish(),
            CovariateSource::Custom { k, .. } => f.debug_struct("Custom").field("k", k).finish_non_exhaustive(),
        }
    }
}

impl CovariateSource {
    pub fn dim(&self) -> Option<usize> {
        match self {
            CovariateSource::GaussianIid { k, .. } | CovariateSource::Custom { k, .. } => Some(*k),
            CovariateSource::FixedList(v) => v.first().map(|x| x.len()),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            CovariateSource::GaussianIid { k, clip } => DVector::from_fn(*k, |_, _| {
                let v: f64 = rng.sample(StandardNormal);
                match clip {
                    Some(c) => v.clamp(-c, *c),
                    None => v,
                }
            }),
            CovariateSource::FixedList(v) => v[rng.random_range(0..v.len())].clone(),
            CovariateSource::Custom { draw, .. } => draw(rng),
        }
    }
}

#[derive(Clone)]
pub enum CovariateFilter {
    /// Keep `x` when `direction^T x < threshold`.
    LinearBelow { direction: DVector<f64>, threshold: f64 },
    Custom(FilterFn),
}

impl fmt::Debug for CovariateFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateFilter::LinearBelow { direction, threshold } => f
                .debug_struct("LinearBelow")
                .field("direction", &direction.as_slice())
                .field("threshold", threshold)
                .finish(),
            CovariateFilter::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl CovariateFilter {
    pub fn accepts(&self, x: &DVector<f64>) -> bool {
        match self {
            CovariateFilter::LinearBelow { direction, threshold } => direction.dot(x) < *threshold,
            CovariateFilter::Custom(f) => f(x),
        }
    }
}

/// Data-generating process: draw `x`, set `y = w*^T x + eps`, keep the pair
/// only if `y` is in the set and `x` passes the filter.
#[derive(Clone, Debug)]
pub struct GeneratorSpec {
    pub w_star: DVector<f64>,
    pub source: CovariateSource,
    pub set: TruncationSet,
    pub filter: Option<CovariateFilter>,
    pub max_attempts: usize,
}

impl GeneratorSpec {
    pub fn new(w_star: DVector<f64>, source: CovariateSource, set: TruncationSet) -> Self {
        GeneratorSpec { w_star, source, set, filter: None, max_attempts: DEFAULT_MAX_ATTEMPTS }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.source.dim().ok_or_else(|| Error::InvalidParameter("empty covariate list".into()))?;
        ensure_dim(k, self.w_star.len())?;
        if let CovariateSource::FixedList(v) = &self.source {
            for x in v {
                ensure_dim(k, x.len())?;
            }
        }
        if let Some(CovariateFilter::LinearBelow { direction, .. }) = &self.filter {
            ensure_dim(k, direction.len())?;
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidParameter("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.w_star.len()
    }

    /// One accepted sample and the number of attempts it took.
    pub fn draw_one<R: Rng>(&self, rng: &mut R) -> Result<(Sample, usize)> {
        for attempt in 1..=self.max_attempts {
            let x = self.source.draw(rng);
            let eps: f64 = rng.sample(StandardNormal);
            let y = self.w_star.dot(&x) + eps;
            if self.set.contains(y) && self.filter.as_ref().is_none_or(|f| f.accepts(&x)) {
                return Ok((Sample { x, y }, attempt));
            }
        }
        Err(Error::AttemptsExhausted(self.max_attempts))
    }
}

/// Samples `n` surviving pairs. Sample `i` uses its own stream of a generator
/// seeded from `rng`, so the output does not depend on thread scheduling.
pub fn generate<R: Rng + ?Sized>(spec: &GeneratorSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    Ok(generate_counted(spec, n, rng)?.0)
}

/// [`generate`] that also reports the total number of attempts.
pub fn generate_counted<R: Rng + ?Sized>(spec: &GeneratorSpec, n: usize, rng: &mut R) -> Result<(Dataset, usize)> {
    spec.validate()?;
    let base = rng.next_u64();
    let drawn = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sub = ChaCha8Rng::seed_from_u64(base);
            sub.set_stream(i as u64);
            spec.draw_one(&mut sub)
        })
        .collect::<Result<Vec<_>>>()?;
    let attempts = drawn.iter().map(|(_, a)| a).sum();
    let samples = drawn.into_iter().map(|(s, _)| s).collect();
    Ok((Dataset::new(spec.k(), samples)?, attempts))
}

/// Least-squares coefficients via Householder QR of the design matrix.
pub fn ols(data: &Dataset) -> Result<DVector<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = data.k();
    if data.n() < k {
        return Err(Error::SingularCovariates(0.0));
    }
    let qr = data.design().qr();
    let r = qr.r();
    let scale = r.amax().max(f64::MIN_POSITIVE);
    if let Some(d) = (0..k).map(|i| r[(i, i)].abs()).find(|d| *d <= 1e-12 * scale) {
        return Err(Error::SingularCovariates(d));
    }
    let qty = qr.q().tr_mul(&data.responses());
    r.solve_upper_triangular(&qty).ok_or(Error::SingularCovariates(0.0))
}

/// Noisy ReLU outputs `max(0, w*^T x + eps)` for the given covariates.
pub fn relu_forward<R: Rng + ?Sized>(w_star: &DVector<f64>, xs: &[DVector<f64>], rng: &mut R) -> Result<Vec<(DVector<f64>, f64)>> {
    xs.iter()
        .map(|x| {
            ensure_dim(w_star.len(), x.len())?;
            let eps: f64 = rng.sample(StandardNormal);
            Ok((x.clone(), (w_star.dot(x) + eps).max(0.0)))
        })
        .collect()
}

/// Drops the zero outputs of a noisy ReLU, leaving a truncated regression
/// on `[0, inf)` (the dropped boundary has measure zero).
pub fn relu_reduce(pairs: &[(DVector<f64>, f64)]) -> Result<(Dataset, TruncationSet)> {
    let k = pairs.first().map(|p| p.0.len()).ok_or(Error::EmptyDataset)?;
    let mut samples = Vec::new();
    for (x, y) in pairs {
        if *y < 0.0 || y.is_nan() {
            return Err(Error::InvalidParameter(format!("ReLU output {y} is negative")));
        }
        if *y > 0.0 {
            samples.push(Sample { x: x.clone(), y: *y });
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((Dataset::new(k, samples)?, TruncationSet::halfline(0.0)?))
}

/// JSON form of a covariate source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    GaussianIid {
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<f64>,
    },
    FixedList { vectors: Vec<Vec<f64>> },
}

/// JSON form of a covariate filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    LinearBelow { direction: Vec<f64>, threshold: f64 },
}

fn default_max_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

/// JSON form of a [`GeneratorSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub w_star: Vec<f64>,
    pub covariates: SourceSpec,
    pub set: SetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSpec>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

impl GeneratorConfig {
    pub fn build(&self) -> Result<GeneratorSpec> {
        let source = match &self.covariates {
            SourceSpec::GaussianIid { k, clip } => CovariateSource::GaussianIid { k: *k, clip: *clip },
            SourceSpec::FixedList { vectors } => {
                CovariateSource::FixedList(vectors.iter().map(|v| DVector::from_vec(v.clone())).collect())
            }
        };
        let filter = self.filter.as_ref().map(|f| match f {
            FilterSpec::LinearBelow { direction, threshold } => CovariateFilter::LinearBelow {
                direction: DVector::from_vec(direction.clone()),
                threshold: *threshold,
            },
        });
        let spec = GeneratorSpec {
            w_star: DVector::from_vec(self.w_star.clone()),
            source,
            set: TruncationSet::try_from(self.set.clone())?,
            filter,
            max_attempts: self.max_attempts,
        };
        spec.validate()?;
        Ok(spec)
    }
}
