//! Truncation sets on the real line and their Gaussian measure.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::special::{ln_std_interval_mass, ln_sum_exp};

/// Closed interval `[lo, hi]`; either endpoint may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidParameter(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, z: f64) -> bool {
        self.lo <= z && z <= self.hi
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    /// `ln N(mean, 1; [lo, hi])`.
    pub fn ln_unit_mass(&self, mean: f64) -> f64 {
        ln_std_interval_mass(self.lo - mean, self.hi - mean)
    }
}

pub type MembershipFn = dyn Fn(f64) -> bool + Send + Sync;

/// A set known only through its membership predicate.
#[derive(Clone)]
pub struct OracleSet {
    predicate: Arc<MembershipFn>,
    /// Interval known to contain the set; used as the rejection envelope.
    pub envelope: Option<Interval>,
}

impl OracleSet {
    pub fn contains(&self, z: f64) -> bool {
        (self.predicate)(z)
    }
}

impl fmt::Debug for OracleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleSet")
            .field("envelope", &self.envelope)
            .finish_non_exhaustive()
    }
}

/// Measurable subset of the real line that survives truncation.
#[derive(Clone, Debug)]
pub enum TruncationSet {
    /// Sorted, pairwise disjoint closed intervals.
    Intervals(Vec<Interval>),
    OracleOnly(OracleSet),
}

impl TruncationSet {
    /// Builds an interval union. Overlapping or touching intervals are merged.
    pub fn intervals(mut intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidParameter("interval union must be nonempty".into()));
        }
        for iv in &intervals {
            Interval::new(iv.lo, iv.hi)?;
        }
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        Ok(TruncationSet::Intervals(merged))
    }

    /// Convenience constructor from `(lo, hi)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let ivs = pairs
            .iter()
            .map(|&(a, b)| Interval::new(a, b))
            .collect::<Result<Vec<_>>>()?;
        Self::intervals(ivs)
    }

    /// `[from, inf)`
    pub fn halfline(from: f64) -> Result<Self> {
        Self::from_pairs(&[(from, f64::INFINITY)])
    }

    /// The whole real line: no truncation.
    pub fn real_line() -> Self {
        TruncationSet::Intervals(vec![Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }])
    }

    pub fn oracle<F>(predicate: F, envelope: Option<Interval>) -> Self
    where
        F: Fn(f64) -> bool + Send + Sync + 'static,
    {
        TruncationSet::OracleOnly(OracleSet {
            predicate: Arc::new(predicate),
            envelope,
        })
    }

    pub fn as_intervals(&self) -> Option<&[Interval]> {
        match self {
            TruncationSet::Intervals(v) => Some(v),
            TruncationSet::OracleOnly(_) => None,
        }
    }

    /// Characteristic function of the set. Endpoints belong to the set.
    pub fn contains(&self, z: f64) -> bool {
        match self {
            TruncationSet::Intervals(ivs) => {
                if z.is_nan() {
                    return false;
                }
                // first interval whose lower end exceeds z; the candidate is the one before
                let idx = ivs.partition_point(|iv| iv.lo <= z);
                idx > 0 && z <= ivs[idx - 1].hi
            }
            TruncationSet::OracleOnly(o) => o.contains(z),
        }
    }

    /// True when the set is the entire real line.
    pub fn is_real_line(&self) -> bool {
        matches!(self.as_intervals(), Some([iv]) if iv.lo == f64::NEG_INFINITY && iv.hi == f64::INFINITY)
    }

    /// Per-interval `ln N(mean, 1; I_i)`.
    pub fn interval_ln_masses(&self, mean: f64) -> Result<Vec<f64>> {
        let ivs = self.as_intervals().ok_or_else(oracle_mass_error)?;
        Ok(ivs.iter().map(|iv| iv.ln_unit_mass(mean)).collect())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: SetSpec = serde_json::from_str(s)?;
        spec.try_into()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// JSON description; oracle-only sets have none.
    pub fn to_spec(&self) -> Option<SetSpec> {
        let ivs = self.as_intervals()?;
        Some(match ivs {
            [iv] if iv.hi == f64::INFINITY && iv.lo.is_finite() => SetSpec::Halfline {
                from: Endpoint(iv.lo),
            },
            _ => SetSpec::Intervals {
                intervals: ivs.iter().map(|iv| [Endpoint(iv.lo), Endpoint(iv.hi)]).collect(),
            },
        })
    }
}

fn oracle_mass_error() -> Error {
    Error::InvalidParameter(
        "closed-form mass needs an interval union; use empirical_mass for oracle-only sets".into(),
    )
}

/// Mean and variance of a univariate normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gaussian needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(GaussianParams { mean, variance })
    }

    pub fn unit(mean: f64) -> Self {
        GaussianParams { mean, variance: 1.0 }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// `ln N(mean, variance; S)` for an interval union.
pub fn ln_gaussian_mass(g: GaussianParams, set: &TruncationSet) -> Result<f64> {
    GaussianParams::new(g.mean, g.variance)?;
    let ivs = set.as_intervals().ok_or_else(oracle_mass_error)?;
    let sd = g.std_dev();
    let parts: Vec<f64> = ivs
        .iter()
        .map(|iv| ln_std_interval_mass((iv.lo - g.mean) / sd, (iv.hi - g.mean) / sd))
        .collect();
    Ok(ln_sum_exp(&parts))
}

/// Gaussian probability mass of an interval union.
pub fn gaussian_mass(g: GaussianParams, set: &TruncationSet) -> Result<f64> {
    Ok(ln_gaussian_mass(g, set)?.exp().min(1.0))
}

/// Survival probability `N(w^T x, 1; S)`.
pub fn survival_probability(w: &DVector<f64>, x: &DVector<f64>, set: &TruncationSet) -> Result<f64> {
    ensure_dim(w.len(), x.len())?;
    gaussian_mass(GaussianParams::unit(w.dot(x)), set)
}

/// Monte Carlo estimate of `N(g; S)`; works for any set.
pub fn empirical_mass<R: Rng + ?Sized>(
    g: GaussianParams,
    set: &TruncationSet,
    n_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    GaussianParams::new(g.mean, g.variance)?;
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be at least 1".into()));
    }
    let sd = g.std_dev();
    let hits = (0..n_draws)
        .filter(|_| {
            let e: f64 = rng.sample(StandardNormal);
            set.contains(g.mean + sd * e)
        })
        .count();
    Ok(hits as f64 / n_draws as f64)
}

/// Interval endpoint that serializes infinities as `"-inf"` / `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Endpoint(pub f64);

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Endpoint(v)),
            Raw::Str(s) => match s.trim() {
                "inf" | "+inf" | "Infinity" => Ok(Endpoint(f64::INFINITY)),
                "-inf" | "-Infinity" => Ok(Endpoint(f64::NEG_INFINITY)),
                other => other
                    .parse::<f64>()
                    .map(Endpoint)
                    .map_err(|_| serde::de::Error::custom(format!("bad endpoint {other:?}"))),
            },
        }
    }
}

/// On-disk description of a truncation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SetSpec {
    Intervals { intervals: Vec<[Endpoint; 2]> },
    Halfline { from: Endpoint },
}

impl TryFrom<SetSpec> for TruncationSet {
    type Error = Error;

    fn try_from(spec: SetSpec) -> Result<Self> {
        match spec {
            SetSpec::Intervals { intervals } => {
                let pairs: Vec<(f64, f64)> = intervals.iter().map(|[a, b]| (a.0, b.0)).collect();
                TruncationSet::from_pairs(&pairs)
            }
            SetSpec::Halfline { from } => TruncationSet::halfline(from.0),
        }
    }
}
