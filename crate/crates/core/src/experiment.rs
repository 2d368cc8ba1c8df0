//! Repeated estimation over a grid of sample sizes and seeds.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, ols, relu_forward, relu_reduce, CovariateSource, FilterSpec, GeneratorConfig, SourceSpec};
use crate::error::{Error, Result};
use crate::sets::{Endpoint, SetSpec};
use crate::sgd::{estimate, SgdConfig, ZDraw};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Psgd,
    Ols,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Psgd => "psgd",
            Method::Ols => "ols",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psgd" => Ok(Method::Psgd),
            "ols" => Ok(Method::Ols),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub generator: GeneratorConfig,
    pub sgd: SgdConfig,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub output_path: String,
}

impl ExperimentPlan {
    /// Ten covariates, `w* = 1`, responses kept when `y > 4` and `w*^T x < 2`.
    pub fn truncated_default() -> Self {
        let k = 10;
        let mut sgd = SgdConfig::new(6.0, 4.0);
        sgd.a = 0.05;
        sgd.passes = 10;
        sgd.z_draw = ZDraw::Paired;
        ExperimentPlan {
            name: "truncated".into(),
            n_grid: vec![250, 500, 1000, 2000, 4000, 8000],
            seeds: (0..9).collect(),
            generator: GeneratorConfig {
                w_star: vec![1.0; k],
                covariates: SourceSpec::GaussianIid { k, clip: Some(6.0) },
                set: SetSpec::Halfline { from: Endpoint(4.0) },
                filter: Some(FilterSpec::LinearBelow { direction: vec![1.0; k], threshold: 2.0 }),
                max_attempts: crate::datagen::DEFAULT_MAX_ATTEMPTS,
            },
            sgd,
            methods: vec![Method::Psgd, Method::Ols],
            output_path: "truncated.csv".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n_grid must be nonempty and positive");
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly ascending");
        }
        if self.name.contains(',') || self.name.contains('\n') {
            return bad("name must not contain commas or newlines");
        }
        self.sgd.validate()?;
        self.generator.build()?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub name: String,
    pub n: usize,
    pub seed: u64,
    pub method: Method,
    pub l2_error: f64,
    pub wall_ms: f64,
}

/// Seed of the estimator for one `(n, seed)` cell.
fn cell_seed(base: u64, n: usize, seed: u64) -> u64 {
    base ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Runs every `(n, seed)` cell, in parallel, and returns rows sorted by
/// `(n, seed, method)`. Both methods of a cell see the same dataset.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<ResultRow>> {
    plan.validate()?;
    let spec = plan.generator.build()?;
    let w_star = DVector::from_vec(plan.generator.w_star.clone());
    let cells: Vec<(usize, u64)> = plan
        .n_grid
        .iter()
        .flat_map(|&n| plan.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let mut rows = cells
        .par_iter()
        .map(|&(n, seed)| -> Result<Vec<ResultRow>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            let data = generate(&spec, n, &mut rng).map_err(|e| e.context(format!("n={n} seed={seed} generate")))?;
            let mut out = Vec::new();
            for &method in &plan.methods {
                let started = Instant::now();
                let ctx = |e: Error| e.context(format!("n={n} seed={seed} method={}", method.as_str()));
                let w = match method {
                    Method::Psgd => {
                        let mut cfg = plan.sgd.clone();
                        cfg.seed = cell_seed(plan.sgd.seed, n, seed);
                        DVector::from_vec(estimate(&data, &spec.set, &cfg).map_err(ctx)?.w_hat)
                    }
                    Method::Ols => ols(&data).map_err(ctx)?,
                };
                out.push(ResultRow {
                    name: plan.name.clone(),
                    n,
                    seed,
                    method,
                    l2_error: (w - &w_star).norm(),
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    rows.sort_by(|a, b| (a.n, a.seed, a.method).cmp(&(b.n, b.seed, b.method)));
    Ok(rows)
}

/// End-to-end noisy-ReLU run: `y = max(0, w*^T x + eps)`, zeros dropped,
/// the rest fitted as a regression truncated to `[0, inf)`. Each `n` counts
/// ReLU outputs before the zeros are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReluPlan {
    pub name: String,
    pub w_star: Vec<f64>,
    /// Covariates are iid standard normal clipped to `[-clip, clip]`.
    pub clip: f64,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub sgd: SgdConfig,
    pub methods: Vec<Method>,
}

impl ReluPlan {
    /// `k = 5`, `w* = 1 / sqrt(k)`.
    pub fn default_plan() -> Self {
        let k = 5;
        let mut sgd = SgdConfig::new(6.0, 2.0);
        sgd.passes = 10;
        sgd.z_draw = ZDraw::Paired;
        ReluPlan {
            name: "relu".into(),
            w_star: vec![1.0 / (k as f64).sqrt(); k],
            clip: 6.0,
            n_grid: vec![500, 1000, 2000, 4000],
            seeds: (0..9).collect(),
            sgd,
            methods: vec![Method::Psgd, Method::Ols],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.w_star.is_empty() || self.w_star.iter().any(|v| !v.is_finite()) {
            return bad("w_star must be nonempty and finite");
        }
        if !(self.clip > 0.0) || self.clip > self.sgd.b_cov {
            return bad("clip must be positive and at most B_cov");
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return bad("methods and seeds must not be empty");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be positive and strictly ascending");
        }
        if self.name.contains(',') || self.name.contains('\n') {
            return bad("name must not contain commas or newlines");
        }
        self.sgd.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let plan: ReluPlan = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

pub fn run_relu(plan: &ReluPlan) -> Result<Vec<ResultRow>> {
    plan.validate()?;
    let k = plan.w_star.len();
    let w_star = DVector::from_vec(plan.w_star.clone());
    let source = CovariateSource::GaussianIid { k, clip: Some(plan.clip) };
    let cells: Vec<(usize, u64)> = plan
        .n_grid
        .iter()
        .flat_map(|&n| plan.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let mut rows = cells
        .par_iter()
        .map(|&(n, seed)| -> Result<Vec<ResultRow>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            let xs: Vec<DVector<f64>> = (0..n).map(|_| source.draw(&mut rng)).collect();
            let pairs = relu_forward(&w_star, &xs, &mut rng)?;
            let (data, set) = relu_reduce(&pairs).map_err(|e| e.context(format!("n={n} seed={seed} reduce")))?;
            let mut out = Vec::new();
            for &method in &plan.methods {
                let started = Instant::now();
                let ctx = |e: Error| e.context(format!("n={n} seed={seed} method={}", method.as_str()));
                let w = match method {
                    Method::Psgd => {
                        let mut cfg = plan.sgd.clone();
                        cfg.seed = cell_seed(plan.sgd.seed, n, seed);
                        DVector::from_vec(estimate(&data, &set, &cfg).map_err(ctx)?.w_hat)
                    }
                    Method::Ols => ols(&data).map_err(ctx)?,
                };
                out.push(ResultRow {
                    name: plan.name.clone(),
                    n,
                    seed,
                    method,
                    l2_error: (w - &w_star).norm(),
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    rows.sort_by(|a, b| (a.n, a.seed, a.method).cmp(&(b.n, b.seed, b.method)));
    Ok(rows)
}

pub const RESULT_HEADER: [&str; 6] = ["name", "n", "seed", "method", "l2_error", "wall_ms"];

pub fn write_results<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RESULT_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.name.clone(),
            r.n.to_string(),
            r.seed.to_string(),
            r.method.as_str().to_string(),
            crate::dataset::fmt_f64(r.l2_error),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(RESULT_HEADER) {
        return Err(Error::InvalidParameter(format!("results header must be {}", RESULT_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::InvalidParameter(format!("bad number {:?}", &rec[i])))
        };
        rows.push(ResultRow {
            name: rec[0].to_string(),
            n: rec[1].parse().map_err(|_| Error::InvalidParameter(format!("bad n {:?}", &rec[1])))?,
            seed: rec[2].parse().map_err(|_| Error::InvalidParameter(format!("bad seed {:?}", &rec[2])))?,
            method: rec[3].parse()?,
            l2_error: num(4)?,
            wall_ms: num(5)?,
        });
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Median error over seeds for each `n`, ascending in `n`.
pub fn median_errors(rows: &[ResultRow], method: Method) -> Vec<(usize, f64)> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == method) {
        by_n.entry(r.n).or_default().push(r.l2_error);
    }
    by_n.into_iter().map(|(n, mut v)| (n, median(&mut v))).collect()
}

/// Least-squares slope of `ln(median error)` against `ln(n)`.
pub fn fit_rate(rows: &[ResultRow], method: Method) -> Result<f64> {
    let pts = median_errors(rows, method);
    if pts.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 3 sample sizes for {}, got {}",
            method.as_str(),
            pts.len()
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidParameter("rate fit needs positive errors".into()));
    }
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
