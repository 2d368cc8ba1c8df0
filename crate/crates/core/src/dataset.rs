//! Samples, datasets, and the dataset CSV format (`x1,...,xk,y`).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::sets::TruncationSet;

/// One observed pair that survived truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Sample { x: DVector::from_vec(x), y }
    }
}

/// Ordered samples sharing one covariate dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    k: usize,
    /// Factor the covariates were divided by; 1 when unnormalized.
    pub scale: f64,
}

impl Dataset {
    pub fn new(k: usize, samples: Vec<Sample>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("covariate dimension must be positive".into()));
        }
        for s in &samples {
            ensure_dim(k, s.x.len())?;
            if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("dataset values must be finite".into()));
            }
        }
        Ok(Dataset { samples, k, scale: 1.0 })
    }

    /// Builds a dataset from covariate rows and responses.
    pub fn from_rows(rows: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        ensure_dim(rows.len(), ys.len())?;
        let k = rows.first().map(|r| r.len()).ok_or(Error::EmptyDataset)?;
        let samples = rows.iter().zip(ys).map(|(r, &y)| Sample::new(r.clone(), y)).collect();
        Self::new(k, samples)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Errors unless every response lies in `set`.
    pub fn check_responses(&self, set: &TruncationSet) -> Result<()> {
        match self.samples.iter().find(|s| !set.contains(s.y)) {
            Some(s) => Err(Error::OutsideSet(s.y)),
            None => Ok(()),
        }
    }

    /// Gram matrix `sum_i x_i x_i^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.k, self.k);
        for s in &self.samples {
            g.ger(1.0, &s.x, &s.x, 1.0);
        }
        g
    }

    /// Second-moment matrix `X = (1/n) sum_i x_i x_i^T`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let n = self.n().max(1) as f64;
        self.gram() / n
    }

    /// `n x k` design matrix.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.k, |i, j| self.samples[i].x[j])
    }

    pub fn responses(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.samples.iter().map(|s| s.y))
    }

    /// Same samples with every covariate multiplied by `factor`.
    pub fn map_covariates(&self, factor: f64) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample { x: &s.x * factor, y: s.y })
                .collect(),
            k: self.k,
            scale: self.scale,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.k).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.x.iter().map(|v| fmt_f64(*v)).collect();
            rec.push(fmt_f64(s.y));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let cols = headers.len();
        if cols < 2 || headers.get(cols - 1) != Some("y") {
            return Err(Error::InvalidParameter(
                "dataset CSV header must be x1,...,xk,y".into(),
            ));
        }
        for (j, h) in headers.iter().take(cols - 1).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(Error::InvalidParameter(format!("unexpected column {h:?}")));
            }
        }
        let k = cols - 1;
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("bad number {f:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            ensure_dim(cols, vals.len())?;
            samples.push(Sample::new(vals[..k].to_vec(), vals[k]));
        }
        Dataset::new(k, samples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// 17 significant digits: enough to round-trip any `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
