use std::path::Path;

use crate::error::{Result, UldError};
use crate::models::TargetModel;
use crate::rng::{lane, NoiseStream};

/// Covariates, binary labels and the prior precision `(1/n) X^T X`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticData {
    /// Row-major `n x d`.
    pub covariates: Vec<f64>,
    pub labels: Vec<u8>,
    pub n: usize,
    pub d: usize,
    /// Row-major `d x d`.
    pub precision: Vec<f64>,
}

impl LogisticData {
    /// Wraps raw data as-is and computes the precision from it; no standardization.
    pub fn from_parts(covariates: Vec<f64>, labels: Vec<u8>, d: usize) -> Result<Self> {
        if d == 0 || !covariates.len().is_multiple_of(d) {
            return Err(UldError::Config(format!(
                "covariate buffer of length {} is not a multiple of d = {d}",
                covariates.len()
            )));
        }
        let n = covariates.len() / d;
        if labels.len() != n {
            return Err(UldError::Dimension {
                what: "logistic labels",
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(UldError::Config(format!("label {bad} is not binary")));
        }
        let precision = gram_over_n(&covariates, n, d);
        Ok(Self {
            covariates,
            labels,
            n,
            d,
            precision,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.d..(i + 1) * self.d]
    }

    /// One row per observation: `d` covariate columns, then the label.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let width = r.headers()?.len();
        if width < 2 {
            return Err(UldError::Config("logistic CSV needs at least one covariate and a label".into()));
        }
        let d = width - 1;
        let mut covariates = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..d {
                covariates.push(parse_field(&rec[j])?);
            }
            let y: u8 = rec[d]
                .trim()
                .parse()
                .map_err(|_| UldError::Config(format!("bad label `{}`", &rec[d])))?;
            labels.push(y);
        }
        Self::from_parts(covariates, labels, d)
    }
}

fn parse_field(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| UldError::Config(format!("bad covariate `{s}`")))
}

fn gram_over_n(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut p = vec![0.0; d * d];
    for row in x.chunks_exact(d) {
        for a in 0..d {
            for b in 0..d {
                p[a * d + b] += row[a] * row[b];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    p.iter_mut().for_each(|v| *v *= inv_n);
    p
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Bayesian logistic regression posterior with prior `N(0, P^{-1})`.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    data: LogisticData,
    /// `sum_i y_i x_i`, constant across evaluations.
    label_sum: Vec<f64>,
}

impl LogisticModel {
    pub const DEFAULT_N: usize = 100;
    pub const DEFAULT_DIM: usize = 5;
    const MAX_REGENERATIONS: u64 = 64;

    pub fn new(data: LogisticData) -> Self {
        let mut label_sum = vec![0.0; data.d];
        for i in 0..data.n {
            if data.labels[i] == 1 {
                for (s, x) in label_sum.iter_mut().zip(data.row(i)) {
                    *s += x;
                }
            }
        }
        Self { data, label_sum }
    }

    /// Synthetic data set: covariates uniform on `{-1, 1}^d`, standardized per
    /// column; labels Bernoulli under a hidden `N(0, I)` coefficient vector.
    pub fn synthetic(seed: u64, n: usize, d: usize) -> Result<Self> {
        if n < 2 || d == 0 {
            return Err(UldError::Config(format!(
                "logistic data needs n >= 2 and d >= 1, got n = {n}, d = {d}"
            )));
        }
        for attempt in 0..Self::MAX_REGENERATIONS {
            let mut rng = NoiseStream::derived(seed, lane::DATA, attempt);
            let raw: Vec<f64> = (0..n * d)
                .map(|_| if rng.uniform() <= 0.5 { -1.0 } else { 1.0 })
                .collect();
            let Some(x) = standardize_columns(&raw, n, d) else {
                log::warn!("logistic data attempt {attempt}: constant covariate column, regenerating");
                continue;
            };
            let truth: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let labels: Vec<u8> = x
                .chunks_exact(d)
                .map(|row| {
                    let eta: f64 = row.iter().zip(&truth).map(|(a, b)| a * b).sum();
                    u8::from(rng.uniform() <= sigmoid(eta))
                })
                .collect();
            return Ok(Self::new(LogisticData::from_parts(x, labels, d)?));
        }
        Err(UldError::Numeric(format!(
            "could not draw a non-degenerate design after {} attempts",
            Self::MAX_REGENERATIONS
        )))
    }

    pub fn data(&self) -> &LogisticData {
        &self.data
    }
}

/// Column-wise `(x - mean) / sd` with the `n - 1` sample standard deviation;
/// `None` if some column is constant.
fn standardize_columns(raw: &[f64], n: usize, d: usize) -> Option<Vec<f64>> {
    let mut out = raw.to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| raw[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (raw[i * d + j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var <= 0.0 {
            return None;
        }
        let sd = var.sqrt();
        for i in 0..n {
            out[i * d + j] = (raw[i * d + j] - mean) / sd;
        }
    }
    Some(out)
}

impl TargetModel for LogisticModel {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.data.d
    }

    fn potential_unchecked(&self, alpha: &[f64]) -> f64 {
        let d = self.data.d;
        let mut total = 0.0;
        for i in 0..self.data.n {
            let eta: f64 = self.data.row(i).iter().zip(alpha).map(|(a, b)| a * b).sum();
            total -= f64::from(self.data.labels[i]) * eta - softplus(eta);
        }
        let p = &self.data.precision;
        let mut quad = 0.0;
        for a in 0..d {
            let row: f64 = (0..d).map(|b| p[a * d + b] * alpha[b]).sum();
            quad += alpha[a] * row;
        }
        total + 0.5 * quad
    }

    fn gradient_into(&self, alpha: &[f64], out: &mut [f64]) {
        let d = self.data.d;
        let p = &self.data.precision;
        for a in 0..d {
            out[a] = -self.label_sum[a] + (0..d).map(|b| p[a * d + b] * alpha[b]).sum::<f64>();
        }
        for i in 0..self.data.n {
            let row = self.data.row(i);
            let eta: f64 = row.iter().zip(alpha).map(|(a, b)| a * b).sum();
            let r = sigmoid(eta);
            for (o, x) in out.iter_mut().zip(row) {
                *o += r * x;
            }
        }
    }
}
