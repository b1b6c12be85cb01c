//! Fixed-setting Schrodinger-Follmer sampler.
//!
//! The diffusion `dX_t = b(X_t, t) dt + dW_t` on `[0, 1]` from `X_0 = 0` has
//! terminal law `pi ~ exp(-U)` when
//!
//! ```text
//! b(x, t) = E[grad f(x + sqrt(1 - t) Z)] / E[f(x + sqrt(1 - t) Z)],
//! f(z) = pi(z) / phi(z) = exp(-U(z) + |z|^2 / 2),
//! ```
//!
//! with `Z ~ N(0, I)`. Both expectations are replaced by `N`-sample means and
//! the SDE is Euler-discretized with step `2^-l`. Since
//! `grad f = f (z - grad U(z))`, the drift estimate is a self-normalized
//! weighted mean of `z - grad U(z)` and is evaluated in log space.

use crate::error::{check_dim, Result, UldError};
use crate::models::TargetModel;
use crate::rng::NoiseStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SfsConfig {
    pub level: u32,
    /// Monte Carlo samples per drift evaluation.
    pub n_samples: usize,
}

impl SfsConfig {
    pub fn new(level: u32, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(UldError::Config("SFS needs at least one drift sample".into()));
        }
        if level > 24 {
            return Err(UldError::Config(format!("SFS level {level} is too fine")));
        }
        Ok(Self { level, n_samples })
    }
}

/// Monte Carlo estimate of the drift `b(x, t)`.
pub fn sfs_drift_estimate(
    x: &[f64],
    t: f64,
    n_samples: usize,
    model: &dyn TargetModel,
    rng: &mut NoiseStream,
) -> Result<Vec<f64>> {
    let d = model.dim();
    check_dim("SFS position", d, x.len())?;
    if !(0.0..1.0).contains(&t) {
        return Err(UldError::Config(format!("SFS time {t} outside [0, 1)")));
    }
    if n_samples == 0 {
        return Err(UldError::Config("SFS needs at least one drift sample".into()));
    }
    let scale = (1.0 - t).sqrt();
    let mut log_w = Vec::with_capacity(n_samples);
    let mut scores = Vec::with_capacity(n_samples * d);
    let mut z = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for _ in 0..n_samples {
        rng.fill_gaussian(&mut z, scale);
        for (zi, xi) in z.iter_mut().zip(x) {
            *zi += xi;
        }
        let norm2: f64 = z.iter().map(|v| v * v).sum();
        log_w.push(-model.potential_unchecked(&z) + 0.5 * norm2);
        model.gradient_into(&z, &mut grad);
        scores.extend(z.iter().zip(&grad).map(|(a, g)| a - g));
    }

    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(UldError::Numeric(format!(
            "SFS log-weights have maximum {shift} at x = {x:?}, t = {t}"
        )));
    }
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for (lw, s) in log_w.iter().zip(scores.chunks_exact(d)) {
        let w = (lw - shift).exp();
        den += w;
        for (n, v) in num.iter_mut().zip(s) {
            *n += w * v;
        }
    }
    if !(den > 0.0 && den.is_finite()) || num.iter().any(|v| !v.is_finite()) {
        return Err(UldError::Numeric(format!(
            "SFS weight sum {den} degenerate after shifting by {shift} (x = {x:?}, t = {t}, N = {n_samples})"
        )));
    }
    Ok(num.into_iter().map(|n| n / den).collect())
}

/// One terminal sample `X_1` of the Euler-discretized sampler.
pub fn sfs_sample(config: &SfsConfig, model: &dyn TargetModel, rng: &mut NoiseStream) -> Result<Vec<f64>> {
    let d = model.dim();
    let steps = 1usize << config.level;
    let delta = 1.0 / steps as f64;
    let sd = delta.sqrt();
    let mut x = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for k in 0..steps {
        let b = sfs_drift_estimate(&x, k as f64 * delta, config.n_samples, model, rng)?;
        rng.fill_gaussian(&mut dw, sd);
        for ((xi, bi), wi) in x.iter_mut().zip(&b).zip(&dw) {
            *xi += bi * delta + wi;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DoubleWell, GaussianToy};

    #[test]
    fn standard_gaussian_has_zero_drift() {
        let m = GaussianToy::standard(3).unwrap();
        let mut rng = NoiseStream::new(1);
        for t in [0.0, 0.3, 0.99] {
            for n in [1, 10, 100] {
                let b = sfs_drift_estimate(&[0.5, -2.0, 1.0], t, n, &m, &mut rng).unwrap();
                assert_eq!(b, vec![0.0; 3]);
            }
        }
    }

    #[test]
    fn gaussian_shift_drift_is_the_shift() {
        let m = GaussianToy::new(vec![1.5, -0.5]).unwrap();
        let mut rng = NoiseStream::new(2);
        let b = sfs_drift_estimate(&[0.2, 0.1], 0.25, 1000, &m, &mut rng).unwrap();
        assert!((b[0] - 1.5).abs() < 1e-9 && (b[1] + 0.5).abs() < 1e-9, "{b:?}");
    }

    #[test]
    fn single_sample_is_finite() {
        let m = DoubleWell::new(2).unwrap();
        let mut rng = NoiseStream::new(3);
        let b = sfs_drift_estimate(&[3.0, -1.0], 0.5, 1, &m, &mut rng).unwrap();
        assert!(b.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_same_sample() {
        let m = DoubleWell::new(2).unwrap();
        let cfg = SfsConfig::new(4, 50).unwrap();
        let a = sfs_sample(&cfg, &m, &mut NoiseStream::new(9)).unwrap();
        let b = sfs_sample(&cfg, &m, &mut NoiseStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = GaussianToy::standard(2).unwrap();
        let mut rng = NoiseStream::new(4);
        assert!(sfs_drift_estimate(&[0.0, 0.0], 1.0, 10, &m, &mut rng).is_err());
        assert!(sfs_drift_estimate(&[0.0], 0.0, 10, &m, &mut rng).is_err());
        assert!(SfsConfig::new(3, 0).is_err());
    }
}
