use crate::error::{Result, UldError};
use crate::models::TargetModel;

/// `U(x) = |x - mean|^2 / 2`. With `2 kappa = sigma^2` the position marginal
/// of the invariant law is `N(mean, I)`, which makes this the analytic oracle
/// for unbiasedness checks.
#[derive(Clone, Debug)]
pub struct GaussianToy {
    mean: Vec<f64>,
}

impl GaussianToy {
    pub fn new(mean: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(UldError::Config("gaussian target needs d >= 1".into()));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(UldError::NonFinite {
                what: "gaussian mean",
                coordinate: i,
                value: mean[i],
            });
        }
        Ok(Self { mean })
    }

    /// Mean `(1, -1, 1, -1, ...)` of length `d`.
    pub fn alternating(d: usize) -> Result<Self> {
        Self::new((0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect())
    }

    pub fn standard(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

impl TargetModel for GaussianToy {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn potential_unchecked(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.mean)
            .map(|(xi, mi)| (xi - mi) * (xi - mi))
            .sum::<f64>()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = xi - mi;
        }
    }

    fn reference_mean(&self) -> Option<Vec<f64>> {
        Some(self.mean.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_is_shift() {
        let m = GaussianToy::new(vec![1.0, -1.0]).unwrap();
        let mut g = [0.0; 2];
        m.gradient_into(&[3.0, 0.5], &mut g);
        assert_eq!(g, [2.0, 1.5]);
        assert_eq!(m.potential_unchecked(&[1.0, -1.0]), 0.0);
    }

    #[test]
    fn rejects_empty() {
        assert!(GaussianToy::new(vec![]).is_err());
    }
}
