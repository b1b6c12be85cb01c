use crate::error::{Result, UldError};
use crate::models::TargetModel;

/// Radially symmetric quartic double well, `U(x) = |x|^4 / 4 - |x|^2 / 2`.
#[derive(Clone, Debug)]
pub struct DoubleWell {
    d: usize,
}

impl DoubleWell {
    pub const DEFAULT_DIM: usize = 100;

    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(UldError::Config("double-well target needs d >= 1".into()));
        }
        Ok(Self { d })
    }
}

impl TargetModel for DoubleWell {
    fn name(&self) -> &str {
        "double-well"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn potential_unchecked(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        0.25 * r2 * r2 - 0.5 * r2
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let c = r2 - 1.0;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi;
        }
    }

    fn reference_mean(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.d])
    }
}
