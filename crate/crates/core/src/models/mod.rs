//! Target models.
//!
//! A target is a potential `U` on `R^d` together with its gradient; the
//! Langevin drift is `b = -grad U`. Built-in targets are registered by name in
//! a [`ModelRegistry`] and constructed from a flat [`ModelOptions`] bag so the
//! CLI can select them at runtime.

mod double_well;
mod gaussian;
mod ginzburg_landau;
mod logistic;

pub use double_well::DoubleWell;
pub use gaussian::GaussianToy;
pub use ginzburg_landau::{GinzburgLandau, LatticeSpec};
pub use logistic::{LogisticData, LogisticModel};

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{check_dim, Result, UldError};

pub trait TargetModel: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// `U(x)` without dimension checks.
    fn potential_unchecked(&self, x: &[f64]) -> f64;

    /// Writes `grad U(x)` into `out` without dimension checks.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    /// Known value of `E_pi[x]`, when the target has one.
    fn reference_mean(&self) -> Option<Vec<f64>> {
        None
    }
}

pub fn evaluate_potential(model: &dyn TargetModel, x: &[f64]) -> Result<f64> {
    check_dim("potential argument", model.dim(), x.len())?;
    Ok(model.potential_unchecked(x))
}

pub fn evaluate_gradient(model: &dyn TargetModel, x: &[f64]) -> Result<Vec<f64>> {
    check_dim("gradient argument", model.dim(), x.len())?;
    let mut out = vec![0.0; x.len()];
    model.gradient_into(x, &mut out);
    Ok(out)
}

/// Construction parameters shared by all registered models. Each model reads
/// the fields it needs and falls back to its own defaults.
#[derive(Clone, Debug, Default)]
pub struct ModelOptions {
    pub dim: Option<usize>,
    pub d0: Option<usize>,
    pub n_obs: Option<usize>,
    pub seed: u64,
    pub gaussian_mean: Option<Vec<f64>>,
    pub gl_temperature: Option<f64>,
    pub gl_gamma: Option<f64>,
    pub gl_zeta: Option<f64>,
    pub logistic_csv: Option<PathBuf>,
}

type Constructor = Box<dyn Fn(&ModelOptions) -> Result<Box<dyn TargetModel>> + Send + Sync>;

pub struct ModelRegistry {
    constructors: BTreeMap<String, Constructor>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            constructors: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("gaussian", |o| {
            let model = match &o.gaussian_mean {
                Some(mean) => GaussianToy::new(mean.clone())?,
                None => GaussianToy::alternating(o.dim.unwrap_or(2))?,
            };
            Ok(Box::new(model))
        });
        reg.register("double-well", |o| {
            Ok(Box::new(DoubleWell::new(o.dim.unwrap_or(DoubleWell::DEFAULT_DIM))?))
        });
        reg.register("ginzburg-landau", |o| {
            let spec = LatticeSpec {
                d0: o.d0.unwrap_or(LatticeSpec::DEFAULT_D0),
                temperature: o.gl_temperature.unwrap_or(2.0),
                gamma: o.gl_gamma.unwrap_or(0.1),
                zeta: o.gl_zeta.unwrap_or(0.5),
            };
            Ok(Box::new(GinzburgLandau::new(spec)?))
        });
        reg.register("logistic", |o| {
            let model = match &o.logistic_csv {
                Some(path) => LogisticModel::new(LogisticData::read_csv(path)?),
                None => LogisticModel::synthetic(
                    o.seed,
                    o.n_obs.unwrap_or(LogisticModel::DEFAULT_N),
                    o.dim.unwrap_or(LogisticModel::DEFAULT_DIM),
                )?,
            };
            Ok(Box::new(model))
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn(&ModelOptions) -> Result<Box<dyn TargetModel>> + Send + Sync + 'static,
    {
        self.constructors.insert(name.to_string(), Box::new(ctor));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.constructors.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, options: &ModelOptions) -> Result<Box<dyn TargetModel>> {
        let ctor = self.constructors.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            UldError::Config(format!("unknown model `{name}` (known: {})", known.join(", ")))
        })?;
        ctor(options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_builtins() {
        let reg = ModelRegistry::builtin();
        let names: Vec<&str> = reg.names().collect();
        assert_eq!(names, ["double-well", "gaussian", "ginzburg-landau", "logistic"]);
    }

    #[test]
    fn registry_builds_with_overrides() {
        let reg = ModelRegistry::builtin();
        let opts = ModelOptions {
            dim: Some(3),
            d0: Some(4),
            ..Default::default()
        };
        assert_eq!(reg.build("double-well", &opts).unwrap().dim(), 3);
        assert_eq!(reg.build("ginzburg-landau", &opts).unwrap().dim(), 64);
        assert_eq!(reg.build("gaussian", &opts).unwrap().dim(), 3);
        assert!(matches!(reg.build("nope", &opts), Err(UldError::Config(_))));
    }

    #[test]
    fn checked_evaluation_rejects_wrong_length() {
        let m = DoubleWell::new(2).unwrap();
        assert!(matches!(
            evaluate_potential(&m, &[1.0]),
            Err(UldError::Dimension { .. })
        ));
        assert!(matches!(
            evaluate_gradient(&m, &[1.0, 2.0, 3.0]),
            Err(UldError::Dimension { .. })
        ));
    }
}
