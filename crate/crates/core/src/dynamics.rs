//! Euler discretization of underdamped Langevin dynamics.
//!
//! One step of size `delta` maps `(x, v)` to
//!
//! ```text
//! x' = x + v delta + sigma_l gamma
//! v' = v + (b(x) - kappa v) delta + sigma dB
//! ```
//!
//! with `b = -grad U` and `gamma, dB ~ N(0, delta I)`. The extra position noise
//! `sigma_l gamma` vanishes as the level grows and makes the one-step law a
//! non-degenerate Gaussian on `R^{2d}`, which is what allows two chains to be
//! coupled exactly at their final step.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, UldError};
use crate::models::TargetModel;
use crate::rng::NoiseStream;

/// Position/velocity pair of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_dim("velocity", x.len(), v.len())?;
        if x.is_empty() {
            return Err(UldError::Config("phase state needs d >= 1".into()));
        }
        Ok(Self { x, v })
    }

    pub fn origin(d: usize) -> Self {
        Self {
            x: vec![0.0; d],
            v: vec![0.0; d],
        }
    }

    /// Splits a stacked `(x, v)` vector of length `2d`.
    pub fn from_stacked(y: &[f64]) -> Self {
        let d = y.len() / 2;
        Self {
            x: y[..d].to_vec(),
            v: y[d..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Bitwise equality of every coordinate; used for meeting detection.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits());
        same(&self.x, &other.x) && same(&self.v, &other.v)
    }

    /// Euclidean distance in `R^{2d}`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.v.iter().zip(&other.v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Rule giving the position-noise scale `sigma_l` at each level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SigmaSchedule {
    /// `sigma_l = scale * 2^{-rate * l}`.
    Geometric { scale: f64, rate: f64 },
    /// The same `sigma_l` at every level; only useful for tests.
    Constant { value: f64 },
}

impl SigmaSchedule {
    /// `sigma_l = Delta_l = 2^{-l}`.
    pub const DEFAULT: Self = Self::Geometric { scale: 1.0, rate: 1.0 };

    pub fn at(&self, level: u32) -> f64 {
        match *self {
            Self::Geometric { scale, rate } => scale * (-(rate * f64::from(level))).exp2(),
            Self::Constant { value } => value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Geometric { scale, rate } => scale >= 0.0 && scale.is_finite() && rate >= 0.0 && rate.is_finite(),
            Self::Constant { value } => value >= 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(UldError::Config(format!("invalid sigma_l schedule {self:?}")))
        }
    }
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Discretization level `l`: step `2^{-l}`, `2^l` steps per unit time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelParams {
    pub level: u32,
    pub delta: f64,
    pub sigma_l: f64,
    pub steps: usize,
}

impl LevelParams {
    pub const MAX_LEVEL: u32 = 30;

    pub fn new(level: u32, schedule: &SigmaSchedule) -> Result<Self> {
        if level > Self::MAX_LEVEL {
            return Err(UldError::Config(format!(
                "level {level} exceeds the supported maximum {}",
                Self::MAX_LEVEL
            )));
        }
        Ok(Self {
            level,
            delta: (-f64::from(level)).exp2(),
            sigma_l: schedule.at(level),
            steps: 1usize << level,
        })
    }

    /// The next coarser level; `None` at level 0.
    pub fn coarser(&self, schedule: &SigmaSchedule) -> Option<Self> {
        self.level.checked_sub(1).map(|l| Self::new(l, schedule).expect("coarser level is in range"))
    }
}

/// Friction `kappa` and diffusion `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub kappa: f64,
    pub sigma: f64,
}

impl DynamicsParams {
    pub fn new(kappa: f64, sigma: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(UldError::Config(format!(
                "kappa and sigma must be positive and finite, got kappa = {kappa}, sigma = {sigma}"
            )));
        }
        Ok(Self { kappa, sigma })
    }

    /// `kappa = sigma^2 / 2`, so the invariant position law is `exp(-U)`.
    pub fn balanced(sigma: f64) -> Result<Self> {
        Self::new(0.5 * sigma * sigma, sigma)
    }

    /// Relative deviation of `2 kappa` from `sigma^2`.
    pub fn balance_error(&self) -> f64 {
        (2.0 * self.kappa - self.sigma * self.sigma).abs() / (self.sigma * self.sigma)
    }

    pub fn is_balanced(&self) -> bool {
        self.balance_error() <= 1e-12
    }
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            kappa: 4.5,
            sigma: 3.0,
        }
    }
}

/// Diagonal Gaussian on the stacked `(x, v)` space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStepParams {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

/// Reusable buffers for the Euler recursion.
#[derive(Clone, Debug)]
pub struct Workspace {
    drift: Vec<f64>,
}

impl Workspace {
    pub fn new(d: usize) -> Self {
        Self { drift: vec![0.0; d] }
    }
}

/// In-place Euler step with caller-supplied increments. Dimensions are assumed
/// checked by the caller; the drift is checked for finiteness.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_in_place(
    state: &mut PhaseState,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    delta: f64,
    sigma_l: f64,
    gamma: &[f64],
    db: &[f64],
    ws: &mut Workspace,
) -> Result<()> {
    model.gradient_into(&state.x, &mut ws.drift);
    let DynamicsParams { kappa, sigma } = *dynamics;
    for i in 0..state.x.len() {
        let b = -ws.drift[i];
        if !b.is_finite() {
            return Err(UldError::NonFinite {
                what: "drift",
                coordinate: i,
                value: b,
            });
        }
        let v = state.v[i];
        state.x[i] += v * delta + sigma_l * gamma[i];
        state.v[i] = v + (b - kappa * v) * delta + sigma * db[i];
    }
    Ok(())
}

/// One Euler step from `state` with increments `gamma` and `db`.
pub fn euler_step(
    state: &PhaseState,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    level: &LevelParams,
    gamma: &[f64],
    db: &[f64],
) -> Result<PhaseState> {
    let d = model.dim();
    check_dim("state position", d, state.x.len())?;
    check_dim("state velocity", d, state.v.len())?;
    check_dim("position increment", d, gamma.len())?;
    check_dim("brownian increment", d, db.len())?;
    let mut next = state.clone();
    step_in_place(
        &mut next,
        model,
        dynamics,
        level.delta,
        level.sigma_l,
        gamma,
        db,
        &mut Workspace::new(d),
    )?;
    Ok(next)
}

/// The unit-time kernel `K_l`: `2^l` Euler steps with fresh increments.
///
/// Each step draws `gamma` then `dB`, `d` variates each, so one call consumes
/// exactly `2^{l+1} d` Gaussians from `rng`.
pub fn apply_kernel(
    state: &PhaseState,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    level: &LevelParams,
    rng: &mut NoiseStream,
) -> Result<PhaseState> {
    let d = model.dim();
    check_dim("state position", d, state.x.len())?;
    check_dim("state velocity", d, state.v.len())?;
    let mut next = state.clone();
    let mut ws = Workspace::new(d);
    let mut gamma = vec![0.0; d];
    let mut db = vec![0.0; d];
    let scale = level.delta.sqrt();
    for _ in 0..level.steps {
        rng.fill_gaussian(&mut gamma, scale);
        rng.fill_gaussian(&mut db, scale);
        step_in_place(&mut next, model, dynamics, level.delta, level.sigma_l, &gamma, &db, &mut ws)?;
    }
    Ok(next)
}

/// Mean and scale of the one-step law `p_l(. | x, v)` of a step of size `delta`
/// with position-noise scale `sigma_l`.
pub(crate) fn step_law(
    state: &PhaseState,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    delta: f64,
    sigma_l: f64,
    ws: &mut Workspace,
) -> Result<GaussianStepParams> {
    if !(sigma_l > 0.0) {
        return Err(UldError::Degenerate(format!(
            "position noise sigma_l = {sigma_l} makes the one-step law singular"
        )));
    }
    let d = state.dim();
    model.gradient_into(&state.x, &mut ws.drift);
    let mut mean = vec![0.0; 2 * d];
    for i in 0..d {
        let b = -ws.drift[i];
        if !b.is_finite() {
            return Err(UldError::NonFinite {
                what: "drift",
                coordinate: i,
                value: b,
            });
        }
        let v = state.v[i];
        mean[i] = state.x[i] + v * delta;
        mean[d + i] = v + (b - dynamics.kappa * v) * delta;
    }
    let root = delta.sqrt();
    let mut stddev = vec![sigma_l * root; 2 * d];
    stddev[d..].fill(dynamics.sigma * root);
    Ok(GaussianStepParams { mean, stddev })
}

pub fn transition_params(
    state: &PhaseState,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    level: &LevelParams,
) -> Result<GaussianStepParams> {
    let d = model.dim();
    check_dim("state position", d, state.x.len())?;
    check_dim("state velocity", d, state.v.len())?;
    step_law(state, model, dynamics, level.delta, level.sigma_l, &mut Workspace::new(d))
}
