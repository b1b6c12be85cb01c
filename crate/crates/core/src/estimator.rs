//! Meeting-time estimators and randomized-level debiasing.
//!
//! A single-level pair starts lagged by one kernel step (`U_0 ~ K_l(u_0)`,
//! `U~_0 = u~_0`) and evolves under the coupled kernel until the chains meet
//! at `tau`. The time-averaged estimate of `pi_l(phi)` is
//!
//! ```text
//! 1/(m-k+1) sum_{n=k}^{m} phi(U_n)
//!   + sum_{n=k+1}^{tau-1} min(1, (n-k)/(m-k+1)) (phi(U_n) - phi(U~_n))
//! ```
//!
//! Quad chains give the same estimate at levels `l` and `l - 1` on coupled
//! pairs, and their difference estimates `pi_l(phi) - pi_{l-1}(phi)`. A
//! replicate samples a level `L`, runs the matching construction and divides
//! by `P(L)`; averaging replicates gives an unbiased estimate of `pi(phi)` up
//! to the truncation at `l_max`.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_kernel, DynamicsParams, LevelParams, PhaseState, SigmaSchedule};
use crate::error::{Result, UldError};
use crate::kernels::{sample_k_check, sample_k_check_quad, sample_kbar, CoupledPair, FinalStepDraw, LevelPair, QuadState};
use crate::models::TargetModel;
use crate::rng::NoiseStream;

/// Test function `phi` evaluated on a chain state.
pub trait Observable: Send + Sync {
    fn name(&self) -> &str;

    /// Output length for a target of dimension `d`.
    fn output_dim(&self, d: usize) -> usize;

    fn eval_into(&self, state: &PhaseState, out: &mut [f64]);
}

/// `phi(x, v) = x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Position;

impl Observable for Position {
    fn name(&self) -> &str {
        "position"
    }
    fn output_dim(&self, d: usize) -> usize {
        d
    }
    fn eval_into(&self, state: &PhaseState, out: &mut [f64]) {
        out.copy_from_slice(&state.x);
    }
}

/// `phi(u) = u_1`, the first position coordinate.
#[derive(Clone, Copy, Debug, Default)]
pub struct FirstCoordinate;

impl Observable for FirstCoordinate {
    fn name(&self) -> &str {
        "first"
    }
    fn output_dim(&self, _: usize) -> usize {
        1
    }
    fn eval_into(&self, state: &PhaseState, out: &mut [f64]) {
        out[0] = state.x[0];
    }
}

/// `phi = c`.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl Observable for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn output_dim(&self, _: usize) -> usize {
        1
    }
    fn eval_into(&self, _: &PhaseState, out: &mut [f64]) {
        out[0] = self.0;
    }
}

pub fn observable_by_name(name: &str) -> Result<Arc<dyn Observable>> {
    match name {
        "position" => Ok(Arc::new(Position)),
        "first" => Ok(Arc::new(FirstCoordinate)),
        other => Err(UldError::Config(format!(
            "unknown observable `{other}` (expected position or first)"
        ))),
    }
}

/// How the burn-in `k` and horizon `m` are fixed once the stopping time is known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MPolicy {
    /// `m = min(2k, tau - 1)`, with `k <- max(1, floor(tau / 2))` when
    /// `tau < k - 1`; `m` is then raised to `k` if needed.
    Adaptive,
    /// `k` as configured and a constant `m >= k`.
    Fixed { m: usize },
}

impl MPolicy {
    /// Returns the `(k, m)` actually used for stopping time `tau`.
    pub fn resolve(&self, k: usize, tau: usize) -> (usize, usize) {
        match *self {
            Self::Adaptive => {
                let k = if tau + 1 < k { (tau / 2).max(1) } else { k };
                let m = (2 * k).min(tau.saturating_sub(1)).max(k);
                (k, m)
            }
            Self::Fixed { m } => (k, m),
        }
    }
}

#[derive(Clone)]
pub struct EstimatorConfig {
    pub l_star: u32,
    pub l_max: u32,
    /// `P(L = l)` is proportional to `2^{-level_exponent * l}`.
    pub level_exponent: f64,
    pub alpha: f64,
    pub k: usize,
    pub m_policy: MPolicy,
    pub replicates: usize,
    pub observable: Arc<dyn Observable>,
    pub seed: u64,
    pub schedule: SigmaSchedule,
    pub final_draw: FinalStepDraw,
    /// Kernel steps allowed before a pair that has not met is reported.
    pub meeting_cap: usize,
    /// Common starting point of every chain; the origin when `None`.
    pub start: Option<PhaseState>,
}

impl std::fmt::Debug for EstimatorConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EstimatorConfig")
            .field("l_star", &self.l_star)
            .field("l_max", &self.l_max)
            .field("level_exponent", &self.level_exponent)
            .field("alpha", &self.alpha)
            .field("k", &self.k)
            .field("m_policy", &self.m_policy)
            .field("replicates", &self.replicates)
            .field("observable", &self.observable.name())
            .field("seed", &self.seed)
            .field("schedule", &self.schedule)
            .field("final_draw", &self.final_draw)
            .field("meeting_cap", &self.meeting_cap)
            .finish()
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            l_star: 5,
            l_max: 12,
            level_exponent: 1.5,
            alpha: 0.8,
            k: 100,
            m_policy: MPolicy::Adaptive,
            replicates: 100,
            observable: Arc::new(Position),
            seed: 0,
            schedule: SigmaSchedule::DEFAULT,
            final_draw: FinalStepDraw::default(),
            meeting_cap: 100_000,
            start: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_max <= self.l_star {
            return Err(UldError::Config(format!(
                "l_max = {} must exceed l_star = {}",
                self.l_max, self.l_star
            )));
        }
        if self.l_max > LevelParams::MAX_LEVEL {
            return Err(UldError::Config(format!("l_max = {} is too large", self.l_max)));
        }
        if !self.level_exponent.is_finite() {
            return Err(UldError::Config("level exponent must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(UldError::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if let MPolicy::Fixed { m } = self.m_policy {
            if m < self.k {
                return Err(UldError::Config(format!("fixed m = {m} is below k = {}", self.k)));
            }
        }
        if self.replicates == 0 {
            return Err(UldError::Config("need at least one replicate".into()));
        }
        if self.meeting_cap == 0 {
            return Err(UldError::Config("meeting cap must be positive".into()));
        }
        self.schedule.validate()
    }

    fn start_state(&self, d: usize) -> Result<PhaseState> {
        match &self.start {
            Some(s) if s.dim() != d => Err(UldError::Dimension {
                what: "start state",
                expected: d,
                got: s.dim(),
            }),
            Some(s) => Ok(s.clone()),
            None => Ok(PhaseState::origin(d)),
        }
    }
}

/// Truncated geometric mass on `{l_star, ..., l_max}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelDistribution {
    l_star: u32,
    probs: Vec<f64>,
}

impl LevelDistribution {
    pub fn new(l_star: u32, l_max: u32, exponent: f64) -> Result<Self> {
        if l_max < l_star {
            return Err(UldError::Config(format!("empty level range {l_star}..={l_max}")));
        }
        // weights relative to l_star keep the sum well scaled for large levels
        let weights: Vec<f64> = (l_star..=l_max)
            .map(|l| (-exponent * f64::from(l - l_star)).exp2())
            .collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        if probs.iter().any(|p| !(*p > 0.0)) {
            return Err(UldError::Config(format!(
                "level exponent {exponent} leaves a level with zero mass"
            )));
        }
        Ok(Self { l_star, probs })
    }

    pub fn from_config(config: &EstimatorConfig) -> Result<Self> {
        Self::new(config.l_star, config.l_max, config.level_exponent)
    }

    pub fn l_star(&self) -> u32 {
        self.l_star
    }

    pub fn l_max(&self) -> u32 {
        self.l_star + self.probs.len() as u32 - 1
    }

    pub fn prob(&self, level: u32) -> f64 {
        level
            .checked_sub(self.l_star)
            .and_then(|i| self.probs.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn sample(&self, rng: &mut NoiseStream) -> u32 {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u <= acc {
                return self.l_star + i as u32;
            }
        }
        self.l_max()
    }
}

pub fn sample_level(config: &EstimatorConfig, rng: &mut NoiseStream) -> Result<u32> {
    Ok(LevelDistribution::from_config(config)?.sample(rng))
}

/// Per-iteration observable values of one chain, stored row-major.
#[derive(Clone, Debug, Default)]
struct Trace {
    width: usize,
    values: Vec<f64>,
}

impl Trace {
    fn new(width: usize) -> Self {
        Self {
            width,
            values: Vec::new(),
        }
    }

    fn push(&mut self, phi: &dyn Observable, state: &PhaseState) {
        let start = self.values.len();
        self.values.resize(start + self.width, 0.0);
        phi.eval_into(state, &mut self.values[start..]);
    }

    fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.width..(n + 1) * self.width]
    }

    fn len(&self) -> usize {
        self.values.len() / self.width
    }
}

/// Time-averaged estimator from observable traces.
///
/// `phi_u[n] = phi(U_n)` must cover `n = 0..=max(m, tau - 1)` and
/// `phi_tilde[n] = phi(U~_n)` must cover `n = 0..tau`. With `m = k` this is
/// the single-term estimator `phi(U_k) + sum_{n=k+1}^{tau-1} (phi(U_n) - phi(U~_n))`.
pub fn time_averaged_estimate(phi_u: &[Vec<f64>], phi_tilde: &[Vec<f64>], tau: usize, k: usize, m: usize) -> Vec<f64> {
    let width = phi_u.first().map_or(0, Vec::len);
    let u = Trace {
        width,
        values: phi_u.concat(),
    };
    let t = Trace {
        width,
        values: phi_tilde.concat(),
    };
    estimate_from_traces(&u, &t, tau, k, m)
}

fn estimate_from_traces(u: &Trace, tilde: &Trace, tau: usize, k: usize, m: usize) -> Vec<f64> {
    assert!(m >= k, "horizon m = {m} below burn-in k = {k}");
    assert!(u.len() > m.max(tau.saturating_sub(1)), "trace too short for the horizon");
    let width = u.width;
    let span = (m - k + 1) as f64;
    let mut est = vec![0.0; width];
    for n in k..=m {
        for (e, v) in est.iter_mut().zip(u.row(n)) {
            *e += v;
        }
    }
    est.iter_mut().for_each(|e| *e /= span);
    for n in (k + 1)..tau {
        let w = ((n - k) as f64 / span).min(1.0);
        for ((e, a), b) in est.iter_mut().zip(u.row(n)).zip(tilde.row(n)) {
            *e += w * (a - b);
        }
    }
    est
}

/// Outcome of one coupled run at a single level or one increment.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRun {
    pub estimate: Vec<f64>,
    /// Meeting time (single level) or `max` of the two meeting times (increment).
    pub tau: usize,
    /// Meeting times of the fine and coarse pairs (increments only).
    pub level_taus: Option<(usize, usize)>,
    pub k: usize,
    pub m: usize,
    /// Coupled kernel iterations performed.
    pub iterations: usize,
    /// Cost in Euler-step units.
    pub cost: u64,
    /// Gaussian variates consumed by coupled iterations `1..=tau`.
    pub draws_to_stop: u64,
}

fn non_meeting(level: u32, cap: usize, gap: f64) -> UldError {
    UldError::NonMeeting { level, cap, gap }
}

fn faithfulness_violation(level: u32, n: usize) -> UldError {
    UldError::Numeric(format!("level {level}: met chains diverged at iteration {n}"))
}

/// Single-level time-averaged estimator of `pi_l(phi)` from the lagged start
/// `(K_l(init.0), init.1)`.
pub fn run_single_level_pair(
    level: &LevelParams,
    config: &EstimatorConfig,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    init: (&PhaseState, &PhaseState),
    rng: &mut NoiseStream,
) -> Result<ChainRun> {
    let phi = config.observable.as_ref();
    let width = phi.output_dim(model.dim());
    let u0 = apply_kernel(init.0, model, dynamics, level, rng)?;
    let mut pair = CoupledPair::new(u0, init.1.clone());
    pair.met = false;
    let mut trace_u = Trace::new(width);
    let mut trace_tilde = Trace::new(width);
    trace_u.push(phi, &pair.u);
    trace_tilde.push(phi, &pair.u_tilde);

    let draws_at_start = rng.gaussian_count();
    let mut draws_to_stop = 0;
    let mut tau = None;
    let mut n = 0;
    loop {
        if let Some(t) = tau {
            let (_, m) = config.m_policy.resolve(config.k, t);
            if n >= m.max(t - 1) {
                break;
            }
        } else if n >= config.meeting_cap {
            return Err(non_meeting(level.level, config.meeting_cap, pair.gap()));
        }
        n += 1;
        sample_k_check(&mut pair, level, config.alpha, model, dynamics, rng)?;
        trace_u.push(phi, &pair.u);
        match tau {
            None => {
                trace_tilde.push(phi, &pair.u_tilde);
                if pair.met {
                    tau = Some(n);
                    draws_to_stop = rng.gaussian_count() - draws_at_start;
                }
            }
            Some(_) => {
                if !(pair.met && pair.u.bitwise_eq(&pair.u_tilde)) {
                    return Err(faithfulness_violation(level.level, n));
                }
            }
        }
    }
    let tau = tau.expect("loop exits only after meeting");
    let (k, m) = config.m_policy.resolve(config.k, tau);
    Ok(ChainRun {
        estimate: estimate_from_traces(&trace_u, &trace_tilde, tau, k, m),
        tau,
        level_taus: None,
        k,
        m,
        iterations: n,
        cost: single_level_cost(level.level, tau),
        draws_to_stop,
    })
}

/// Starting points of the four chains of a quad state.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadInit {
    pub fine: (PhaseState, PhaseState),
    pub coarse: (PhaseState, PhaseState),
}

impl QuadInit {
    pub fn diagonal(start: &PhaseState) -> Self {
        Self {
            fine: (start.clone(), start.clone()),
            coarse: (start.clone(), start.clone()),
        }
    }
}

/// Time-averaged increment estimator of `pi_l(phi) - pi_{l-1}(phi)`.
pub fn run_increment_quad(
    level: u32,
    config: &EstimatorConfig,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    init: &QuadInit,
    rng: &mut NoiseStream,
) -> Result<ChainRun> {
    let levels = LevelPair::new(level, &config.schedule)?;
    let phi = config.observable.as_ref();
    let width = phi.output_dim(model.dim());

    let (u_fine, u_coarse) = sample_kbar(&init.fine.0, &init.coarse.0, &levels, model, dynamics, rng)?;
    let mut z = QuadState {
        fine: CoupledPair {
            u: u_fine,
            u_tilde: init.fine.1.clone(),
            met: false,
        },
        coarse: CoupledPair {
            u: u_coarse,
            u_tilde: init.coarse.1.clone(),
            met: false,
        },
    };
    let mut fine_u = Trace::new(width);
    let mut fine_tilde = Trace::new(width);
    let mut coarse_u = Trace::new(width);
    let mut coarse_tilde = Trace::new(width);
    fine_u.push(phi, &z.fine.u);
    fine_tilde.push(phi, &z.fine.u_tilde);
    coarse_u.push(phi, &z.coarse.u);
    coarse_tilde.push(phi, &z.coarse.u_tilde);

    let draws_at_start = rng.gaussian_count();
    let mut draws_to_stop = 0;
    let mut tau_fine = None;
    let mut tau_coarse = None;
    let mut n = 0;
    loop {
        if let (Some(tf), Some(tc)) = (tau_fine, tau_coarse) {
            let t: usize = std::cmp::max(tf, tc);
            let (_, m) = config.m_policy.resolve(config.k, t);
            if n >= m.max(t - 1) {
                break;
            }
        } else if n >= config.meeting_cap {
            let (lvl, gap) = if tau_fine.is_none() {
                (levels.fine.level, z.fine.gap())
            } else {
                (levels.coarse.level, z.coarse.gap())
            };
            return Err(non_meeting(lvl, config.meeting_cap, gap));
        }
        n += 1;
        sample_k_check_quad(&mut z, &levels, config.alpha, config.final_draw, model, dynamics, rng)?;
        for (pair, trace_u, trace_tilde, tau, lvl) in [
            (&z.fine, &mut fine_u, &mut fine_tilde, &mut tau_fine, levels.fine.level),
            (&z.coarse, &mut coarse_u, &mut coarse_tilde, &mut tau_coarse, levels.coarse.level),
        ] {
            trace_u.push(phi, &pair.u);
            match tau {
                None => {
                    trace_tilde.push(phi, &pair.u_tilde);
                    if pair.met {
                        *tau = Some(n);
                    }
                }
                Some(_) => {
                    if !(pair.met && pair.u.bitwise_eq(&pair.u_tilde)) {
                        return Err(faithfulness_violation(lvl, n));
                    }
                }
            }
        }
        if draws_to_stop == 0 && tau_fine.is_some() && tau_coarse.is_some() {
            draws_to_stop = rng.gaussian_count() - draws_at_start;
        }
    }
    let (tf, tc) = (tau_fine.unwrap(), tau_coarse.unwrap());
    let tau = tf.max(tc);
    let (k, m) = config.m_policy.resolve(config.k, tau);
    let fine = estimate_from_traces(&fine_u, &fine_tilde, tf, k, m);
    let coarse = estimate_from_traces(&coarse_u, &coarse_tilde, tc, k, m);
    Ok(ChainRun {
        estimate: fine.iter().zip(&coarse).map(|(a, b)| a - b).collect(),
        tau,
        level_taus: Some((tf, tc)),
        k,
        m,
        iterations: n,
        cost: increment_cost(level, tau),
        draws_to_stop,
    })
}

/// `tau * 2^{l+1}`: both chains of a level-`l` pair, `2^l` steps each per iteration.
pub fn single_level_cost(level: u32, tau: usize) -> u64 {
    tau as u64 * (1u64 << (level + 1))
}

/// `tau * (2^{l+1} + 2^l)`: the fine pair plus the coarse pair.
pub fn increment_cost(level: u32, tau: usize) -> u64 {
    tau as u64 * ((1u64 << (level + 1)) + (1u64 << level))
}

/// Converts the Gaussian draws consumed up to the stopping time into Euler-step
/// cost units. Every coupled iteration at fine level `l` consumes `2^l * 2d`
/// Gaussians whatever branch it takes; a single-level iteration is charged for
/// two chains and an increment iteration for two fine and two coarse chains.
pub fn cost_from_draws(is_increment: bool, draws: u64, d: usize) -> u64 {
    let fine_steps = draws / (2 * d as u64);
    if is_increment {
        3 * fine_steps
    } else {
        2 * fine_steps
    }
}

/// One weighted draw of the single-term debiased estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate_id: u64,
    pub level: u32,
    /// Raw estimate divided by `P(L = level)`.
    pub value: Vec<f64>,
    pub tau: usize,
    pub cost: u64,
    pub weight: f64,
    pub gaussian_draws: u64,
    pub wall_time_s: f64,
}

impl ReplicateResult {
    pub fn is_increment(&self, l_star: u32) -> bool {
        self.level > l_star
    }
}

/// Randomized-level single-term estimator bound to one model.
pub struct UnbiasedEstimator<'a> {
    config: &'a EstimatorConfig,
    levels: LevelDistribution,
    model: &'a dyn TargetModel,
    dynamics: DynamicsParams,
    start: PhaseState,
}

impl<'a> UnbiasedEstimator<'a> {
    pub fn new(config: &'a EstimatorConfig, model: &'a dyn TargetModel, dynamics: DynamicsParams) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            levels: LevelDistribution::from_config(config)?,
            start: config.start_state(model.dim())?,
            config,
            model,
            dynamics,
        })
    }

    pub fn levels(&self) -> &LevelDistribution {
        &self.levels
    }

    pub fn replicate(&self, rng: &mut NoiseStream) -> Result<ReplicateResult> {
        let started = Instant::now();
        let level = self.levels.sample(rng);
        let prob = self.levels.prob(level);
        let run = if level == self.config.l_star {
            let lvl = LevelParams::new(level, &self.config.schedule)?;
            run_single_level_pair(&lvl, self.config, self.model, &self.dynamics, (&self.start, &self.start), rng)?
        } else {
            let init = QuadInit::diagonal(&self.start);
            run_increment_quad(level, self.config, self.model, &self.dynamics, &init, rng)?
        };
        Ok(ReplicateResult {
            replicate_id: 0,
            level,
            value: run.estimate.iter().map(|v| v / prob).collect(),
            tau: run.tau,
            cost: run.cost,
            weight: 1.0 / prob,
            gaussian_draws: run.draws_to_stop,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
    }

    /// Replicates `first..first + count` of the run keyed by `seed`, each on
    /// its own derived stream; runs on the current rayon pool and returns
    /// results in replicate order.
    pub fn replicates(&self, seed: u64, lane: u64, first: u64, count: usize) -> Result<Vec<ReplicateResult>> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let id = first + i;
                let mut rng = NoiseStream::derived(seed, lane, id);
                self.replicate(&mut rng)
                    .map(|mut r| {
                        r.replicate_id = id;
                        r
                    })
                    .map_err(|e| UldError::Replicate {
                        replicate: id,
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}

pub fn unbiased_replicate(
    config: &EstimatorConfig,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<ReplicateResult> {
    UnbiasedEstimator::new(config, model, *dynamics)?.replicate(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub mean: Vec<f64>,
    /// Unbiased sample variance; zero for a single replicate.
    pub variance: Vec<f64>,
    pub total_cost: u64,
    pub n: usize,
}

impl ReplicateSummary {
    pub fn stderr(&self) -> Vec<f64> {
        self.variance.iter().map(|v| (v / self.n as f64).sqrt()).collect()
    }
}

pub fn average_replicates(results: &[ReplicateResult]) -> Result<ReplicateSummary> {
    let first = results
        .first()
        .ok_or_else(|| UldError::Usage("cannot average zero replicates".into()))?;
    let width = first.value.len();
    let n = results.len();
    let mut mean = vec![0.0; width];
    for r in results {
        if r.value.len() != width {
            return Err(UldError::Dimension {
                what: "replicate value",
                expected: width,
                got: r.value.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(&r.value) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut variance = vec![0.0; width];
    if n > 1 {
        for r in results {
            for ((s, v), m) in variance.iter_mut().zip(&r.value).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        variance.iter_mut().for_each(|s| *s /= (n - 1) as f64);
    }
    Ok(ReplicateSummary {
        mean,
        variance,
        total_cost: results.iter().map(|r| r.cost).sum(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianToy;

    fn toy() -> GaussianToy {
        GaussianToy::new(vec![1.0, -1.0]).unwrap()
    }

    fn config() -> EstimatorConfig {
        EstimatorConfig {
            l_star: 3,
            l_max: 8,
            k: 20,
            ..Default::default()
        }
    }

    #[test]
    fn adaptive_policy() {
        let p = MPolicy::Adaptive;
        assert_eq!(p.resolve(100, 500), (100, 200));
        assert_eq!(p.resolve(100, 150), (100, 149));
        // tau = 100 keeps k; m is lifted to k
        assert_eq!(p.resolve(100, 100), (100, 100));
        assert_eq!(p.resolve(100, 99), (100, 100));
        assert_eq!(p.resolve(100, 98), (49, 97));
        assert_eq!(p.resolve(100, 40), (20, 39));
        assert_eq!(p.resolve(100, 1), (1, 1));
        assert_eq!(p.resolve(0, 7), (0, 0));
        assert_eq!(MPolicy::Fixed { m: 30 }.resolve(10, 3), (10, 30));
    }

    #[test]
    fn level_mass_matches_brute_force() {
        let dist = LevelDistribution::new(5, 12, 1.5).unwrap();
        let weights: Vec<f64> = (5..=12).map(|l| 2f64.powf(-1.5 * l as f64)).collect();
        let total: f64 = weights.iter().sum();
        for (i, l) in (5..=12).enumerate() {
            assert!((dist.prob(l) - weights[i] / total).abs() < 1e-15);
        }
        // geometric-series closed form of P(L = 5)
        let closed = (1.0 - 2f64.powf(-1.5)) / (1.0 - 2f64.powf(-12.0));
        assert!((dist.prob(5) - closed).abs() < 1e-12);
        assert!((dist.prob(5) - 0.6466).abs() < 1e-4);
        assert_eq!(dist.prob(4), 0.0);
        assert_eq!(dist.prob(13), 0.0);
    }

    #[test]
    fn level_sampling_frequencies() {
        let dist = LevelDistribution::new(5, 12, 1.5).unwrap();
        let mut rng = NoiseStream::new(3);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let l = dist.sample(&mut rng);
            assert!((5..=12).contains(&l));
            counts[(l - 5) as usize] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let p = dist.prob(5 + i as u32);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 4.0 * se, "level {}", 5 + i);
        }
    }

    fn rows(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn time_average_formula() {
        let u = rows(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = rows(&[0.5, 0.5, 1.0, 1.0, 2.0]);
        // tau = 5, k = 1, m = 3: mean(1, 2, 3) + (1/3)(2 - 1) + (2/3)(3 - 1) + 1 * (4 - 2)
        let e = time_averaged_estimate(&u, &t, 5, 1, 3);
        assert!((e[0] - (2.0 + 1.0 / 3.0 + 4.0 / 3.0 + 2.0)).abs() < 1e-12);
        // m = k is the single-term estimator
        let e = time_averaged_estimate(&u, &t, 5, 2, 2);
        assert!((e[0] - (2.0 + (3.0 - 1.0) + (4.0 - 2.0))).abs() < 1e-12);
        // tau - 1 < k + 1: empty correction sum
        let e = time_averaged_estimate(&u, &t, 3, 2, 4);
        assert!((e[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_observable_is_exact() {
        let mut cfg = config();
        cfg.observable = Arc::new(Constant(2.5));
        let model = toy();
        let dynamics = DynamicsParams::default();
        let start = PhaseState::origin(2);
        for seed in 0..20 {
            let mut rng = NoiseStream::new(seed);
            let lvl = LevelParams::new(3, &cfg.schedule).unwrap();
            let run = run_single_level_pair(&lvl, &cfg, &model, &dynamics, (&start, &start), &mut rng).unwrap();
            assert_eq!(run.estimate, vec![2.5]);
            let run = run_increment_quad(5, &cfg, &model, &dynamics, &QuadInit::diagonal(&start), &mut rng).unwrap();
            assert_eq!(run.estimate, vec![0.0]);
        }
    }

    #[test]
    fn single_level_cost_and_draw_ledger() {
        let cfg = config();
        let model = toy();
        let dynamics = DynamicsParams::default();
        let start = PhaseState::origin(2);
        for seed in 0..10 {
            let mut rng = NoiseStream::new(seed);
            let lvl = LevelParams::new(4, &cfg.schedule).unwrap();
            let run = run_single_level_pair(&lvl, &cfg, &model, &dynamics, (&start, &start), &mut rng).unwrap();
            assert!(run.tau >= 1);
            assert_eq!(run.cost, single_level_cost(4, run.tau));
            assert_eq!(cost_from_draws(false, run.draws_to_stop, 2), run.cost);
            assert!(run.iterations >= run.m.max(run.tau - 1));
            let run = run_increment_quad(5, &cfg, &model, &dynamics, &QuadInit::diagonal(&start), &mut rng).unwrap();
            assert_eq!(cost_from_draws(true, run.draws_to_stop, 2), run.cost);
            let (tf, tc) = run.level_taus.unwrap();
            assert_eq!(run.tau, tf.max(tc));
        }
    }

    #[test]
    fn cost_formulas() {
        assert_eq!(increment_cost(6, 4), 768);
        assert_eq!(single_level_cost(5, 10), 640);
    }

    #[test]
    fn replicate_weight_and_value() {
        let cfg = config();
        let model = toy();
        let est = UnbiasedEstimator::new(&cfg, &model, DynamicsParams::default()).unwrap();
        let mut seen_single = false;
        for seed in 0..30 {
            let mut rng = NoiseStream::new(seed);
            let r = est.replicate(&mut rng).unwrap();
            let p = est.levels().prob(r.level);
            assert_eq!(r.weight, 1.0 / p);
            if r.level == cfg.l_star {
                seen_single = true;
                // recompute the raw single-level estimate from the same stream
                let mut rng = NoiseStream::new(seed);
                let _ = est.levels().sample(&mut rng);
                let lvl = LevelParams::new(r.level, &cfg.schedule).unwrap();
                let start = PhaseState::origin(2);
                let raw = run_single_level_pair(&lvl, &cfg, &model, &DynamicsParams::default(), (&start, &start), &mut rng).unwrap();
                assert_eq!(r.value, raw.estimate.iter().map(|v| v / p).collect::<Vec<_>>());
                assert_eq!(r.cost, single_level_cost(r.level, raw.tau));
            } else {
                assert_eq!(r.cost, increment_cost(r.level, r.tau));
            }
        }
        assert!(seen_single);
    }

    #[test]
    fn non_meeting_is_reported() {
        let mut cfg = config();
        cfg.meeting_cap = 1;
        cfg.alpha = 1.0 - 1e-12;
        let model = toy();
        let start = PhaseState::origin(2);
        let lvl = LevelParams::new(3, &cfg.schedule).unwrap();
        let mut rng = NoiseStream::new(1);
        let err = run_single_level_pair(&lvl, &cfg, &model, &DynamicsParams::default(), (&start, &start), &mut rng);
        assert!(matches!(err, Err(UldError::NonMeeting { level: 3, cap: 1, .. })));
    }

    #[test]
    fn averaging() {
        let r = |v: f64, cost: u64| ReplicateResult {
            replicate_id: 0,
            level: 3,
            value: vec![v],
            tau: 1,
            cost,
            weight: 1.0,
            gaussian_draws: 0,
            wall_time_s: 0.0,
        };
        let s = average_replicates(&[r(1.0, 3), r(3.0, 4)]).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.variance, vec![2.0]);
        assert_eq!(s.total_cost, 7);
        let s = average_replicates(&vec![r(4.0, 1); 5]).unwrap();
        assert_eq!((s.mean, s.variance), (vec![4.0], vec![0.0]));
        assert_eq!(average_replicates(&[r(-2.0, 1)]).unwrap().mean, vec![-2.0]);
        assert!(matches!(average_replicates(&[]), Err(UldError::Usage(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = config();
        assert!(cfg.validate().is_ok());
        cfg.l_max = cfg.l_star;
        assert!(cfg.validate().is_err());
        let mut cfg = config();
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = config();
        cfg.m_policy = MPolicy::Fixed { m: 5 };
        assert!(cfg.validate().is_err());
    }
}
