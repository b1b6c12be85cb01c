//! Coupled unit-time kernels.
//!
//! Single-level pairs `(U, U~)` at level `l` evolve under
//! `K_l = alpha Q_l + (1 - alpha) P_l`:
//!
//! * `Q_l` drives both chains with one noise path (common random numbers);
//! * `P_l` does the same up to time `1 - Delta_l` and draws the last step from
//!   a reflection maximal coupling of the two one-step Gaussian laws.
//!
//! Quad states hold a fine pair at level `l` and a coarse pair at `l - 1`.
//! The coarse chains see the fine path coarsened by summing consecutive
//! increments, so all four chains share one source of noise.
//!
//! Every kernel maps a met pair to a met pair; a met pair is simulated once
//! and mirrored.

use serde::{Deserialize, Serialize};

use crate::coupling::{reflection_from_draws, sync_pairwise_from_draws};
use crate::dynamics::{step_in_place, step_law, DynamicsParams, LevelParams, PhaseState, SigmaSchedule, Workspace};
use crate::error::{check_dim, Result, UldError};
use crate::models::TargetModel;
use crate::rng::NoiseStream;

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    pub u: PhaseState,
    pub u_tilde: PhaseState,
    pub met: bool,
}

impl CoupledPair {
    pub fn new(u: PhaseState, u_tilde: PhaseState) -> Self {
        let met = u.bitwise_eq(&u_tilde);
        Self { u, u_tilde, met }
    }

    pub fn gap(&self) -> f64 {
        self.u.distance(&self.u_tilde)
    }

    fn mark_met(&mut self) {
        self.u_tilde.clone_from(&self.u);
        self.met = true;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadState {
    pub fine: CoupledPair,
    pub coarse: CoupledPair,
}

impl QuadState {
    pub fn both_met(&self) -> bool {
        self.fine.met && self.coarse.met
    }
}

/// A fine level and the next coarser one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelPair {
    pub fine: LevelParams,
    pub coarse: LevelParams,
}

impl LevelPair {
    pub fn new(level: u32, schedule: &SigmaSchedule) -> Result<Self> {
        if level == 0 {
            return Err(UldError::Config("increment levels start at 1".into()));
        }
        Ok(Self {
            fine: LevelParams::new(level, schedule)?,
            coarse: LevelParams::new(level - 1, schedule)?,
        })
    }
}

/// Increments driving one chain over a stretch of steps, stored row-major
/// (`steps x d`). Both sequences are `N(0, delta I)` per step.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub d: usize,
    pub gammas: Vec<f64>,
    pub brownian: Vec<f64>,
}

impl NoisePath {
    /// Draws `steps` steps; within each step `gamma` is drawn before `dB`.
    pub fn draw(rng: &mut NoiseStream, steps: usize, d: usize, delta: f64) -> Self {
        let scale = delta.sqrt();
        let mut gammas = vec![0.0; steps * d];
        let mut brownian = vec![0.0; steps * d];
        for k in 0..steps {
            rng.fill_gaussian(&mut gammas[k * d..(k + 1) * d], scale);
            rng.fill_gaussian(&mut brownian[k * d..(k + 1) * d], scale);
        }
        Self { d, gammas, brownian }
    }

    pub fn len(&self) -> usize {
        self.gammas.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// Sums consecutive pairs over the first `2 * pairs` steps.
    pub fn coarsen_prefix(&self, pairs: usize) -> Self {
        let d = self.d;
        assert!(2 * pairs <= self.len(), "coarsening past the end of the path");
        let sum_pairs = |src: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; pairs * d];
            for k in 0..pairs {
                for i in 0..d {
                    out[k * d + i] = src[2 * k * d + i] + src[(2 * k + 1) * d + i];
                }
            }
            out
        };
        Self {
            d,
            gammas: sum_pairs(&self.gammas),
            brownian: sum_pairs(&self.brownian),
        }
    }

    pub fn coarsen(&self) -> Self {
        assert!(self.len().is_multiple_of(2), "cannot coarsen an odd-length path");
        self.coarsen_prefix(self.len() / 2)
    }

    fn step(&self, k: usize) -> (&[f64], &[f64]) {
        let r = k * self.d..(k + 1) * self.d;
        (&self.gammas[r.clone()], &self.brownian[r])
    }
}

/// How the coarse pair's final coupled step obtains its standard normal draw
/// in the two-level maximal-coupling kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalStepDraw {
    /// `(eta + xi) / sqrt 2`, where `eta` is the standardized fine increment on
    /// `[1 - 2 Delta_l, 1 - Delta_l]` and `xi` the fine final draw: the coarse
    /// final increment equals the sum of the fine increments it spans.
    #[default]
    Concatenated,
    /// The coarse level reuses the fine `xi` directly.
    Shared,
}

impl std::str::FromStr for FinalStepDraw {
    type Err = UldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenated" => Ok(Self::Concatenated),
            "shared" => Ok(Self::Shared),
            other => Err(UldError::Config(format!(
                "unknown final-step draw `{other}` (expected concatenated or shared)"
            ))),
        }
    }
}

/// Which component of a mixture kernel was applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Common,
    Maximal,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(UldError::Config(format!("mixture weight alpha = {alpha} must lie in (0, 1)")))
    }
}

fn check_state(model: &dyn TargetModel, s: &PhaseState) -> Result<()> {
    check_dim("state position", model.dim(), s.x.len())?;
    check_dim("state velocity", model.dim(), s.v.len())
}

fn check_pair(model: &dyn TargetModel, p: &CoupledPair) -> Result<()> {
    check_state(model, &p.u)?;
    check_state(model, &p.u_tilde)
}

fn run_path(
    state: &mut PhaseState,
    path: &NoisePath,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    delta: f64,
    sigma_l: f64,
    ws: &mut Workspace,
) -> Result<()> {
    for k in 0..path.len() {
        let (gamma, db) = path.step(k);
        step_in_place(state, model, dynamics, delta, sigma_l, gamma, db, ws)?;
    }
    Ok(())
}

/// Advances a single chain along a given noise path at `level`'s step size.
pub fn advance_along(
    state: &mut PhaseState,
    path: &NoisePath,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    level: &LevelParams,
) -> Result<()> {
    check_state(model, state)?;
    check_dim("noise path", model.dim(), path.d)?;
    let mut ws = Workspace::new(model.dim());
    run_path(state, path, model, dynamics, level.delta, level.sigma_l, &mut ws)
}

/// Advances both chains of `pair` along `path`, simulating a met pair once.
fn run_pair(
    pair: &mut CoupledPair,
    path: &NoisePath,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    level: &LevelParams,
    ws: &mut Workspace,
) -> Result<()> {
    run_path(&mut pair.u, path, model, dynamics, level.delta, level.sigma_l, ws)?;
    if pair.met {
        pair.u_tilde.clone_from(&pair.u);
    } else {
        run_path(&mut pair.u_tilde, path, model, dynamics, level.delta, level.sigma_l, ws)?;
        if pair.u.bitwise_eq(&pair.u_tilde) {
            pair.met = true;
        }
    }
    Ok(())
}

fn final_means(
    pair: &CoupledPair,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    level: &LevelParams,
    ws: &mut Workspace,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let law = step_law(&pair.u, model, dynamics, level.delta, level.sigma_l, ws)?;
    let tilde_mean = if pair.met {
        law.mean.clone()
    } else {
        step_law(&pair.u_tilde, model, dynamics, level.delta, level.sigma_l, ws)?.mean
    };
    Ok((law.mean, tilde_mean, law.stddev))
}

fn set_from_draw(pair: &mut CoupledPair, y1: &[f64], y2: &[f64], met: bool) {
    pair.u = PhaseState::from_stacked(y1);
    if met || pair.met {
        pair.mark_met();
    } else {
        pair.u_tilde = PhaseState::from_stacked(y2);
    }
}

/// `Q_l`: one noise path shared by both chains over `2^l` steps.
pub fn sample_q(
    pair: &mut CoupledPair,
    level: &LevelParams,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<()> {
    check_pair(model, pair)?;
    let d = model.dim();
    let path = NoisePath::draw(rng, level.steps, d, level.delta);
    run_pair(pair, &path, model, dynamics, level, &mut Workspace::new(d))
}

/// `P_l`: common noise for `2^l - 1` steps, then a maximal coupling of the
/// two final-step laws.
pub fn sample_p(
    pair: &mut CoupledPair,
    level: &LevelParams,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<()> {
    check_pair(model, pair)?;
    if !(level.sigma_l > 0.0) {
        return Err(UldError::Degenerate(format!(
            "level {} has sigma_l = {}; the final-step coupling needs position noise",
            level.level, level.sigma_l
        )));
    }
    let d = model.dim();
    let mut ws = Workspace::new(d);
    let path = NoisePath::draw(rng, level.steps - 1, d, level.delta);
    run_pair(pair, &path, model, dynamics, level, &mut ws)?;
    let (mu, mu_tilde, stddev) = final_means(pair, model, dynamics, level, &mut ws)?;
    let mut xi = vec![0.0; 2 * d];
    rng.fill_gaussian(&mut xi, 1.0);
    let log_w = rng.uniform().ln();
    let draw = reflection_from_draws(&mu, &mu_tilde, &stddev, &xi, log_w);
    set_from_draw(pair, &draw.y1, &draw.y2, draw.met);
    Ok(())
}

/// `K_l = alpha Q_l + (1 - alpha) P_l`; the branch indicator is drawn from `rng`.
pub fn sample_k_check(
    pair: &mut CoupledPair,
    level: &LevelParams,
    alpha: f64,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<Branch> {
    check_alpha(alpha)?;
    if rng.uniform() <= alpha {
        sample_q(pair, level, model, dynamics, rng)?;
        Ok(Branch::Common)
    } else {
        sample_p(pair, level, model, dynamics, rng)?;
        Ok(Branch::Maximal)
    }
}

/// Initialization kernel for quad chains: one fine path drives `u_fine` at
/// level `l` and, coarsened, `u_coarse` at level `l - 1`.
pub fn sample_kbar(
    u_fine: &PhaseState,
    u_coarse: &PhaseState,
    levels: &LevelPair,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<(PhaseState, PhaseState)> {
    check_state(model, u_fine)?;
    check_state(model, u_coarse)?;
    let d = model.dim();
    let mut ws = Workspace::new(d);
    let path = NoisePath::draw(rng, levels.fine.steps, d, levels.fine.delta);
    let coarse_path = path.coarsen();
    let mut fine = u_fine.clone();
    let mut coarse = u_coarse.clone();
    run_path(&mut fine, &path, model, dynamics, levels.fine.delta, levels.fine.sigma_l, &mut ws)?;
    run_path(
        &mut coarse,
        &coarse_path,
        model,
        dynamics,
        levels.coarse.delta,
        levels.coarse.sigma_l,
        &mut ws,
    )?;
    Ok((fine, coarse))
}

/// `Q_{l,l-1}`: one fine path for the fine pair, its coarsening for the coarse pair.
pub fn sample_q_quad(
    z: &mut QuadState,
    levels: &LevelPair,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<()> {
    check_pair(model, &z.fine)?;
    check_pair(model, &z.coarse)?;
    let d = model.dim();
    let mut ws = Workspace::new(d);
    let path = NoisePath::draw(rng, levels.fine.steps, d, levels.fine.delta);
    let coarse_path = path.coarsen();
    run_pair(&mut z.fine, &path, model, dynamics, &levels.fine, &mut ws)?;
    run_pair(&mut z.coarse, &coarse_path, model, dynamics, &levels.coarse, &mut ws)
}

/// `P_{l,l-1}`: shared-noise advance of the fine pair to `1 - Delta_l` and the
/// coarse pair to `1 - Delta_{l-1}`, then a synchronous pairwise reflection
/// coupling of the final step at each level.
pub fn sample_p_quad(
    z: &mut QuadState,
    levels: &LevelPair,
    draw_rule: FinalStepDraw,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<()> {
    check_pair(model, &z.fine)?;
    check_pair(model, &z.coarse)?;
    for lvl in [&levels.fine, &levels.coarse] {
        if !(lvl.sigma_l > 0.0) {
            return Err(UldError::Degenerate(format!(
                "level {} has sigma_l = {}; the final-step coupling needs position noise",
                lvl.level, lvl.sigma_l
            )));
        }
    }
    let d = model.dim();
    let mut ws = Workspace::new(d);
    let fine_steps = levels.fine.steps - 1;
    let path = NoisePath::draw(rng, fine_steps, d, levels.fine.delta);
    let coarse_path = path.coarsen_prefix(levels.coarse.steps - 1);
    run_pair(&mut z.fine, &path, model, dynamics, &levels.fine, &mut ws)?;
    run_pair(&mut z.coarse, &coarse_path, model, dynamics, &levels.coarse, &mut ws)?;

    let (fine_mu, fine_mu_tilde, fine_sd) = final_means(&z.fine, model, dynamics, &levels.fine, &mut ws)?;
    let (coarse_mu, coarse_mu_tilde, coarse_sd) = final_means(&z.coarse, model, dynamics, &levels.coarse, &mut ws)?;

    let mut fine_xi = vec![0.0; 2 * d];
    rng.fill_gaussian(&mut fine_xi, 1.0);
    let log_w = rng.uniform().ln();
    let coarse_xi = match draw_rule {
        FinalStepDraw::Shared => fine_xi.clone(),
        FinalStepDraw::Concatenated => {
            // the fine-only increment is the last step of the fine path
            let (gamma, db) = path.step(fine_steps - 1);
            let inv = 1.0 / levels.fine.delta.sqrt();
            let root_half = std::f64::consts::FRAC_1_SQRT_2;
            gamma
                .iter()
                .chain(db)
                .zip(&fine_xi)
                .map(|(eta, xi)| (eta * inv + xi) * root_half)
                .collect()
        }
    };
    let draw = sync_pairwise_from_draws(
        (&fine_mu, &fine_mu_tilde),
        (&coarse_mu, &coarse_mu_tilde),
        &fine_sd,
        &coarse_sd,
        &fine_xi,
        &coarse_xi,
        log_w,
    );
    set_from_draw(&mut z.fine, &draw.fine.y1, &draw.fine.y2, draw.fine.met);
    set_from_draw(&mut z.coarse, &draw.coarse.y1, &draw.coarse.y2, draw.coarse.met);
    Ok(())
}

/// `K_{l,l-1}`: always `Q_{l,l-1}` once both pairs have met, otherwise the
/// `alpha` mixture of `Q_{l,l-1}` and `P_{l,l-1}`.
pub fn sample_k_check_quad(
    z: &mut QuadState,
    levels: &LevelPair,
    alpha: f64,
    draw_rule: FinalStepDraw,
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    rng: &mut NoiseStream,
) -> Result<Branch> {
    check_alpha(alpha)?;
    if z.both_met() || rng.uniform() <= alpha {
        sample_q_quad(z, levels, model, dynamics, rng)?;
        Ok(Branch::Common)
    } else {
        sample_p_quad(z, levels, draw_rule, model, dynamics, rng)?;
        Ok(Branch::Maximal)
    }
}
