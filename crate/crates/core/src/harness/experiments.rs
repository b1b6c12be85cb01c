use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use super::{fit_slope, Experiment, ExperimentOutput, ExperimentSpec, RunContext, SlopeFit, Table};
use crate::dynamics::{apply_kernel, DynamicsParams, LevelParams, PhaseState};
use crate::error::{Result, UldError};
use crate::estimator::{
    average_replicates, run_increment_quad, run_single_level_pair, EstimatorConfig, MPolicy, Observable,
    QuadInit, ReplicateResult, UnbiasedEstimator,
};
use crate::kernels::{advance_along, NoisePath};
use crate::models::TargetModel;
use crate::rng::{lane, NoiseStream};
use crate::sfs::{sfs_sample, SfsConfig};

fn wrap(replicate: u64) -> impl FnOnce(UldError) -> UldError {
    move |e| UldError::Replicate {
        replicate,
        source: Box::new(e),
    }
}

fn eval(phi: &dyn Observable, state: &PhaseState, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; phi.output_dim(d)];
    phi.eval_into(state, &mut out);
    out
}

fn fit_extra(extra: &mut Map<String, Value>, fit: &SlopeFit) {
    extra.insert("slope".into(), json!(fit.slope));
    extra.insert("intercept".into(), json!(fit.intercept));
    extra.insert("r_squared".into(), json!(fit.r_squared));
}

fn squared_error(mean: &[f64], reference: &[f64]) -> Vec<f64> {
    mean.iter().zip(reference).map(|(m, r)| (m - r) * (m - r)).collect()
}

/// Long single-level run estimate of `pi_l(phi)`: `chains` independent chains
/// from the origin, each discarding `burn_in` kernel steps and keeping
/// `ceil(steps / chains)`.
#[allow(clippy::too_many_arguments)]
pub fn long_run_reference(
    model: &dyn TargetModel,
    dynamics: &DynamicsParams,
    level: &LevelParams,
    phi: &dyn Observable,
    steps: usize,
    chains: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if steps == 0 || chains == 0 {
        return Err(UldError::Config("long-run reference needs steps and chains".into()));
    }
    let d = model.dim();
    let kept = steps.div_ceil(chains);
    let sums: Vec<Vec<f64>> = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = NoiseStream::derived(seed, lane::REFERENCE, c);
            let mut state = PhaseState::origin(d);
            let mut sum = vec![0.0; phi.output_dim(d)];
            for n in 0..burn_in + kept {
                state = apply_kernel(&state, model, dynamics, level, &mut rng)?;
                if n >= burn_in {
                    for (s, v) in sum.iter_mut().zip(eval(phi, &state, d)) {
                        *s += v;
                    }
                }
            }
            Ok(sum)
        })
        .collect::<Result<_>>()?;
    let total = (kept * chains) as f64;
    let mut mean = vec![0.0; phi.output_dim(d)];
    for s in &sums {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / total;
        }
    }
    Ok(mean)
}

/// Reference value of the observable: an explicit override, else the model's
/// known mean, else a long-run estimate when `required`.
fn reference(ctx: &RunContext<'_>, config: &EstimatorConfig, required: bool) -> Result<Option<Vec<f64>>> {
    let spec = ctx.spec;
    let d = ctx.model.dim();
    let phi = config.observable.as_ref();
    let width = phi.output_dim(d);
    if let Some(r) = &spec.reference {
        if r.len() != width {
            return Err(UldError::Dimension {
                what: "reference",
                expected: width,
                got: r.len(),
            });
        }
        return Ok(Some(r.clone()));
    }
    if let Some(mean) = ctx.model.reference_mean() {
        // both built-in observables are linear in x
        let state = PhaseState::new(mean, vec![0.0; d])?;
        return Ok(Some(eval(phi, &state, d)));
    }
    if !required && spec.ref_steps == 0 {
        return Ok(None);
    }
    log::info!(
        "computing reference: {} kernel steps at level {}",
        spec.ref_steps,
        spec.ref_run_level
    );
    let level = LevelParams::new(spec.ref_run_level, &spec.schedule)?;
    let burn = spec.burn_in;
    long_run_reference(ctx.model, &ctx.dynamics, &level, phi, spec.ref_steps, spec.ref_chains, burn, spec.seed)
        .map(Some)
}

/// `M` replicates of the randomized-level estimator.
pub struct EstimateExperiment;

impl Experiment for EstimateExperiment {
    fn name(&self) -> &str {
        "estimate"
    }

    fn validate(&self, spec: &ExperimentSpec) -> Result<()> {
        spec.estimator_config().map(|_| ())
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let config = ctx.spec.estimator_config()?;
        let est = UnbiasedEstimator::new(&config, ctx.model, ctx.dynamics)?;
        let rows = est.replicates(ctx.spec.seed, lane::REPLICATE, 0, config.replicates)?;
        let s = average_replicates(&rows)?;
        let reference = reference(ctx, &config, false)?;
        let mut extra = Map::new();
        extra.insert("reference".into(), json!(reference));
        Ok(ExperimentOutput {
            mse: reference.as_deref().map(|r| squared_error(&s.mean, r)).unwrap_or_default(),
            stderr: s.stderr(),
            mean: s.mean,
            variance: s.variance,
            total_cost: s.total_cost,
            n_replicates: s.n,
            rows,
            tables: Vec::new(),
            extra,
        })
    }
}

/// Mean squared error against total cost for a grid of replicate counts,
/// each averaged over `reps` repetitions. Repetition `r` uses replicates
/// `r * M_max .. r * M_max + M` of one stream family, so the grid is nested.
pub struct MseVsCost;

impl Experiment for MseVsCost {
    fn name(&self) -> &str {
        "mse-vs-cost"
    }

    fn validate(&self, spec: &ExperimentSpec) -> Result<()> {
        spec.estimator_config()?;
        if spec.reps == 0 {
            return Err(UldError::Config("mse-vs-cost needs reps >= 1".into()));
        }
        if spec.replicate_grid().len() < 2 || spec.replicate_grid()[0] == 0 {
            return Err(UldError::Config("mse-vs-cost needs at least two positive replicate counts".into()));
        }
        Ok(())
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let spec = ctx.spec;
        let config = spec.estimator_config()?;
        let reference = reference(ctx, &config, true)?.expect("required reference");
        let grid = spec.replicate_grid();
        let m_max = *grid.last().unwrap();
        let est = UnbiasedEstimator::new(&config, ctx.model, ctx.dynamics)?;
        let rows = est.replicates(spec.seed, lane::REPLICATE, 0, spec.reps * m_max)?;

        let mut table = Table::new("mse_cost", &["M", "mean_cost", "mse", "mse_se"]);
        let mut points = Vec::new();
        for &m in &grid {
            let mut errs = Vec::with_capacity(spec.reps);
            let mut cost = 0.0;
            for r in 0..spec.reps {
                let block = &rows[r * m_max..r * m_max + m];
                let s = average_replicates(block)?;
                errs.push(squared_error(&s.mean, &reference).iter().sum::<f64>());
                cost += s.total_cost as f64;
            }
            let n = spec.reps as f64;
            let mse = errs.iter().sum::<f64>() / n;
            let se = if spec.reps > 1 {
                (errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            let mean_cost = cost / n;
            table.push(vec![m as f64, mean_cost, mse, se]);
            points.push((mean_cost.ln(), mse.ln()));
        }
        let mut extra = Map::new();
        fit_extra(&mut extra, &fit_slope(&points)?);
        extra.insert("reference".into(), json!(reference));

        let s = average_replicates(&rows)?;
        Ok(ExperimentOutput {
            mse: squared_error(&s.mean, &reference),
            stderr: s.stderr(),
            mean: s.mean,
            variance: s.variance,
            total_cost: s.total_cost,
            n_replicates: s.n,
            rows,
            tables: vec![table],
            extra,
        })
    }
}

/// Discretization error of `pi_l(phi)` over a level range, from long chains
/// at every level driven by the same reference-level noise: each unit of time
/// draws one reference path and feeds its successive pairwise coarsenings to
/// the coarser chains. Reported per level is the root-mean-square over `reps`
/// independent runs of the difference between the level-`l` and reference
/// time averages.
pub struct WeakError;

impl Experiment for WeakError {
    fn name(&self) -> &str {
        "weak-error"
    }

    fn validate(&self, spec: &ExperimentSpec) -> Result<()> {
        let (lo, hi) = spec.level_range((4, 9));
        if hi >= spec.ref_level {
            return Err(UldError::Config(format!(
                "levels up to {hi} must stay below the reference level {}",
                spec.ref_level
            )));
        }
        if spec.ref_level > 20 {
            return Err(UldError::Config(format!("reference level {} is too fine", spec.ref_level)));
        }
        if hi - lo < 1 {
            return Err(UldError::Config("weak-error needs at least two levels".into()));
        }
        if spec.chain_length == 0 || spec.reps == 0 {
            return Err(UldError::Config("weak-error needs chain-length and reps >= 1".into()));
        }
        crate::estimator::observable_by_name(&spec.observable).map(|_| ())
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let spec = ctx.spec;
        let (lo, hi) = spec.level_range((4, 9));
        let phi = crate::estimator::observable_by_name(&spec.observable)?;
        let ref_params = LevelParams::new(spec.ref_level, &spec.schedule)?;
        let params: Vec<LevelParams> = (lo..=hi)
            .map(|l| LevelParams::new(l, &spec.schedule))
            .collect::<Result<_>>()?;
        let total = spec.burn_in + spec.chain_length;
        // averages[r].0[0] is the reference; averages[r].0[1 + i] is level lo + i
        let averages: Vec<(Vec<Vec<f64>>, f64)> = (0..spec.reps as u64)
            .into_par_iter()
            .map(|r| {
                let rng = NoiseStream::derived(spec.seed, lane::WEAK_ERROR, r);
                crn_time_averages(ctx, phi.as_ref(), &ref_params, &params, rng).map_err(wrap(r))
            })
            .collect::<Result<_>>()?;

        let unit_cost = |l: u32| total as u64 * (1u64 << l);
        let mut rows = Vec::new();
        for (r, (avg, wall)) in averages.iter().enumerate() {
            for (i, a) in avg.iter().enumerate() {
                let level = if i == 0 { spec.ref_level } else { lo + i as u32 - 1 };
                rows.push(ReplicateResult {
                    replicate_id: r as u64,
                    level,
                    value: a.clone(),
                    tau: spec.chain_length,
                    cost: unit_cost(level),
                    weight: 1.0,
                    gaussian_draws: 0,
                    wall_time_s: *wall,
                });
            }
        }

        let n = spec.reps as f64;
        let mut table = Table::new("weak_error", &["level", "delta", "rms_error", "mean_abs_error", "mean_diff"]);
        let mut points = Vec::new();
        for (i, p) in params.iter().enumerate() {
            let mut sq = 0.0;
            let mut abs = 0.0;
            let mut diff = 0.0;
            for (avg, _) in &averages {
                let e: Vec<f64> = avg[1 + i].iter().zip(&avg[0]).map(|(a, b)| a - b).collect();
                let norm2: f64 = e.iter().map(|v| v * v).sum();
                sq += norm2;
                abs += norm2.sqrt();
                diff += e[0];
            }
            let rms = (sq / n).sqrt();
            table.push(vec![f64::from(p.level), p.delta, rms, abs / n, diff / n]);
            points.push((p.delta.ln(), rms.ln()));
        }
        let mut extra = Map::new();
        fit_extra(&mut extra, &fit_slope(&points)?);

        let reference_rows: Vec<ReplicateResult> = rows.iter().filter(|r| r.level == spec.ref_level).cloned().collect();
        let s = average_replicates(&reference_rows)?;
        Ok(ExperimentOutput {
            stderr: s.stderr(),
            mean: s.mean,
            variance: s.variance,
            mse: Vec::new(),
            total_cost: rows.iter().map(|r| r.cost).sum(),
            n_replicates: rows.len(),
            rows,
            tables: vec![table],
            extra,
        })
    }
}

/// Time averages of `phi` along one chain per level, all driven by the
/// reference-level noise and its coarsenings. Index 0 is the reference.
fn crn_time_averages(
    ctx: &RunContext<'_>,
    phi: &dyn Observable,
    ref_params: &LevelParams,
    params: &[LevelParams],
    mut rng: NoiseStream,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let spec = ctx.spec;
    let started = Instant::now();
    let d = ctx.model.dim();
    let (lo, hi) = (params[0].level, params[params.len() - 1].level);
    let mut states = vec![PhaseState::origin(d); params.len() + 1];
    let mut sums = vec![vec![0.0; phi.output_dim(d)]; params.len() + 1];
    for n in 0..spec.burn_in + spec.chain_length {
        let mut path = NoisePath::draw(&mut rng, ref_params.steps, d, ref_params.delta);
        advance_along(&mut states[0], &path, ctx.model, &ctx.dynamics, ref_params)?;
        for l in (lo..ref_params.level).rev() {
            path = path.coarsen();
            if l <= hi {
                let i = (l - lo) as usize;
                advance_along(&mut states[1 + i], &path, ctx.model, &ctx.dynamics, &params[i])?;
            }
        }
        if n >= spec.burn_in {
            for (sum, state) in sums.iter_mut().zip(&states) {
                for (s, v) in sum.iter_mut().zip(eval(phi, state, d)) {
                    *s += v;
                }
            }
        }
    }
    let kept = spec.chain_length as f64;
    sums.iter_mut().flatten().for_each(|s| *s /= kept);
    Ok((sums, started.elapsed().as_secs_f64()))
}

/// Second moment of the time-averaged increment estimator per level, from
/// `M` quad-chain runs at each level.
pub struct IncrementMoments;

impl Experiment for IncrementMoments {
    fn name(&self) -> &str {
        "increment-moments"
    }

    fn validate(&self, spec: &ExperimentSpec) -> Result<()> {
        let (lo, hi) = spec.level_range((5, 9));
        if lo < 1 || hi - lo < 1 {
            return Err(UldError::Config("increment-moments needs at least two levels, all >= 1".into()));
        }
        if spec.replicates == 0 {
            return Err(UldError::Config("increment-moments needs M >= 1".into()));
        }
        // the level range replaces l_star/l_max, so only the remaining fields are checked
        let mut probe = spec.clone();
        probe.l_star = 0;
        probe.l_max = hi.max(1);
        probe.estimator_config().map(|_| ())
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let spec = ctx.spec;
        let (lo, hi) = spec.level_range((5, 9));
        let mut probe = spec.clone();
        probe.l_star = 0;
        probe.l_max = hi;
        let config = probe.estimator_config()?;
        let d = ctx.model.dim();
        let start = QuadInit::diagonal(&PhaseState::origin(d));
        let m = spec.replicates;

        let mut rows = Vec::new();
        let mut table = Table::new("increments", &["level", "delta", "second_moment", "second_moment_se", "mean_tau"]);
        let mut points = Vec::new();
        for l in lo..=hi {
            let level_rows: Vec<ReplicateResult> = (0..m as u64)
                .into_par_iter()
                .map(|i| {
                    let id = (u64::from(l) << 32) | i;
                    let started = Instant::now();
                    let mut rng = NoiseStream::derived(spec.seed, lane::INCREMENT, id);
                    let run = run_increment_quad(l, &config, ctx.model, &ctx.dynamics, &start, &mut rng)
                        .map_err(wrap(id))?;
                    Ok(ReplicateResult {
                        replicate_id: id,
                        level: l,
                        value: run.estimate,
                        tau: run.tau,
                        cost: run.cost,
                        weight: 1.0,
                        gaussian_draws: run.draws_to_stop,
                        wall_time_s: started.elapsed().as_secs_f64(),
                    })
                })
                .collect::<Result<_>>()?;
            let sq: Vec<f64> = level_rows
                .iter()
                .map(|r| r.value.iter().map(|v| v * v).sum())
                .collect();
            let n = m as f64;
            let m2 = sq.iter().sum::<f64>() / n;
            let se = if m > 1 {
                (sq.iter().map(|s| (s - m2).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            let mean_tau = level_rows.iter().map(|r| r.tau as f64).sum::<f64>() / n;
            let delta = (-f64::from(l)).exp2();
            table.push(vec![f64::from(l), delta, m2, se, mean_tau]);
            points.push((delta.ln(), m2.ln()));
            rows.extend(level_rows);
        }
        let mut extra = Map::new();
        fit_extra(&mut extra, &fit_slope(&points)?);
        let s = average_replicates(&rows)?;
        Ok(ExperimentOutput {
            stderr: s.stderr(),
            mean: s.mean,
            variance: s.variance,
            mse: Vec::new(),
            total_cost: s.total_cost,
            n_replicates: s.n,
            rows,
            tables: vec![table],
            extra,
        })
    }
}

/// Empirical survival function of the single-level meeting time and the
/// least-squares slope of its logarithm over the tail, taken as the points
/// with survival at most 0.9 and at least 10 runs still unmet.
pub struct MeetingTails;

impl MeetingTails {
    pub const MIN_AT_RISK: usize = 10;
    pub const MAX_SURVIVAL: f64 = 0.9;
}

impl Experiment for MeetingTails {
    fn name(&self) -> &str {
        "meeting-tails"
    }

    fn validate(&self, spec: &ExperimentSpec) -> Result<()> {
        if spec.replicates < 2 * Self::MIN_AT_RISK {
            return Err(UldError::Config(format!(
                "meeting-tails needs M >= {}",
                2 * Self::MIN_AT_RISK
            )));
        }
        spec.estimator_config().map(|_| ())
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let spec = ctx.spec;
        let level = LevelParams::new(spec.level.unwrap_or(spec.l_star), &spec.schedule)?;
        let mut config = spec.estimator_config()?;
        // stop right at the meeting time
        config.k = 0;
        config.m_policy = MPolicy::Fixed { m: 0 };
        let d = ctx.model.dim();
        let start = PhaseState::origin(d);
        let rows: Vec<ReplicateResult> = (0..spec.replicates as u64)
            .into_par_iter()
            .map(|i| {
                let started = Instant::now();
                let mut rng = NoiseStream::derived(spec.seed, lane::MEETING, i);
                let run = run_single_level_pair(&level, &config, ctx.model, &ctx.dynamics, (&start, &start), &mut rng)
                    .map_err(wrap(i))?;
                Ok(ReplicateResult {
                    replicate_id: i,
                    level: level.level,
                    value: run.estimate,
                    tau: run.tau,
                    cost: run.cost,
                    weight: 1.0,
                    gaussian_draws: run.draws_to_stop,
                    wall_time_s: started.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<_>>()?;

        let taus: Vec<usize> = rows.iter().map(|r| r.tau).collect();
        let max_tau = *taus.iter().max().unwrap();
        let n = taus.len();
        let mut table = Table::new("survival", &["n", "at_risk", "survival"]);
        let mut points = Vec::new();
        for t in 0..=max_tau {
            let at_risk = taus.iter().filter(|&&x| x > t).count();
            let surv = at_risk as f64 / n as f64;
            table.push(vec![t as f64, at_risk as f64, surv]);
            if at_risk >= Self::MIN_AT_RISK && surv <= Self::MAX_SURVIVAL {
                points.push((t as f64, surv.ln()));
            }
        }
        let mut extra = Map::new();
        match fit_slope(&points) {
            Ok(fit) => fit_extra(&mut extra, &fit),
            Err(e) => log::warn!("no tail fit: {e}"),
        }
        extra.insert("tail_points".into(), json!(points.len()));
        extra.insert("max_tau".into(), json!(max_tau));
        extra.insert("mean_tau".into(), json!(taus.iter().sum::<usize>() as f64 / n as f64));
        extra.insert("meeting_cap".into(), json!(spec.meeting_cap));
        let s = average_replicates(&rows)?;
        Ok(ExperimentOutput {
            stderr: s.stderr(),
            mean: s.mean,
            variance: s.variance,
            mse: Vec::new(),
            total_cost: s.total_cost,
            n_replicates: s.n,
            rows,
            tables: vec![table],
            extra,
        })
    }
}

/// `M` terminal samples of the fixed-setting Schrodinger-Follmer sampler at
/// every `(level, N)` pair of the grid. A row's cost is the number of drift
/// samples it used, `2^l N`, and its `tau` is zero.
pub struct SfsBaseline;

impl Experiment for SfsBaseline {
    fn name(&self) -> &str {
        "sfs-baseline"
    }

    fn validate(&self, spec: &ExperimentSpec) -> Result<()> {
        if spec.sfs_levels.is_empty() || spec.sfs_n.is_empty() {
            return Err(UldError::Config("sfs-baseline needs sfs-level and sfs-N".into()));
        }
        if spec.replicates == 0 {
            return Err(UldError::Config("sfs-baseline needs M >= 1".into()));
        }
        for &l in &spec.sfs_levels {
            for &n in &spec.sfs_n {
                SfsConfig::new(l, n)?;
            }
        }
        Ok(())
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let spec = ctx.spec;
        let d = ctx.model.dim();
        let reference = match &spec.reference {
            Some(r) => Some(r.clone()),
            None => ctx.model.reference_mean(),
        };
        let mut rows = Vec::new();
        let mut table = Table::new(
            "sfs_grid",
            &["level", "n_samples", "mse", "mean_variance", "cost_per_sample", "wall_time_s"],
        );
        let mut cell = 0u64;
        for &l in &spec.sfs_levels {
            for &n_samples in &spec.sfs_n {
                let config = SfsConfig::new(l, n_samples)?;
                let started = Instant::now();
                let first = cell * spec.replicates as u64;
                let cell_rows: Vec<ReplicateResult> = (0..spec.replicates as u64)
                    .into_par_iter()
                    .map(|i| {
                        let id = first + i;
                        let t = Instant::now();
                        let mut rng = NoiseStream::derived(spec.seed, lane::SFS, id);
                        let x = sfs_sample(&config, ctx.model, &mut rng).map_err(wrap(id))?;
                        Ok(ReplicateResult {
                            replicate_id: id,
                            level: l,
                            value: x,
                            tau: 0,
                            cost: (1u64 << l) * n_samples as u64,
                            weight: 1.0,
                            gaussian_draws: rng.gaussian_count(),
                            wall_time_s: t.elapsed().as_secs_f64(),
                        })
                    })
                    .collect::<Result<_>>()?;
                let wall = if spec.timing { started.elapsed().as_secs_f64() } else { 0.0 };
                let s = average_replicates(&cell_rows)?;
                let mse = reference
                    .as_deref()
                    .map_or(f64::NAN, |r| squared_error(&s.mean, r).iter().sum());
                let mean_var = s.variance.iter().sum::<f64>() / d as f64;
                table.push(vec![
                    f64::from(l),
                    n_samples as f64,
                    mse,
                    mean_var,
                    ((1u64 << l) * n_samples as u64) as f64,
                    wall,
                ]);
                rows.extend(cell_rows);
                cell += 1;
            }
        }
        let s = average_replicates(&rows)?;
        let mut extra = Map::new();
        extra.insert("reference".into(), json!(reference));
        Ok(ExperimentOutput {
            mse: reference.as_deref().map(|r| squared_error(&s.mean, r)).unwrap_or_default(),
            stderr: s.stderr(),
            mean: s.mean,
            variance: s.variance,
            total_cost: s.total_cost,
            n_replicates: s.n,
            rows,
            tables: vec![table],
            extra,
        })
    }
}
