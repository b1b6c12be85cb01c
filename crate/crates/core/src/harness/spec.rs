use std::path::PathBuf;

use serde::Serialize;

use crate::dynamics::{DynamicsParams, SigmaSchedule};
use crate::error::{Result, UldError};
use crate::estimator::{observable_by_name, EstimatorConfig, MPolicy};
use crate::kernels::FinalStepDraw;
use crate::models::ModelOptions;

/// Everything one experiment run needs, as plain data. Built from defaults,
/// then a config file, then command-line flags, all through [`ExperimentSpec::set`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub kind: String,
    pub model: String,
    pub dim: Option<usize>,
    pub d0: Option<usize>,
    pub n_obs: Option<usize>,
    pub data_seed: u64,
    pub gaussian_mean: Option<Vec<f64>>,
    pub gl_temperature: Option<f64>,
    pub gl_gamma: Option<f64>,
    pub gl_zeta: Option<f64>,
    pub logistic_csv: Option<PathBuf>,

    pub l_star: u32,
    pub l_max: u32,
    pub level_exponent: f64,
    pub alpha: f64,
    pub k: usize,
    pub strict_k: bool,
    pub fixed_m: Option<usize>,
    pub replicates: usize,
    pub observable: String,
    pub final_draw: FinalStepDraw,
    pub meeting_cap: usize,
    pub schedule: SigmaSchedule,
    pub sigma: f64,
    pub kappa: f64,

    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub timing: bool,

    /// Outer repetitions for MSE estimates.
    pub reps: usize,
    /// Replicate counts compared by `mse-vs-cost`; empty means `M/8, M/4, M/2, M`.
    pub m_grid: Vec<usize>,
    /// Level range for `weak-error` and `increment-moments`.
    pub levels: Option<(u32, u32)>,
    /// Level for `meeting-tails`; `l_star` when unset.
    pub level: Option<u32>,
    pub ref_level: u32,
    /// Kept kernel steps per chain in `weak-error`.
    pub chain_length: usize,
    pub burn_in: usize,
    /// Reference expectation of the observable; overrides the model's own.
    pub reference: Option<Vec<f64>>,
    /// Long-run reference for targets without a known mean.
    pub ref_run_level: u32,
    pub ref_steps: usize,
    pub ref_chains: usize,
    pub sfs_n: Vec<usize>,
    pub sfs_levels: Vec<u32>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: "estimate".into(),
            model: "gaussian".into(),
            dim: None,
            d0: None,
            n_obs: None,
            data_seed: 0,
            gaussian_mean: None,
            gl_temperature: None,
            gl_gamma: None,
            gl_zeta: None,
            logistic_csv: None,
            l_star: 5,
            l_max: 12,
            level_exponent: 1.5,
            alpha: 0.8,
            k: 100,
            strict_k: false,
            fixed_m: None,
            replicates: 100,
            observable: "position".into(),
            final_draw: FinalStepDraw::default(),
            meeting_cap: 100_000,
            schedule: SigmaSchedule::DEFAULT,
            sigma: 3.0,
            kappa: 4.5,
            seed: 0,
            workers: 0,
            out: None,
            timing: true,
            reps: 50,
            m_grid: Vec::new(),
            levels: None,
            level: None,
            ref_level: 11,
            chain_length: 2000,
            burn_in: 100,
            reference: None,
            ref_run_level: 10,
            ref_steps: 1_000_000,
            ref_chains: 8,
            sfs_n: vec![100, 1000],
            sfs_levels: vec![4, 6],
        }
    }
}

/// Every key accepted by [`ExperimentSpec::set`].
pub const KEYS: &[&str] = &[
    "kind", "model", "dim", "d0", "n-obs", "data-seed", "mean", "gl-temperature", "gl-gamma", "gl-zeta",
    "logistic-csv", "lstar", "lmax", "level-exponent", "alpha", "k", "strict-k", "m", "M", "observable",
    "final-draw", "meeting-cap", "sigma-schedule", "sigma", "kappa", "seed", "workers", "out", "timing", "reps",
    "m-grid", "levels", "level", "ref-level", "chain-length", "burn-in", "reference", "ref-run-level",
    "ref-steps", "ref-chains", "sfs-N", "sfs-level",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| UldError::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "" | "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(UldError::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

/// `a-b`, `a..b` or `a..=b`, inclusive.
fn parse_range(key: &str, value: &str) -> Result<(u32, u32)> {
    let v = value.trim();
    let (a, b) = v
        .split_once("..=")
        .or_else(|| v.split_once(".."))
        .or_else(|| v.split_once('-'))
        .ok_or_else(|| UldError::Config(format!("`{key}` wants a range like 4-9, got `{value}`")))?;
    let (a, b) = (parse(key, a)?, parse(key, b)?);
    if a > b {
        return Err(UldError::Config(format!("empty range `{value}` for `{key}`")));
    }
    Ok((a, b))
}

/// `geometric:SCALE:RATE` or `constant:VALUE`.
fn parse_schedule(value: &str) -> Result<SigmaSchedule> {
    let parts: Vec<&str> = value.trim().split(':').collect();
    let key = "sigma-schedule";
    match parts.as_slice() {
        ["geometric", scale, rate] => Ok(SigmaSchedule::Geometric {
            scale: parse(key, scale)?,
            rate: parse(key, rate)?,
        }),
        ["constant", v] => Ok(SigmaSchedule::Constant { value: parse(key, v)? }),
        _ => Err(UldError::Config(format!(
            "bad sigma schedule `{value}` (expected geometric:SCALE:RATE or constant:VALUE)"
        ))),
    }
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are skipped;
/// a bare key stands for a switch that is on.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (line, ""),
        };
        let key = key.trim_start_matches("--");
        if !KEYS.contains(&key) {
            return Err(UldError::Config(format!("line {}: unknown key `{key}`", no + 1)));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

impl ExperimentSpec {
    pub const DESK_DIM: usize = 5;
    pub const DESK_D0: usize = 4;

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "kind" => self.kind = v.to_string(),
            "model" => self.model = v.to_string(),
            "dim" => self.dim = Some(parse(key, v)?),
            "d0" => self.d0 = Some(parse(key, v)?),
            "n-obs" => self.n_obs = Some(parse(key, v)?),
            "data-seed" => self.data_seed = parse(key, v)?,
            "mean" => self.gaussian_mean = Some(parse_list(key, v)?),
            "gl-temperature" => self.gl_temperature = Some(parse(key, v)?),
            "gl-gamma" => self.gl_gamma = Some(parse(key, v)?),
            "gl-zeta" => self.gl_zeta = Some(parse(key, v)?),
            "logistic-csv" => self.logistic_csv = Some(PathBuf::from(v)),
            "lstar" => self.l_star = parse(key, v)?,
            "lmax" => self.l_max = parse(key, v)?,
            "level-exponent" => self.level_exponent = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "strict-k" => self.strict_k = parse_bool(key, v)?,
            "m" => self.fixed_m = Some(parse(key, v)?),
            "M" => self.replicates = parse(key, v)?,
            "observable" => self.observable = v.to_string(),
            "final-draw" => self.final_draw = v.parse()?,
            "meeting-cap" => self.meeting_cap = parse(key, v)?,
            "sigma-schedule" => self.schedule = parse_schedule(v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "kappa" => self.kappa = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "timing" => self.timing = parse_bool(key, v)?,
            "reps" => self.reps = parse(key, v)?,
            "m-grid" => self.m_grid = parse_list(key, v)?,
            "levels" => self.levels = Some(parse_range(key, v)?),
            "level" => self.level = Some(parse(key, v)?),
            "ref-level" => self.ref_level = parse(key, v)?,
            "chain-length" => self.chain_length = parse(key, v)?,
            "burn-in" => self.burn_in = parse(key, v)?,
            "reference" => self.reference = Some(parse_list(key, v)?),
            "ref-run-level" => self.ref_run_level = parse(key, v)?,
            "ref-steps" => self.ref_steps = parse(key, v)?,
            "ref-chains" => self.ref_chains = parse(key, v)?,
            "sfs-N" => self.sfs_n = parse_list(key, v)?,
            "sfs-level" => self.sfs_levels = parse_list(key, v)?,
            other => return Err(UldError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies pairs in order, so later pairs override earlier ones.
    pub fn apply<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        pairs.into_iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Model options with desk-scale sizes filled in where the flags leave them
    /// open: `d = 5` for the double well and `d0 = 4` for the lattice.
    pub fn model_options(&self) -> ModelOptions {
        let dim = match (self.dim, self.model.as_str()) {
            (None, "double-well") => Some(Self::DESK_DIM),
            (dim, _) => dim,
        };
        ModelOptions {
            dim,
            d0: self.d0.or(Some(Self::DESK_D0)),
            n_obs: self.n_obs,
            seed: self.data_seed,
            gaussian_mean: self.gaussian_mean.clone(),
            gl_temperature: self.gl_temperature,
            gl_gamma: self.gl_gamma,
            gl_zeta: self.gl_zeta,
            logistic_csv: self.logistic_csv.clone(),
        }
    }

    pub fn dynamics(&self) -> Result<DynamicsParams> {
        DynamicsParams::new(self.kappa, self.sigma)
    }

    pub fn m_policy(&self) -> MPolicy {
        match (self.fixed_m, self.strict_k) {
            (Some(m), _) => MPolicy::Fixed { m },
            (None, true) => MPolicy::Fixed { m: 2 * self.k },
            (None, false) => MPolicy::Adaptive,
        }
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        let config = EstimatorConfig {
            l_star: self.l_star,
            l_max: self.l_max,
            level_exponent: self.level_exponent,
            alpha: self.alpha,
            k: self.k,
            m_policy: self.m_policy(),
            replicates: self.replicates,
            observable: observable_by_name(&self.observable)?,
            seed: self.seed,
            schedule: self.schedule,
            final_draw: self.final_draw,
            meeting_cap: self.meeting_cap,
            start: None,
        };
        config.validate()?;
        Ok(config)
    }

    /// Level range of the per-level experiments, with a kind-specific default.
    pub fn level_range(&self, default: (u32, u32)) -> (u32, u32) {
        self.levels.unwrap_or(default)
    }

    /// Replicate counts for `mse-vs-cost`, ascending and without repeats.
    pub fn replicate_grid(&self) -> Vec<usize> {
        let mut grid = if self.m_grid.is_empty() {
            [8, 4, 2, 1].iter().map(|div| (self.replicates / div).max(1)).collect()
        } else {
            self.m_grid.clone()
        };
        grid.sort_unstable();
        grid.dedup();
        grid
    }
}
