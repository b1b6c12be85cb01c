//! Experiment orchestration.
//!
//! An [`ExperimentSpec`] names an experiment kind; the kind is looked up in an
//! [`ExperimentRegistry`] and run on a dedicated rayon pool. Every replicate
//! draws from its own derived stream, so results do not depend on the number
//! of workers. Outputs are a per-replicate CSV, optional per-kind tables and
//! a JSON summary.

mod experiments;
mod output;
mod spec;

pub use experiments::{long_run_reference, EstimateExperiment, IncrementMoments, MeetingTails, MseVsCost, SfsBaseline, WeakError};
pub use output::{read_replicate_csv, write_replicate_csv, Table};
pub use spec::{parse_config_text, ExperimentSpec, KEYS};

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::dynamics::DynamicsParams;
use crate::error::{Result, UldError};
use crate::estimator::ReplicateResult;
use crate::models::{ModelRegistry, TargetModel};

/// Everything an experiment may use while it runs.
pub struct RunContext<'a> {
    pub spec: &'a ExperimentSpec,
    pub model: &'a dyn TargetModel,
    pub dynamics: DynamicsParams,
}

/// Raw outcome of an experiment before it is summarized.
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ReplicateResult>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Squared error of the mean per coordinate, when a reference is known.
    pub mse: Vec<f64>,
    pub total_cost: u64,
    pub n_replicates: usize,
    pub tables: Vec<Table>,
    /// Kind-specific summary entries.
    pub extra: Map<String, Value>,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &str;

    /// Checks kind-specific settings before any simulation starts.
    fn validate(&self, spec: &ExperimentSpec) -> Result<()>;

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput>;
}

pub struct ExperimentRegistry {
    kinds: BTreeMap<String, Box<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn empty() -> Self {
        Self { kinds: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(EstimateExperiment));
        reg.register(Box::new(MseVsCost));
        reg.register(Box::new(WeakError));
        reg.register(Box::new(IncrementMoments));
        reg.register(Box::new(MeetingTails));
        reg.register(Box::new(SfsBaseline));
        reg
    }

    pub fn register(&mut self, kind: Box<dyn Experiment>) {
        self.kinds.insert(kind.name().to_string(), kind);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&dyn Experiment> {
        self.kinds.get(name).map(Box::as_ref).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            UldError::Config(format!("unknown experiment `{name}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub kind: String,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mse: Vec<f64>,
    pub total_cost: u64,
    pub n_replicates: usize,
    pub seed: u64,
    pub spec_echo: Value,
    pub wall_time_s: f64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub struct RunResult {
    pub summary: RunSummary,
    pub rows: Vec<ReplicateResult>,
    pub tables: Vec<Table>,
}

/// Runs `spec` with the built-in models and experiment kinds and writes its
/// files when `spec.out` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunResult> {
    run_with(spec, &ModelRegistry::builtin(), &ExperimentRegistry::builtin())
}

pub fn run_with(spec: &ExperimentSpec, models: &ModelRegistry, kinds: &ExperimentRegistry) -> Result<RunResult> {
    let kind = kinds.get(&spec.kind)?;
    kind.validate(spec)?;
    let dynamics = spec.dynamics()?;
    let model = models.build(&spec.model, &spec.model_options())?;
    log::info!("{} on {} (d = {}), seed {}", spec.kind, spec.model, model.dim(), spec.seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| UldError::Config(format!("cannot start worker pool: {e}")))?;
    let started = Instant::now();
    let ctx = RunContext {
        spec,
        model: model.as_ref(),
        dynamics,
    };
    let mut out = pool.install(|| kind.run(&ctx))?;
    let wall = started.elapsed().as_secs_f64();
    if !spec.timing {
        out.rows.iter_mut().for_each(|r| r.wall_time_s = 0.0);
    }

    let summary = RunSummary {
        kind: spec.kind.clone(),
        mean: out.mean,
        variance: out.variance,
        stderr: out.stderr,
        mse: out.mse,
        total_cost: out.total_cost,
        n_replicates: out.n_replicates,
        seed: spec.seed,
        spec_echo: serde_json::to_value(spec)?,
        wall_time_s: if spec.timing { wall } else { 0.0 },
        extra: out.extra,
    };
    let result = RunResult {
        summary,
        rows: out.rows,
        tables: out.tables,
    };
    if let Some(dir) = &spec.out {
        write_outputs(dir, &result)?;
    }
    Ok(result)
}

/// Writes `replicates.csv`, one CSV per table and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_replicate_csv(&dir.join("replicates.csv"), &result.rows)?;
    for table in &result.tables {
        table.write_csv(&dir.join(format!("{}.csv", table.name)))?;
    }
    let json = serde_json::to_string_pretty(&result.summary)?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    log::info!("wrote results to {}", dir.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(UldError::Fit(format!("need at least two points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(UldError::Fit(format!("non-finite point {p:?}")));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > f64::EPSILON * n * (1.0 + mx * mx)) {
        return Err(UldError::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}
