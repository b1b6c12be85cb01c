use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use uld_core::harness::{parse_config_text, run_experiment, ExperimentRegistry, ExperimentSpec, KEYS};
use uld_core::models::ModelRegistry;

/// Unbiased estimation with coupled underdamped Langevin chains.
///
/// Settings are applied in order: built-in defaults, then `--config`, then
/// `--set` pairs, then the named flags below.
#[derive(Parser, Debug)]
#[command(name = "uld", version)]
struct Cli {
    /// Experiment kind, or `list` to show kinds, models and config keys.
    kind: String,

    /// Flat `key = value` file using the flag names as keys.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    d0: Option<String>,
    #[arg(long)]
    lstar: Option<String>,
    #[arg(long)]
    lmax: Option<String>,
    #[arg(long = "level-exponent")]
    level_exponent: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    k: Option<String>,
    /// Number of replicates.
    #[arg(long = "M")]
    replicates: Option<String>,
    /// Outer repetitions for MSE estimates.
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Keep k fixed and use m = 2k.
    #[arg(long = "strict-k")]
    strict_k: bool,
    /// Drift samples for the SFS baseline (comma-separated).
    #[arg(long = "sfs-N")]
    sfs_n: Option<String>,
    #[arg(long)]
    observable: Option<String>,
    /// Level range such as 4-9.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long = "ref-steps")]
    ref_steps: Option<String>,
    /// Write zero wall times so that outputs are byte-reproducible.
    #[arg(long = "no-timing")]
    no_timing: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Cli {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let named = [
            ("model", &self.model),
            ("dim", &self.dim),
            ("d0", &self.d0),
            ("lstar", &self.lstar),
            ("lmax", &self.lmax),
            ("level-exponent", &self.level_exponent),
            ("alpha", &self.alpha),
            ("sigma", &self.sigma),
            ("kappa", &self.kappa),
            ("k", &self.k),
            ("M", &self.replicates),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("out", &self.out),
            ("sfs-N", &self.sfs_n),
            ("observable", &self.observable),
            ("levels", &self.levels),
            ("ref-steps", &self.ref_steps),
        ];
        let mut pairs: Vec<(&'static str, String)> = named
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if self.strict_k {
            pairs.push(("strict-k", "true".into()));
        }
        if self.no_timing {
            pairs.push(("timing", "false".into()));
        }
        pairs
    }
}

fn list() {
    let kinds: Vec<String> = ExperimentRegistry::builtin().names().map(String::from).collect();
    let models: Vec<String> = ModelRegistry::builtin().names().map(String::from).collect();
    println!("kinds:  {}", kinds.join(", "));
    println!("models: {}", models.join(", "));
    println!("keys:   {}", KEYS.join(", "));
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if cli.kind == "list" {
        list();
        return Ok(());
    }

    let mut spec = ExperimentSpec {
        kind: cli.kind.clone(),
        ..Default::default()
    };
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (k, v) in parse_config_text(&text)? {
            spec.set(&k, &v).with_context(|| format!("{}: {k}", path.display()))?;
        }
    }
    for item in &cli.set {
        let Some((k, v)) = item.split_once('=') else {
            bail!("--set wants key=value, got `{item}`");
        };
        spec.set(k.trim(), v)?;
    }
    for (k, v) in cli.flag_pairs() {
        spec.set(k, &v).with_context(|| format!("--{k}"))?;
    }
    // the positional kind always wins over a `kind` key in the file
    spec.kind = cli.kind.clone();

    let result = run_experiment(&spec)?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    Ok(())
}
