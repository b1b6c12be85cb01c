use std::fs;

use uld_core::estimator::cost_from_draws;
use uld_core::harness::{
    parse_config_text, read_replicate_csv, run_experiment, run_with, Experiment, ExperimentOutput, ExperimentRegistry,
    ExperimentSpec, RunContext,
};
use uld_core::models::{GaussianToy, ModelRegistry};

fn toy_spec(kind: &str) -> ExperimentSpec {
    ExperimentSpec {
        kind: kind.into(),
        model: "gaussian".into(),
        gaussian_mean: Some(vec![1.0, -1.0]),
        l_star: 3,
        l_max: 8,
        k: 20,
        strict_k: true,
        replicates: 200,
        seed: 7,
        timing: false,
        ..Default::default()
    }
}

#[test]
fn worker_count_does_not_change_output_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in [1usize, 8] {
        let out = dir.path().join(format!("w{workers}"));
        let spec = ExperimentSpec {
            workers,
            out: Some(out.clone()),
            ..toy_spec("estimate")
        };
        run_experiment(&spec).unwrap();
        outputs.push(out);
    }
    let csv: Vec<Vec<u8>> = outputs.iter().map(|d| fs::read(d.join("replicates.csv")).unwrap()).collect();
    assert_eq!(csv[0], csv[1]);
    let mean = |d: &std::path::Path| {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(d.join("summary.json")).unwrap()).unwrap();
        v["mean"].clone()
    };
    assert_eq!(mean(&outputs[0]), mean(&outputs[1]));
}

#[test]
fn cost_ledger_matches_draw_counter() {
    let result = run_experiment(&toy_spec("estimate")).unwrap();
    let mut total = 0;
    for r in &result.rows {
        assert_eq!(r.cost, cost_from_draws(r.is_increment(3), r.gaussian_draws, 2), "replicate {}", r.replicate_id);
        total += r.cost;
    }
    assert_eq!(total, result.summary.total_cost);
}

#[test]
fn estimate_is_close_to_the_mean() {
    let result = run_experiment(&toy_spec("estimate")).unwrap();
    let s = &result.summary;
    for (i, mu) in [1.0, -1.0].iter().enumerate() {
        let z = (s.mean[i] - mu) / s.stderr[i];
        assert!(z.abs() < 4.0, "coordinate {i}: {} +- {}", s.mean[i], s.stderr[i]);
    }
    assert_eq!(s.n_replicates, 200);
    assert_eq!(s.mse.len(), 2);
}

#[test]
fn replicate_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        out: Some(dir.path().to_path_buf()),
        timing: true,
        replicates: 30,
        ..toy_spec("estimate")
    };
    let result = run_experiment(&spec).unwrap();
    let text = fs::read_to_string(dir.path().join("replicates.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "replicate_id,level,tau,cost_euler_steps,weight,value_0,value_1,wall_time_s"
    );
    let back = read_replicate_csv(&dir.path().join("replicates.csv")).unwrap();
    assert_eq!(back.len(), result.rows.len());
    for (a, b) in back.iter().zip(&result.rows) {
        assert_eq!((a.replicate_id, a.level, a.tau, a.cost), (b.replicate_id, b.level, b.tau, b.cost));
        assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        assert_eq!(a.wall_time_s.to_bits(), b.wall_time_s.to_bits());
        assert!(a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for key in ["mean", "variance", "stderr", "mse", "total_cost", "n_replicates", "seed", "spec_echo"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn config_text_drives_a_run() {
    let text = "\
# desk run
model = double-well
dim = 2
lstar = 2
lmax = 5
k = 10
strict-k
M = 20
seed = 4
timing = false
";
    let mut spec = ExperimentSpec::default();
    spec.apply(parse_config_text(text).unwrap().iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .unwrap();
    assert_eq!((spec.model.as_str(), spec.dim, spec.replicates), ("double-well", Some(2), 20));
    assert!(spec.strict_k);
    let result = run_experiment(&spec).unwrap();
    assert_eq!(result.rows.len(), 20);
    assert!(result.rows.iter().all(|r| (2..=5).contains(&r.level)));
    assert!(spec.set("no-such-key", "1").is_err());
}

struct CountReplicates;

impl Experiment for CountReplicates {
    fn name(&self) -> &str {
        "count"
    }

    fn validate(&self, _spec: &ExperimentSpec) -> uld_core::Result<()> {
        Ok(())
    }

    fn run(&self, ctx: &RunContext<'_>) -> uld_core::Result<ExperimentOutput> {
        Ok(ExperimentOutput {
            mean: vec![ctx.model.dim() as f64],
            n_replicates: ctx.spec.replicates,
            ..Default::default()
        })
    }
}

#[test]
fn registries_accept_new_entries() {
    let mut models = ModelRegistry::builtin();
    models.register("wide-gaussian", |o| Ok(Box::new(GaussianToy::standard(o.dim.unwrap_or(7))?)));
    let mut kinds = ExperimentRegistry::empty();
    kinds.register(Box::new(CountReplicates));
    let spec = ExperimentSpec {
        kind: "count".into(),
        model: "wide-gaussian".into(),
        replicates: 3,
        ..Default::default()
    };
    let result = run_with(&spec, &models, &kinds).unwrap();
    assert_eq!(result.summary.mean, vec![7.0]);
    let unknown = ExperimentSpec {
        kind: "estimate".into(),
        ..spec
    };
    assert!(run_with(&unknown, &models, &kinds).is_err());
}
