use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uld_core::models::{ModelOptions, ModelRegistry, TargetModel};

const POINTS: usize = 20;
const STEP: f64 = 1e-5;

fn build(name: &str) -> Box<dyn TargetModel> {
    let options = ModelOptions {
        dim: Some(5),
        d0: Some(4),
        seed: 3,
        ..Default::default()
    };
    ModelRegistry::builtin().build(name, &options).unwrap()
}

fn check(model: &dyn TargetModel, spread: f64, seed: u64) {
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0; d];
    for _ in 0..POINTS {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-spread..spread)).collect();
        model.gradient_into(&x, &mut grad);
        let fd: Vec<f64> = (0..d)
            .map(|i| {
                let mut up = x.clone();
                let mut down = x.clone();
                up[i] += STEP;
                down[i] -= STEP;
                (model.potential_unchecked(&up) - model.potential_unchecked(&down)) / (2.0 * STEP)
            })
            .collect();
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
        assert!(diff / norm <= 1e-5, "{}: relative error {:.2e} at {x:?}", model.name(), diff / norm);
    }
}

#[test]
fn gradients_match_central_differences() {
    for (i, name) in ["gaussian", "double-well", "ginzburg-landau", "logistic"].iter().enumerate() {
        let model = build(name);
        check(model.as_ref(), 1.5, 100 + i as u64);
    }
}

#[test]
fn registry_builds_desk_dimensions() {
    assert_eq!(build("double-well").dim(), 5);
    assert_eq!(build("ginzburg-landau").dim(), 64);
    assert_eq!(build("logistic").dim(), 5);
    assert_eq!(build("gaussian").dim(), 5);
}
