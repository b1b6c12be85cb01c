mod common;

use common::mean_var;
use uld_core::dynamics::{apply_kernel, DynamicsParams, LevelParams, PhaseState, SigmaSchedule};
use uld_core::models::{DoubleWell, GaussianToy};
use uld_core::rng::NoiseStream;

#[test]
fn velocity_marginal_is_standard_normal() {
    let model = GaussianToy::new(vec![1.0, -1.0]).unwrap();
    let dynamics = DynamicsParams::default();
    assert!(dynamics.is_balanced());
    let level = LevelParams::new(6, &SigmaSchedule::DEFAULT).unwrap();
    let mut rng = NoiseStream::new(21);
    let mut state = PhaseState::origin(2);
    for _ in 0..50 {
        state = apply_kernel(&state, &model, &dynamics, &level, &mut rng).unwrap();
    }
    let kept = 100_000;
    let mut v: [Vec<f64>; 2] = Default::default();
    let mut x: [Vec<f64>; 2] = Default::default();
    for _ in 0..kept {
        state = apply_kernel(&state, &model, &dynamics, &level, &mut rng).unwrap();
        for i in 0..2 {
            v[i].push(state.v[i]);
            x[i].push(state.x[i]);
        }
    }
    for i in 0..2 {
        let (_, var) = mean_var(&v[i]);
        assert!((0.9..=1.1).contains(&var), "var v_{i} = {var:.4}");
        let (m, _) = mean_var(&x[i]);
        let target = if i == 0 { 1.0 } else { -1.0 };
        assert!((m - target).abs() < 0.05, "mean x_{i} = {m:.4}");
    }
}

#[test]
fn kernel_draw_count_is_exact() {
    let dynamics = DynamicsParams::default();
    for d in [1usize, 3, 5] {
        let model = DoubleWell::new(d).unwrap();
        for l in 0..=7u32 {
            let level = LevelParams::new(l, &SigmaSchedule::DEFAULT).unwrap();
            let mut rng = NoiseStream::new(22);
            let before = rng.gaussian_count();
            apply_kernel(&PhaseState::origin(d), &model, &dynamics, &level, &mut rng).unwrap();
            assert_eq!(rng.gaussian_count() - before, (1u64 << (l + 1)) * d as u64);
        }
    }
}

#[test]
fn kernel_is_deterministic_under_seed() {
    let model = DoubleWell::new(3).unwrap();
    let dynamics = DynamicsParams::default();
    let level = LevelParams::new(5, &SigmaSchedule::DEFAULT).unwrap();
    let start = PhaseState::new(vec![0.5, -0.5, 0.1], vec![0.0, 1.0, -1.0]).unwrap();
    let run = || {
        let mut rng = NoiseStream::new(23);
        apply_kernel(&start, &model, &dynamics, &level, &mut rng).unwrap()
    };
    assert!(run().bitwise_eq(&run()));
}
