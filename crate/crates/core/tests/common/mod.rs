#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};
use uld_core::dynamics::{DynamicsParams, LevelParams, PhaseState};

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `int min(phi(t), phi(t - sep)) dt` by composite Simpson on a wide interval.
pub fn overlap_quadrature(sep: f64) -> f64 {
    let (a, b) = (-14.0, 14.0 + sep);
    let n = 200_000;
    let h = (b - a) / n as f64;
    let f = |t: f64| std_normal_pdf(t).min(std_normal_pdf(t - sep));
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Exact law of `K_l(u)` on the Gaussian toy `U = |x - mu|^2 / 2`: each
/// coordinate's `(x, v)` evolves by the linear map
/// `(x, v) -> (x + v D, v + (mu - x - kappa v) D)` plus independent noise of
/// variance `(sigma_l^2 D, sigma^2 D)`.
#[derive(Clone, Debug)]
pub struct ToyLaw {
    /// Per coordinate: mean of x, mean of v, var x, var v.
    pub moments: Vec<[f64; 4]>,
}

pub fn toy_kernel_law(mu: &[f64], start: &PhaseState, dynamics: &DynamicsParams, level: &LevelParams) -> ToyLaw {
    let dt = level.delta;
    let k = dynamics.kappa;
    let q = [level.sigma_l * level.sigma_l * dt, dynamics.sigma * dynamics.sigma * dt];
    let moments = (0..mu.len())
        .map(|i| {
            let (mut mx, mut mv) = (start.x[i], start.v[i]);
            // covariance entries: cxx, cxv, cvv
            let (mut cxx, mut cxv, mut cvv) = (0.0, 0.0, 0.0);
            let a = [[1.0, dt], [-dt, 1.0 - k * dt]];
            for _ in 0..level.steps {
                let nx = mx + mv * dt;
                let nv = mv + (mu[i] - mx - k * mv) * dt;
                mx = nx;
                mv = nv;
                let nxx = a[0][0] * a[0][0] * cxx + 2.0 * a[0][0] * a[0][1] * cxv + a[0][1] * a[0][1] * cvv + q[0];
                let nxv = a[0][0] * a[1][0] * cxx + (a[0][0] * a[1][1] + a[0][1] * a[1][0]) * cxv + a[0][1] * a[1][1] * cvv;
                let nvv = a[1][0] * a[1][0] * cxx + 2.0 * a[1][0] * a[1][1] * cxv + a[1][1] * a[1][1] * cvv + q[1];
                cxx = nxx;
                cxv = nxv;
                cvv = nvv;
            }
            [mx, mv, cxx, cvv]
        })
        .collect();
    ToyLaw { moments }
}

/// Sample mean and variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// z-scores of the sample mean and variance of Gaussian draws against the
/// exact `(mean, var)`.
pub fn moment_z(xs: &[f64], mean: f64, var: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let (m, v) = mean_var(xs);
    let z_mean = (m - mean) / (var / n).sqrt();
    let z_var = (v - var) / (var * (2.0 / (n - 1.0)).sqrt());
    (z_mean, z_var)
}

/// Checks every `(x, v)` coordinate of `samples` against `law` at 4 SE and
/// returns the largest absolute z-score.
pub fn max_z_against(samples: &[PhaseState], law: &ToyLaw) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, m) in law.moments.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|s| s.x[i]).collect();
        let vs: Vec<f64> = samples.iter().map(|s| s.v[i]).collect();
        let (a, b) = moment_z(&xs, m[0], m[2]);
        let (c, d) = moment_z(&vs, m[1], m[3]);
        worst = worst.max(a.abs()).max(b.abs()).max(c.abs()).max(d.abs());
    }
    worst
}
