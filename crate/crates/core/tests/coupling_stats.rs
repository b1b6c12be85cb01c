mod common;

use common::{moment_z, overlap_quadrature, std_normal_cdf};
use uld_core::coupling::{reflection_max_coupling, sync_pairwise_reflection_coupling};
use uld_core::rng::NoiseStream;

const DRAWS: usize = 100_000;

fn binomial_z(hits: usize, n: usize, p: f64) -> f64 {
    let nf = n as f64;
    (hits as f64 / nf - p) / (p * (1.0 - p) / nf).sqrt()
}

#[test]
fn one_dimensional_met_rate_is_the_overlap() {
    let exact = 2.0 * std_normal_cdf(-1.0);
    assert!((overlap_quadrature(2.0) - exact).abs() < 1e-9);

    let mut rng = NoiseStream::new(11);
    let mut met = 0;
    let (mut y1, mut y2) = (Vec::with_capacity(DRAWS), Vec::with_capacity(DRAWS));
    for _ in 0..DRAWS {
        let draw = reflection_max_coupling(&[0.0], &[2.0], &[1.0], &mut rng).unwrap();
        if draw.met {
            met += 1;
            assert_eq!(draw.y1[0].to_bits(), draw.y2[0].to_bits());
        } else {
            assert_ne!(draw.y1, draw.y2);
        }
        y1.push(draw.y1[0]);
        y2.push(draw.y2[0]);
    }
    let z = binomial_z(met, DRAWS, exact);
    assert!(z.abs() < 3.0, "met rate {} vs {exact}, z = {z:.2}", met as f64 / DRAWS as f64);

    for (ys, mu) in [(&y1, 0.0), (&y2, 2.0)] {
        let (zm, zv) = moment_z(ys, mu, 1.0);
        assert!(zm.abs() < 4.0 && zv.abs() < 4.0, "marginal z = ({zm:.2}, {zv:.2})");
    }
}

#[test]
fn diagonal_three_dimensional_met_rate() {
    // standardized separation is |z|; overlap of two unit Gaussians at that distance
    let mu1: [f64; 3] = [0.3, -1.0, 2.0];
    let mu2 = [0.9, -0.2, 1.5];
    let scale = [0.5, 2.0, 0.25];
    let sep = (0..3)
        .map(|i| ((mu1[i] - mu2[i]) / scale[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    let exact = overlap_quadrature(sep);

    let mut rng = NoiseStream::new(12);
    let mut met = 0;
    let mut cols: [Vec<f64>; 6] = Default::default();
    for _ in 0..DRAWS {
        let draw = reflection_max_coupling(&mu1, &mu2, &scale, &mut rng).unwrap();
        if draw.met {
            met += 1;
            assert!(draw.y1.iter().zip(&draw.y2).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        for i in 0..3 {
            cols[i].push(draw.y1[i]);
            cols[3 + i].push(draw.y2[i]);
        }
    }
    let z = binomial_z(met, DRAWS, exact);
    assert!(z.abs() < 3.0, "met rate vs overlap {exact:.4}: z = {z:.2}");
    for i in 0..3 {
        let v = scale[i] * scale[i];
        for (col, mu) in [(&cols[i], mu1[i]), (&cols[3 + i], mu2[i])] {
            let (zm, zv) = moment_z(col, mu, v);
            assert!(zm.abs() < 4.0 && zv.abs() < 4.0, "coordinate {i}: z = ({zm:.2}, {zv:.2})");
        }
    }
}

#[test]
fn large_separation_does_not_underflow() {
    let mut rng = NoiseStream::new(13);
    for _ in 0..1000 {
        let draw = reflection_max_coupling(&[0.0], &[80.0], &[1.0], &mut rng).unwrap();
        assert!(!draw.met);
        assert!(draw.y1[0].is_finite() && draw.y2[0].is_finite());
    }
}

#[test]
fn paired_coupling_keeps_per_level_rates() {
    let fine = ([0.0, 0.0], [1.0, 0.0]);
    let coarse = ([0.0, 0.0], [0.0, 1.5]);
    let mut rng = NoiseStream::new(14);
    let n = 40_000;
    let (mut fine_met, mut coarse_met) = (0, 0);
    for _ in 0..n {
        let draw = sync_pairwise_reflection_coupling(
            (&fine.0, &fine.1),
            (&coarse.0, &coarse.1),
            &[1.0, 1.0],
            &[1.0, 1.0],
            &mut rng,
        )
        .unwrap();
        fine_met += usize::from(draw.fine.met);
        coarse_met += usize::from(draw.coarse.met);
    }
    assert!(binomial_z(fine_met, n, 2.0 * std_normal_cdf(-0.5)).abs() < 3.0);
    assert!(binomial_z(coarse_met, n, 2.0 * std_normal_cdf(-0.75)).abs() < 3.0);
}

#[test]
fn same_seed_same_draws() {
    let run = || {
        let mut rng = NoiseStream::new(15);
        (0..100)
            .map(|_| reflection_max_coupling(&[0.0, 1.0], &[0.5, 0.0], &[1.0, 2.0], &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.y1.iter().chain(&x.y2).zip(y.y1.iter().chain(&y.y2)).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(x.met, y.met);
    }
}
