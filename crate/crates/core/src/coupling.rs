//! Reflection maximal couplings of diagonal Gaussians with a shared scale.
//!
//! For `p = N(mu1, S^2)` and `q = N(mu2, S^2)` with `S` diagonal, write
//! `z = (mu1 - mu2) / S`. Draw `xi ~ N(0, I)` and `W ~ U(0, 1]`; set
//! `y1 = mu1 + S xi`. If `log W <= log phi(xi + z) - log phi(xi)` the second
//! draw is `y2 = y1`; otherwise it is `mu2 + S (xi - 2 (e . xi) e)` with
//! `e = z / |z|`. Both outputs have the right marginals and they coincide
//! with probability equal to the overlap of `p` and `q`.

use crate::error::{check_dim, Result, UldError};
use crate::rng::NoiseStream;

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledDraw {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub met: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedCoupledDraw {
    pub fine: CoupledDraw,
    pub coarse: CoupledDraw,
}

fn validate(mu1: &[f64], mu2: &[f64], stddev: &[f64]) -> Result<()> {
    check_dim("coupling mean", mu1.len(), mu2.len())?;
    check_dim("coupling scale", mu1.len(), stddev.len())?;
    if let Some(i) = stddev.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(UldError::Degenerate(format!(
            "coupling scale {} at coordinate {i} is not strictly positive",
            stddev[i]
        )));
    }
    Ok(())
}

/// The reflection construction for pre-drawn standard normal `xi` and `log W`.
pub fn reflection_from_draws(mu1: &[f64], mu2: &[f64], stddev: &[f64], xi: &[f64], log_w: f64) -> CoupledDraw {
    let m = mu1.len();
    let z: Vec<f64> = (0..m).map(|i| (mu1[i] - mu2[i]) / stddev[i]).collect();
    let y1: Vec<f64> = (0..m).map(|i| mu1[i] + stddev[i] * xi[i]).collect();

    // log phi(xi + z) - log phi(xi) = -(2 xi.z + |z|^2) / 2
    let z2: f64 = z.iter().map(|v| v * v).sum();
    let xz: f64 = xi.iter().zip(&z).map(|(a, b)| a * b).sum();
    let log_ratio = -(2.0 * xz + z2) * 0.5;
    if z2 == 0.0 || log_w <= log_ratio {
        let y2 = y1.clone();
        return CoupledDraw { y1, y2, met: true };
    }

    let norm = z2.sqrt();
    let proj = xz / norm;
    let y2: Vec<f64> = (0..m)
        .map(|i| mu2[i] + stddev[i] * (xi[i] - 2.0 * proj * z[i] / norm))
        .collect();
    // Exact coincidence on the reflection branch is a probability-zero event;
    // the flag must still agree with bitwise equality.
    let met = y1.iter().zip(&y2).all(|(a, b)| a.to_bits() == b.to_bits());
    CoupledDraw { y1, y2, met }
}

pub fn reflection_max_coupling(mu1: &[f64], mu2: &[f64], stddev: &[f64], rng: &mut NoiseStream) -> Result<CoupledDraw> {
    validate(mu1, mu2, stddev)?;
    let mut xi = vec![0.0; mu1.len()];
    rng.fill_gaussian(&mut xi, 1.0);
    let log_w = rng.uniform().ln();
    Ok(reflection_from_draws(mu1, mu2, stddev, &xi, log_w))
}

/// Two per-level reflection couplings driven by shared randomness. Each level
/// uses its own standardized draw and both use the same `log W`; passing the
/// same `xi` for both levels gives the plain shared-draw construction.
pub fn sync_pairwise_from_draws(
    fine_mu: (&[f64], &[f64]),
    coarse_mu: (&[f64], &[f64]),
    fine_stddev: &[f64],
    coarse_stddev: &[f64],
    fine_xi: &[f64],
    coarse_xi: &[f64],
    log_w: f64,
) -> PairedCoupledDraw {
    PairedCoupledDraw {
        fine: reflection_from_draws(fine_mu.0, fine_mu.1, fine_stddev, fine_xi, log_w),
        coarse: reflection_from_draws(coarse_mu.0, coarse_mu.1, coarse_stddev, coarse_xi, log_w),
    }
}

/// Synchronous pairwise reflection coupling with one `(xi, W)` shared by both levels.
pub fn sync_pairwise_reflection_coupling(
    fine_mu: (&[f64], &[f64]),
    coarse_mu: (&[f64], &[f64]),
    fine_stddev: &[f64],
    coarse_stddev: &[f64],
    rng: &mut NoiseStream,
) -> Result<PairedCoupledDraw> {
    validate(fine_mu.0, fine_mu.1, fine_stddev)?;
    validate(coarse_mu.0, coarse_mu.1, coarse_stddev)?;
    check_dim("coarse coupling mean", fine_mu.0.len(), coarse_mu.0.len())?;
    let mut xi = vec![0.0; fine_mu.0.len()];
    rng.fill_gaussian(&mut xi, 1.0);
    let log_w = rng.uniform().ln();
    Ok(sync_pairwise_from_draws(
        fine_mu,
        coarse_mu,
        fine_stddev,
        coarse_stddev,
        &xi,
        &xi,
        log_w,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_laws_always_meet() {
        let mut rng = NoiseStream::new(1);
        for _ in 0..1000 {
            let c = reflection_max_coupling(&[0.3, -1.0], &[0.3, -1.0], &[0.5, 2.0], &mut rng).unwrap();
            assert!(c.met);
            assert_eq!(c.y1, c.y2);
        }
    }

    #[test]
    fn far_apart_laws_rarely_meet() {
        let mut rng = NoiseStream::new(2);
        let met = (0..100_000)
            .filter(|_| reflection_max_coupling(&[0.0], &[10.0], &[1.0], &mut rng).unwrap().met)
            .count();
        assert!((met as f64) < 100.0, "met {met} times");
    }

    #[test]
    fn met_flag_matches_bitwise_equality() {
        let mut rng = NoiseStream::new(3);
        for _ in 0..20_000 {
            let c = reflection_max_coupling(&[0.0, 0.5], &[0.8, 0.1], &[1.0, 0.7], &mut rng).unwrap();
            let equal = c.y1.iter().zip(&c.y2).all(|(a, b)| a.to_bits() == b.to_bits());
            assert_eq!(c.met, equal);
        }
    }

    #[test]
    fn reflection_branch_mirrors_draw() {
        // z = (1, 0); xi = (1, 2): log ratio = -(2 + 1) / 2 < log 1 = 0, so reject.
        let c = reflection_from_draws(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], 0.0);
        assert!(!c.met);
        assert_eq!(c.y1, vec![2.0, 2.0]);
        assert_eq!(c.y2, vec![-1.0, 2.0]);
    }

    #[test]
    fn degenerate_scale_rejected() {
        let mut rng = NoiseStream::new(4);
        assert!(matches!(
            reflection_max_coupling(&[0.0], &[1.0], &[0.0], &mut rng),
            Err(UldError::Degenerate(_))
        ));
        assert!(matches!(
            reflection_max_coupling(&[0.0, 1.0], &[1.0], &[1.0], &mut rng),
            Err(UldError::Dimension { .. })
        ));
    }

    #[test]
    fn sync_levels_respect_their_own_means() {
        let mut rng = NoiseStream::new(5);
        for _ in 0..1000 {
            let p = sync_pairwise_reflection_coupling(
                (&[0.0], &[0.0]),
                (&[0.0], &[50.0]),
                &[1.0],
                &[1.0],
                &mut rng,
            )
            .unwrap();
            assert!(p.fine.met);
            assert!(!p.coarse.met);
            let both = sync_pairwise_reflection_coupling((&[1.0], &[1.0]), (&[2.0], &[2.0]), &[1.0], &[0.5], &mut rng).unwrap();
            assert!(both.fine.met && both.coarse.met);
        }
    }
}
