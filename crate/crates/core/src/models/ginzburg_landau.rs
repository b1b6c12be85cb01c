use crate::error::{Result, UldError};
use crate::models::TargetModel;

/// Lattice size and couplings of the discretized Ginzburg-Landau free energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    /// Sites per axis; the field has `d0^3` components.
    pub d0: usize,
    /// Reduced temperature `T_c / T`.
    pub temperature: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl LatticeSpec {
    pub const DEFAULT_D0: usize = 10;
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            d0: Self::DEFAULT_D0,
            temperature: 2.0,
            gamma: 0.1,
            zeta: 0.5,
        }
    }
}

/// 3-D periodic lattice field with energy
/// `sum_s [(1-T)/2 psi^2 + gamma T / 2 sum_axes (psi_{s+e} - psi_s)^2 + zeta T / 4 psi^4]`.
#[derive(Clone, Debug)]
pub struct GinzburgLandau {
    spec: LatticeSpec,
}

impl GinzburgLandau {
    pub fn new(spec: LatticeSpec) -> Result<Self> {
        if spec.d0 == 0 {
            return Err(UldError::Config("lattice side d0 must be >= 1".into()));
        }
        for (name, v) in [
            ("temperature", spec.temperature),
            ("gamma", spec.gamma),
            ("zeta", spec.zeta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(UldError::Config(format!("lattice {name} must be positive, got {v}")));
            }
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.spec.d0;
        (i * n + j) * n + k
    }

    /// Site index of `(i, j, k)` after a signed step along `axis`, wrapping periodically.
    #[inline]
    fn neighbour(&self, i: usize, j: usize, k: usize, axis: usize, forward: bool) -> usize {
        let n = self.spec.d0;
        let step = |c: usize| if forward { (c + 1) % n } else { (c + n - 1) % n };
        match axis {
            0 => self.index(step(i), j, k),
            1 => self.index(i, step(j), k),
            _ => self.index(i, j, step(k)),
        }
    }
}

impl TargetModel for GinzburgLandau {
    fn name(&self) -> &str {
        "ginzburg-landau"
    }

    fn dim(&self) -> usize {
        self.spec.d0.pow(3)
    }

    fn potential_unchecked(&self, psi: &[f64]) -> f64 {
        let LatticeSpec {
            d0,
            temperature: t,
            gamma,
            zeta,
        } = self.spec;
        let mut total = 0.0;
        for i in 0..d0 {
            for j in 0..d0 {
                for k in 0..d0 {
                    let s = self.index(i, j, k);
                    let p = psi[s];
                    let mut grad2 = 0.0;
                    for axis in 0..3 {
                        let diff = psi[self.neighbour(i, j, k, axis, true)] - p;
                        grad2 += diff * diff;
                    }
                    let p2 = p * p;
                    total += 0.5 * (1.0 - t) * p2 + 0.5 * gamma * t * grad2 + 0.25 * zeta * t * p2 * p2;
                }
            }
        }
        total
    }

    fn gradient_into(&self, psi: &[f64], out: &mut [f64]) {
        let LatticeSpec {
            d0,
            temperature: t,
            gamma,
            zeta,
        } = self.spec;
        for i in 0..d0 {
            for j in 0..d0 {
                for k in 0..d0 {
                    let s = self.index(i, j, k);
                    let p = psi[s];
                    let mut neighbours = 0.0;
                    for axis in 0..3 {
                        neighbours += psi[self.neighbour(i, j, k, axis, true)]
                            + psi[self.neighbour(i, j, k, axis, false)];
                    }
                    let stencil = 6.0 * p - neighbours;
                    out[s] = (1.0 - t) * p + gamma * t * stencil + zeta * t * p * p * p;
                }
            }
        }
    }

    fn reference_mean(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim()])
    }
}
