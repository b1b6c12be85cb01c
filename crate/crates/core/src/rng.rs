//! Counted random streams.
//!
//! Every chain pair owns a [`NoiseStream`]: a ChaCha8 block cipher keyed from
//! the run seed and positioned on its own stream id, so that replicate `i` of
//! a run sees the same variates no matter which thread executes it. Gaussian
//! variates come from the ziggurat sampler in `rand_distr`, and the stream
//! counts every Gaussian and uniform it hands out so that the noise budget of
//! a kernel can be audited.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Lane tags keep derived streams of different experiment stages disjoint.
pub mod lane {
    pub const REPLICATE: u64 = 0x5245_504c;
    pub const REPETITION: u64 = 0x5245_5054;
    pub const MEETING: u64 = 0x4d45_4554;
    pub const WEAK_ERROR: u64 = 0x5745_414b;
    pub const INCREMENT: u64 = 0x494e_4352;
    pub const SFS: u64 = 0x5346_5321;
    pub const DATA: u64 = 0x4441_5441;
    pub const REFERENCE: u64 = 0x5245_4652;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    gaussians: u64,
    uniforms: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self::derived(seed, 0, 0)
    }

    /// Stream for `index` within `lane` of the run keyed by `seed`.
    pub fn derived(seed: u64, lane: u64, index: u64) -> Self {
        let key = splitmix64(seed ^ splitmix64(lane));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        Self {
            rng,
            gaussians: 0,
            uniforms: 0,
        }
    }

    pub fn for_replicate(seed: u64, replicate: u64) -> Self {
        Self::derived(seed, lane::REPLICATE, replicate)
    }

    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        self.gaussians += 1;
        self.rng.sample(StandardNormal)
    }

    /// Fills `out` with independent `N(0, scale^2)` variates.
    pub fn fill_gaussian(&mut self, out: &mut [f64], scale: f64) {
        for o in out.iter_mut() {
            *o = scale * self.rng.sample::<f64, _>(StandardNormal);
        }
        self.gaussians += out.len() as u64;
    }

    /// Uniform on the half-open interval (0, 1], so that its log is finite.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.uniforms += 1;
        1.0 - self.rng.random::<f64>()
    }

    pub fn gaussian_count(&self) -> u64 {
        self.gaussians
    }

    pub fn uniform_count(&self) -> u64 {
        self.uniforms
    }
}
