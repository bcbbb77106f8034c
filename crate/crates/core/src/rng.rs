//! Seeded random streams.
//!
//! Every trajectory is driven by one 64-bit seed. Each noise source reads
//! from its own ChaCha8 stream: the key is derived from the seed and the
//! stream id selects a disjoint keystream, so adding a source never shifts
//! the draws of an existing one. Ensemble member `i` uses seed
//! `master + i` (wrapping).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Plant noise `w`.
pub const STREAM_PLANT: u64 = 1;
/// Player 1 dither `v1`.
pub const STREAM_DITHER_1: u64 = 2;
/// Player 2 dither `v2`.
pub const STREAM_DITHER_2: u64 = 3;
/// Regularization draws `η_k`.
pub const STREAM_REGULARIZATION: u64 = 4;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn ensemble_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add(index as u64)
}

/// Increments of a standard Wiener process over steps of length `h`.
#[derive(Debug, Clone)]
pub struct WienerIncrements {
    rng: ChaCha8Rng,
    sqrt_h: f64,
}

impl WienerIncrements {
    pub fn new(rng: ChaCha8Rng, h: f64) -> Self {
        Self { rng, sqrt_h: h.sqrt() }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = self.sqrt_h * z;
        }
    }
}

/// The three Wiener sources of one trajectory.
#[derive(Debug, Clone)]
pub struct WienerStreams {
    pub w: WienerIncrements,
    pub v1: WienerIncrements,
    pub v2: WienerIncrements,
}

impl WienerStreams {
    pub fn new(seed: u64, h: f64) -> Self {
        Self {
            w: WienerIncrements::new(substream(seed, STREAM_PLANT), h),
            v1: WienerIncrements::new(substream(seed, STREAM_DITHER_1), h),
            v2: WienerIncrements::new(substream(seed, STREAM_DITHER_2), h),
        }
    }

    pub fn regularization_rng(seed: u64) -> ChaCha8Rng {
        substream(seed, STREAM_REGULARIZATION)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_have_step_variance() {
        let h = 0.01;
        let mut inc = WienerIncrements::new(substream(3, STREAM_PLANT), h);
        let mut buf = vec![0.0; 200_000];
        inc.fill(&mut buf);
        let n = buf.len() as f64;
        let mean = buf.iter().sum::<f64>() / n;
        let var = buf.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        // standard errors: sqrt(h/n) for the mean, h*sqrt(2/n) for the variance
        assert!(mean.abs() < 5.0 * (h / n).sqrt());
        assert!((var - h).abs() < 5.0 * h * (2.0 / n).sqrt());
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let mut a = WienerStreams::new(42, 0.01);
        let mut b = WienerStreams::new(42, 0.01);
        let (mut w, mut v1, mut w2) = ([0.0; 8], [0.0; 8], [0.0; 8]);
        a.w.fill(&mut w);
        a.v1.fill(&mut v1);
        b.w.fill(&mut w2);
        assert_eq!(w, w2);
        assert_ne!(w, v1);
    }

    #[test]
    fn streams_are_uncorrelated() {
        let mut s = WienerStreams::new(9, 1.0);
        let n = 100_000;
        let (mut w, mut v1, mut v2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        s.w.fill(&mut w);
        s.v1.fill(&mut v1);
        s.v2.fill(&mut v2);
        let corr = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        let bound = 5.0 / (n as f64).sqrt();
        assert!(corr(&w, &v1).abs() < bound);
        assert!(corr(&w, &v2).abs() < bound);
        assert!(corr(&v1, &v2).abs() < bound);
    }
}
