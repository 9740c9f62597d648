//! Seeded synthetic activations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::ActivationTensor;

pub type SynthRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_token(rng: &mut SynthRng, hz: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..hz).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn normal_token(rng: &mut SynthRng, hz: usize, stddev: f64) -> Vec<f64> {
    (0..hz)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            stddev * z
        })
        .collect()
}

/// Gaussian inliers with `outliers` channels overwritten by values of
/// 10 to 50 standard deviations and random sign, at distinct random positions.
pub fn heavy_tailed_token(rng: &mut SynthRng, hz: usize, stddev: f64, outliers: usize) -> Vec<f64> {
    let mut t = normal_token(rng, hz, stddev);
    let positions = rand::seq::index::sample(rng, hz, outliers.min(hz));
    for p in positions.iter() {
        let mag = rng.gen_range(10.0..50.0) * stddev;
        t[p] = if rng.gen_bool(0.5) { mag } else { -mag };
    }
    t
}

/// A corpus of heavy-tailed tokens with a per-token random spread, so that
/// tokens differ in range the way pair activations do. The spread stays
/// below 2.5 so that 50-sigma outliers remain inside the Q8.8 outlier range.
pub fn heavy_tailed_corpus(seed: u64, count: usize, hz: usize, outliers: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let stddev = r.gen_range(0.25..2.5);
            heavy_tailed_token(&mut r, hz, stddev, outliers)
        })
        .collect()
}

pub fn normal_tensor(seed: u64, ns: usize, hz: usize, stddev: f64) -> ActivationTensor {
    let mut r = rng(seed);
    let data = normal_token(&mut r, ns * ns * hz, stddev);
    ActivationTensor::new(ns, hz, data).expect("dims match")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_shaped() {
        let a = heavy_tailed_corpus(5, 3, 128, 4);
        let b = heavy_tailed_corpus(5, 3, 128, 4);
        assert_eq!(a, b);
        for t in &a {
            assert_eq!(t.len(), 128);
        }
        let mut r = rng(1);
        let t = heavy_tailed_token(&mut r, 128, 1.0, 4);
        assert_eq!(t.iter().filter(|v| v.abs() >= 10.0).count(), 4);
    }
}
