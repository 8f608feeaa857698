//! Random streams. Every stream is a SplitMix64 generator: state advances by
//! 0x9E3779B97F4A7C15 and each output is the standard SplitMix64 finalizer of the
//! state. Uniforms in [0,1) are `(next_u64 >> 11) * 2^-53`.

use rand::{Rng, SeedableRng};
pub use rand_xoshiro::SplitMix64;

pub type OdrsRng = SplitMix64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replica `r` of a run with base seed `base`.
pub fn mix(base: u64, r: u64) -> u64 {
    finalize(base ^ finalize(r.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng_from_seed(seed: u64) -> OdrsRng {
    SplitMix64::seed_from_u64(seed)
}

pub fn replica_rng(base: u64, r: u64) -> OdrsRng {
    rng_from_seed(mix(base, r))
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>()
}

/// Worker pool sized by `ODRS_THREADS` when set.
pub fn pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("ODRS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn splitmix_recurrence() {
        let mut rng = rng_from_seed(0);
        let mut state: u64 = 0;
        for _ in 0..5 {
            state = state.wrapping_add(GOLDEN);
            assert_eq!(rng.next_u64(), finalize(state));
        }
    }

    #[test]
    fn replica_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|r| mix(7, r)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let u = uniform(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
