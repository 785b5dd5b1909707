//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream keyed by a hash of
//! `(master seed, domain, indices...)`. A trial therefore sees the same
//! numbers no matter which worker runs it or in which order.

use rand::rngs::SmallRng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the streams of unrelated consumers of the same master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Channels = 1,
    Phase = 2,
    Receiver = 3,
    Trial = 4,
    Engine = 5,
    Drop = 6,
    Shadow = 7,
    Monte = 8,
    Experiment = 9,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed and a path of indices into a single 64-bit sub-seed.
pub fn derive_seed(master: u64, domain: Domain, indices: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ (domain as u64).wrapping_mul(GOLDEN));
    for &ix in indices {
        state = splitmix64(state ^ ix.wrapping_add(1).wrapping_mul(GOLDEN));
    }
    state
}

/// Independent generator for `(master, domain, indices)`.
pub fn stream_rng(master: u64, domain: Domain, indices: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(master, domain, indices);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Faster, lower-quality stream for the bulk Gaussian draws of the Monte
/// Carlo engine. Keyed the same way as [`stream_rng`].
pub fn fast_rng(master: u64, domain: Domain, indices: &[u64]) -> SmallRng {
    SmallRng::seed_from_u64(derive_seed(master, domain, indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let a: Vec<u64> = (0..8).map({
            let mut r = stream_rng(7, Domain::Trial, &[3, 1]);
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = stream_rng(7, Domain::Trial, &[3, 1]);
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn paths_are_separated() {
        let first = |m, d, ix: &[u64]| -> u64 { stream_rng(m, d, ix).random() };
        let base = first(7, Domain::Trial, &[3, 1]);
        assert_ne!(base, first(7, Domain::Trial, &[1, 3]));
        assert_ne!(base, first(7, Domain::Trial, &[3]));
        assert_ne!(base, first(7, Domain::Engine, &[3, 1]));
        assert_ne!(base, first(8, Domain::Trial, &[3, 1]));
    }
}
