//! Seed derivation and the generator type used by every random stream.
//!
//! A master seed fans out into independent sub-streams (per-agent estimator,
//! per-agent activation, network, initialization) so that changing one source
//! of randomness never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation randomness. ChaCha gives identical
/// output on every platform.
pub type SimRng = ChaCha8Rng;

/// Stream tags mixed into derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Trial = 1,
    Estimator = 2,
    Activation = 3,
    Network = 4,
    Init = 5,
    Objective = 6,
    ShareNetwork = 7,
    Probe = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a stream tag and an index into a child seed.
pub fn derive(parent: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(parent ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(a ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn derive_rng(parent: u64, stream: Stream, index: u64) -> SimRng {
    rng_from_seed(derive(parent, stream, index))
}
