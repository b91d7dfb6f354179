//! Seeding for every stochastic step of the pipeline.
//!
//! All randomness comes from ChaCha8 streams. A stream is keyed by the
//! master seed, a domain tag naming the consumer, and an index (sample
//! number, epoch number, stratum number), mixed through the SplitMix64
//! finalizer. Keying by index rather than by draw order makes results
//! independent of how the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags separating independent consumers of the same master seed.
pub mod stream {
    pub const INITIAL_CONDITIONS: u64 = 0x6963_5f73_616d_706c;
    pub const SPLIT: u64 = 0x7370_6c69_745f_7374;
    pub const SHUFFLE: u64 = 0x7368_7566_666c_6521;
    pub const INIT_WEIGHTS: u64 = 0x696e_6974_5f77_6774;
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sub_seed(master: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master) ^ domain) ^ index)
}

pub fn stream_rng(master: u64, domain: u64, index: u64) -> Rng {
    Rng::seed_from_u64(sub_seed(master, domain, index))
}
