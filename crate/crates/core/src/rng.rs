//! Seeded, splittable random streams.
//!
//! Every consumer draws from its own ChaCha stream addressed by
//! `(seed, purpose, index)`, so results do not depend on the order in
//! which parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a stream is used for; keeps streams of different consumers apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Augment = 2,
    Selector = 3,
    Split = 4,
    Synth = 5,
    Shuffle = 6,
    Test = 7,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ (index & 0x00ff_ffff_ffff_ffff));
    rng
}
