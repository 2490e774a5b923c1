//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator. A stream is
//! identified by a 64-bit seed and a 64-bit stream id (ChaCha's nonce), so
//! independent consumers never share state and results are identical on every
//! platform. Child seeds are derived with the SplitMix64 finalizer:
//!
//! ```text
//! derive_seed(master, index) = splitmix64(master ^ splitmix64(index + GOLDEN))
//! ```
//!
//! which lets an ensemble grow member by member without replaying earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream ids used inside one posterior sample.
pub mod streams {
    pub const BOOSTING: u64 = 0;
    pub const PRIOR: u64 = 1;
    pub const LABEL_NOISE: u64 = 2;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(GOLDEN)))
}

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw from the open interval (0, 1).
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
