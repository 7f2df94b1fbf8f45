//! Counter-based random streams.
//!
//! Every path owns a ChaCha8 stream addressed by `(master seed, path index, lane)`,
//! so results do not depend on how paths are spread over workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes a single path may draw randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Base = 0,
    Refine = 1,
    Jumps = 2,
    Fill = 3,
    Extra = 4,
}

const LANES: u64 = 8;

/// Master seed newtype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    pub fn stream(self, index: u64, lane: Lane) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index.wrapping_mul(LANES).wrapping_add(lane as u64));
        rng
    }

    /// A seed for an independent sub-experiment.
    pub fn derive(self, tag: u64) -> Seed {
        // splitmix64 finaliser
        let mut z = self.0 ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}
