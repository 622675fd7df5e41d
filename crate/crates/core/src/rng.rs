//! Per-path normal streams keyed by `(seed, path, step)`.
//!
//! Each path owns a ChaCha8 stream selected by its index; step `s` always
//! consumes 64-bit words `2s` and `2s + 1` and turns them into one Box–Muller
//! pair. Draws therefore depend only on the key, never on which worker
//! simulated the path or how many paths ran before it.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WORDS_PER_STEP: u128 = 4; // in 32-bit units, as ChaCha counts them

#[derive(Debug, Clone)]
pub struct NormalPairs {
    rng: ChaCha8Rng,
}

impl NormalPairs {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self { rng }
    }

    /// Repositions the stream at the start of `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(u128::from(step) * WORDS_PER_STEP);
    }

    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Two independent standard normals.
    pub fn next_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.unit(); // (0, 1]
        let u2 = self.unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (radius * theta.cos(), radius * theta.sin())
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
