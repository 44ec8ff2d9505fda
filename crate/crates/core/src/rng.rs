//! Splittable counter-based randomness.
//!
//! Every random decision in the crate is addressed, not drawn from shared
//! mutable state: a [`StreamKey`] identifies a logical stream (master seed
//! plus a chain of child tags) and `draw_at` hashes the stream id together
//! with a (sample, coordinate) address into one uniform word. Replications,
//! samples, and coordinates therefore produce the same values no matter how
//! work is scheduled across threads.
//!
//! For bulk sequential sampling (sketch entries, scenario generation) a
//! [`CounterRng`] wraps a stream as a `rand` generator.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const ADDR_SALT_I: u64 = 0xA076_1D64_78BD_642F;
const ADDR_SALT_J: u64 = 0xE703_7ED1_A0B4_28DB;

/// SplitMix64 finalizer (Stafford mix 13). Bijective on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifier for an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    /// Root stream for a master seed.
    pub fn new(master_seed: u64) -> Self {
        StreamKey(mix64(master_seed ^ GOLDEN))
    }

    /// Derive an independent child stream (domain separation by tag).
    pub fn child(self, tag: u64) -> Self {
        StreamKey(mix64(self.0 ^ tag.wrapping_mul(GOLDEN).rotate_left(23)))
    }

    /// Uniform word addressed by a two-dimensional index (sample, coordinate).
    #[inline]
    pub fn draw_at(self, i: u64, j: u64) -> u64 {
        let a = mix64(self.0 ^ i.wrapping_mul(ADDR_SALT_I));
        mix64(a ^ j.wrapping_mul(ADDR_SALT_J))
    }

    /// Uniform value in `[0, 1)` addressed by (sample, coordinate).
    #[inline]
    pub fn unit_at(self, i: u64, j: u64) -> f64 {
        u64_to_unit(self.draw_at(i, j))
    }

    /// Sequential generator over this stream.
    pub fn rng(self) -> CounterRng {
        CounterRng { state: self.0 }
    }

    /// Raw key value, used when a 64-bit fingerprint of the stream is needed.
    pub fn raw(self) -> u64 {
        self.0
    }
}

/// Map a uniform word to `[0, 1)` using the top 53 bits.
#[inline]
pub fn u64_to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential SplitMix64 generator seeded from a [`StreamKey`].
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = self.next_u64().to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Stream tags used across the crate. Kept in one place so that callers
/// composing pipelines (sketch then quantize) cannot collide streams.
pub mod tags {
    /// Dither decisions for predictor coordinates.
    pub const QUANT_X: u64 = 1;
    /// Dither decisions for squared predictor coordinates.
    pub const QUANT_XSQ: u64 = 2;
    /// Dither decision for the response.
    pub const QUANT_Y: u64 = 3;
    /// Second, independent dither pass over the predictors (paired scheme).
    pub const QUANT_X_PAIR: u64 = 4;
    /// Sketching matrix entries; combined with the row index.
    pub const SKETCH: u64 = 5;
    /// Scenario design matrix entries.
    pub const DESIGN: u64 = 6;
    /// Scenario noise vector.
    pub const NOISE: u64 = 7;
    /// Per-replication streams inside a study.
    pub const REPLICATION: u64 = 8;
}
