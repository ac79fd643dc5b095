//! Counter-based uniform streams.
//!
//! A uniform is a pure function of `(seed, tag, replicate, generation, index)`.
//! No generator state is threaded between individuals, so processes of
//! different sizes that read "individual `j` of generation `n`" all see the
//! same number, and replicates can be evaluated in any order or in parallel.

use rand::RngCore;

/// Stream tags. Each stochastic consumer uses its own tag so no two
/// consumers ever share a key.
pub mod tag {
    pub const PATH_EXACT: u64 = 0x01;
    pub const PATH_FAST: u64 = 0x02;
    pub const COUPLED: u64 = 0x03;
    pub const COMPARISON: u64 = 0x04;
    pub const W_REFERENCE: u64 = 0x05;
    pub const W_BASELINE: u64 = 0x06;
    pub const BOOTSTRAP: u64 = 0x07;
    pub const W_CONTINUATION: u64 = 0x08;
    pub const THINNED: u64 = 0x09;
    pub const EXPERIMENT: u64 = 0x10;
    pub const META: u64 = 0x11;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a tag and an index.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let h = mix64(seed ^ 0xD134_2543_DE82_EF95);
    let h = mix64(h ^ tag.wrapping_mul(0xA076_1D64_78BD_642F));
    mix64(
        h ^ index
            .wrapping_mul(0xE703_7ED1_A0B4_28DB)
            .wrapping_add(GOLDEN),
    )
}

/// Map 64 random bits to a uniform on (0, 1]. Zero is excluded so the
/// quantile construction never returns an atom of probability zero.
#[inline]
pub fn unit_open_closed(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Key for one generation of one replicate of one consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    base: u64,
}

impl StreamKey {
    pub fn new(seed: u64, tag: u64, replicate: u64, generation: u64) -> Self {
        let h = derive_seed(seed, tag, replicate);
        let base = mix64(
            h ^ generation
                .wrapping_mul(0x8E9D_5A8F_6A09_E667)
                .wrapping_add(GOLDEN),
        );
        StreamKey { base }
    }

    /// The uniform assigned to individual `index`.
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        let bits = mix64(mix64(self.base ^ index.wrapping_mul(GOLDEN)) ^ self.base.rotate_left(29));
        unit_open_closed(bits)
    }

    /// A sequential generator for aggregate (per-generation) draws.
    pub fn rng(&self) -> CounterRng {
        CounterRng {
            key: self.base,
            counter: 0,
        }
    }
}

/// Counter-mode generator: output `i` is a hash of `(key, i)`.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn from_seed(seed: u64) -> Self {
        CounterRng {
            key: mix64(seed ^ GOLDEN),
            counter: 0,
        }
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.key ^ self.counter.wrapping_mul(GOLDEN)) ^ self.key.rotate_left(17))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
