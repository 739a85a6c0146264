//! Counter-based random streams.
//!
//! Output `i` of stream `(seed, index)` is a pure function of the triple, so a
//! path simulated on any worker sees the same numbers as in a serial run.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix-style generator whose state is an explicit counter under a key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    /// Stream keyed by a run seed and a path (or worker) index.
    pub fn new(seed: u64, index: u64) -> Self {
        let key = mix64(mix64(seed ^ 0x5851_F42D_4C95_7F2D) ^ mix64(index.wrapping_add(GOLDEN)));
        Self { key, counter: 0 }
    }

    /// Value at an arbitrary position without advancing the stream.
    #[inline]
    pub fn at(&self, position: u64) -> u64 {
        mix64(self.key.wrapping_add(position.wrapping_mul(GOLDEN)))
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn position(&self) -> u64 {
        self.counter
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
