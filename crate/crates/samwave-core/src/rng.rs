//! Counter-based pseudo-random number generator.
//!
//! Every random draw in this crate (dataset synthesis, parameter init, batch
//! shuffling) comes from this generator so that a seed fully determines all
//! outputs, bit for bit, on every platform. The algorithm is SplitMix64
//! evaluated in counter mode: output k of stream `key` is
//!
//! ```text
//! mix(key .wrapping_add((k + 1) * 0x9E3779B97F4A7C15))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer. All arithmetic is on u64, so there
//! is no floating-point or platform dependence in the stream itself.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic stream of pseudo-random values identified by `(key, counter)`.
#[derive(Clone, Debug)]
pub struct Prng {
    key: u64,
    counter: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { key: seed, counter: 0 }
    }

    /// Independent substream; `tag` values must be distinct per call site.
    pub fn derive(&self, tag: u64) -> Prng {
        Prng {
            key: mix(self.key ^ mix(tag.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}
