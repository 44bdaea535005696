//! Counter-based random number generation with one stream per path.
//!
//! Each stream is a Weyl sequence through a strong 64-bit finalizer
//! (SplitMix64 construction), keyed by `(seed, stream)`. Draws depend only on
//! the key and the counter, so path `i` produces identical increments no
//! matter which worker thread runs it or in what order paths are scheduled.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream of uniforms, normals and Poisson counts.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    /// Stream derived from a run seed and a stream index (usually the path
    /// index). Distinct `(seed, stream)` pairs give decorrelated streams.
    pub fn from_seed_and_stream(seed: u64, stream: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN_GAMMA).wrapping_add(stream.wrapping_mul(GOLDEN_GAMMA)));
        CounterRng { key, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.key
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in (0, 1]; never returns 0 so it is safe under `ln`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        let bits = self.next_u64() >> 11;
        (bits as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw via Box–Muller (cosine branch).
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Poisson count by sequential inversion; intended for small means
    /// (per-step jump counts), with a hard cap as a safety valve.
    pub fn next_poisson(&mut self, mean: f64) -> u32 {
        debug_assert!(mean >= 0.0 && mean.is_finite());
        if mean <= 0.0 {
            return 0;
        }
        let u = self.next_f64();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u > cdf && k < 10_000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    }
}
