//! Deterministic pseudo-random streams.
//!
//! Every random decision in the crate is drawn from a stream derived from a
//! master seed plus a fixed list of counters (epoch, batch index, view index,
//! ...). Because streams are re-derivable from those integers alone, nothing
//! beyond the seed and the loop counters has to be persisted to reproduce or
//! resume a run exactly.
//!
//! Generator: xoshiro256++ seeded through splitmix64.

/// A seekable-by-derivation PRNG stream (xoshiro256++).
#[derive(Clone, Debug)]
pub struct Rng {
    state: [u64; 4],
    spare_normal: Option<f64>,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    /// Seed a stream directly from a 64-bit value.
    pub fn from_seed(seed: u64) -> Self {
        let mut s = seed;
        Rng {
            state: [
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
            ],
            spare_normal: None,
        }
    }

    /// Derive an independent stream from a master seed and a path of counters.
    ///
    /// Different paths give statistically independent streams; the same path
    /// always gives the same stream.
    pub fn derive(master: u64, path: &[u64]) -> Self {
        let mut s = master;
        let mut acc = splitmix64(&mut s);
        for &part in path {
            let mut mix = acc ^ part;
            acc = splitmix64(&mut mix);
        }
        Rng::from_seed(acc)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform f64 in [0, 1), 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in [-1, 1).
    #[inline]
    pub fn uniform_signed(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    /// Unbiased integer in [0, n). Rejection-sampled bitmask method.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let mask = u64::MAX >> (n - 1).leading_zeros().min(63);
        loop {
            let x = self.next_u64() & mask;
            if x < n {
                return x as usize;
            }
        }
    }

    /// Standard normal via Box-Muller; the paired deviate is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
