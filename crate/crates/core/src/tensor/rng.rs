//! Deterministic pseudo-random numbers.
//!
//! The generator is xoshiro256** (Blackman & Vigna). Its 256-bit state is
//! filled by four successive outputs of splitmix64 started at the user seed:
//!
//! ```text
//! splitmix64(state):
//!     state += 0x9E3779B97F4A7C15
//!     z = state
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     return z ^ (z >> 31)
//! ```
//!
//! Derived quantities:
//! - `next_f64` = `(next_u64 >> 11) * 2^-53`, uniform in `[0, 1)`.
//! - `uniform(lo, hi)` = `lo + (hi - lo) * next_f64`.
//! - `normal()` uses Box-Muller on two `next_f64` draws (`u1` is mapped to
//!   `1 - u1` so the logarithm never sees zero) and returns the cosine branch.
//! - `below(n)` = `next_u64 % n` (modulo bias is negligible for the small `n` used here).
//!
//! Streams for sub-units (subjects, prompts) are obtained with
//! [`Rng::derive`], which seeds a fresh generator from
//! `splitmix64(seed + (index + 1) * 0x9E3779B97F4A7C15)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a hash, used to turn prompt text into a seed.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    /// Independent stream for sub-unit `index` under `seed`.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut st = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN));
        Rng::new(splitmix64(&mut st))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
