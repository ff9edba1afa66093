//! Seed derivation and the SplitMix64 generator.
//!
//! Every random decision in the crate is made by a [`SplitMix64`] stream
//! seeded from [`derive_seed`], so a single augmented caption can be
//! recomputed from `(global_seed, step, caption_index)` alone.
//!
//! `mix64` is the SplitMix64 output finalizer (Stafford variant 13):
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z ^ (z >> 31)
//! ```
//!
//! and `derive_seed(g, step, idx) = mix64(mix64(g ^ mix64(step ^ STEP_SALT)) + idx * GAMMA)`
//! with wrapping arithmetic. For a fixed `(g, step)` the map from `idx` is a
//! bijection, and so is the map from `g` for a fixed `(step, idx)`.

/// Golden-ratio increment of SplitMix64.
pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STEP_SALT: u64 = 0x5EED_0F5E_ED5A_17ED;
const EPOCH_SALT: u64 = 0xE90C_4B1E_55ED_0001;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the draws of one `(step, caption)` cell.
#[inline]
pub fn derive_seed(global_seed: u64, step: u64, caption_index: u64) -> u64 {
    let step_key = mix64(global_seed ^ mix64(step ^ STEP_SALT));
    mix64(step_key.wrapping_add(caption_index.wrapping_mul(GAMMA)))
}

/// Seed for the caption permutation of one epoch.
#[inline]
pub fn epoch_seed(global_seed: u64, epoch: u64) -> u64 {
    mix64(mix64(global_seed ^ EPOCH_SALT).wrapping_add(epoch.wrapping_mul(GAMMA)))
}

/// SplitMix64: the state advances by [`GAMMA`] and each output is `mix64(state)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub const fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// True with probability `p`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform in `[0, n)` by Lemire's widening multiply with rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Standard normal variate by the Box–Muller transform.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }
}
