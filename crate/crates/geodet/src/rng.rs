//! Portable deterministic random numbers.
//!
//! Everything in this crate that needs randomness draws from [`SplitMix64`],
//! a 64-bit integer-state generator defined by the recurrence
//!
//! ```text
//! state <- state + 0x9E3779B97F4A7C15   (wrapping)
//! z <- state
//! z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (wrapping)
//! z <- (z ^ (z >> 27)) * 0x94D049BB133111EB   (wrapping)
//! output = z ^ (z >> 31)
//! ```
//!
//! The sequence depends only on the seed and on integer arithmetic, so runs
//! are reproducible across platforms. Platform or thread-local entropy is
//! never used.

/// SplitMix64 generator. Small, fast, and fully specified by its seed.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)` built from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Uses a plain modulo; the bias is
    /// negligible for the small `n` used here and keeps the mapping trivial
    /// to reproduce in other languages.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn range_usize(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal via Box-Muller on two uniform draws.
    pub fn next_gaussian(&mut self) -> f64 {
        // Avoid ln(0) by nudging u1 away from zero.
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Derive an independent stream seed from a base seed and a stream label.
/// Used to give each pipeline component (scene generation, parameter init,
/// test case k, ...) its own generator while keeping a single user-facing
/// seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    SplitMix64::new(base ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)).next_u64()
}
