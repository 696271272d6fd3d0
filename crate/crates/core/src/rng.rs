//! Portable random stream used for every seeded draw in the crate.
//!
//! SplitMix64 (Steele, Lea & Flood 2014): the state is a 64-bit counter
//! advanced by the golden-ratio increment `0x9E3779B97F4A7C15` and each output
//! is the counter passed through the finaliser below. Derived draws:
//!
//! * `next_f64`: `(next_u64() >> 11) · 2⁻⁵³`, uniform on `[0, 1)`.
//! * `uniform(lo, hi)`: `lo + (hi − lo) · next_f64()`.
//! * `normal()`: Box–Muller cosine branch, one normal per two uniforms,
//!   `√(−2 ln(1 − u₁)) · cos(2π u₂)`; the sine branch is discarded.
//!
//! Any implementation that follows these rules reproduces the same streams.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
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
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Independent stream for a sub-task, derived from this seed and a tag.
    pub fn fork(seed: u64, tag: u64) -> Self {
        let mut mix = Self::new(seed ^ tag.wrapping_mul(GOLDEN_GAMMA));
        Self::new(mix.next_u64())
    }
}
