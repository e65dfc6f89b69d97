//! Seedable PRNG for delay draws.
//!
//! SplitMix64 (Steele, Lea, Flood 2014): `state += 0x9E3779B97F4A7C15`,
//! output = variant of Murmur3 finalizer. Chosen for exact cross-platform
//! reproducibility of simulation results; the generator and the draw order
//! (per sample: sensor delay, then actuation delay) are part of the
//! documented output contract.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
