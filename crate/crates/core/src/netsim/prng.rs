//! splitmix64, bit-exact. Every simulator and tester random choice is drawn
//! from this generator so that equal seeds give byte-identical traces.

use serde::{Deserialize, Serialize};

use super::SimError;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub const fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    pub const fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
        z ^ (z >> 31)
    }

    /// `next_u64() % n`. Modulo bias is accepted; exactly one draw is consumed.
    pub fn below(&mut self, n: u64) -> Result<u64, SimError> {
        if n == 0 {
            return Err(SimError::EmptyRange);
        }
        Ok(self.next_u64() % n)
    }

    /// Uniform in `[lo, hi]` inclusive. The full `u64` range is served by a
    /// raw draw since `hi - lo + 1` would overflow.
    pub fn in_range(&mut self, lo: u64, hi: u64) -> Result<u64, SimError> {
        if lo > hi {
            return Err(SimError::EmptyRange);
        }
        match (hi - lo).checked_add(1) {
            Some(span) => Ok(lo + self.below(span)?),
            None => Ok(self.next_u64()),
        }
    }

    /// Unit draw `u = (x >> 11) * 2^-53`; hit iff `u < rate`. One draw is
    /// consumed even for rate 0 or 1.
    pub fn bernoulli(&mut self, rate: f64) -> bool {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u < rate
    }
}

/// Stateless splitmix64 finalizer, for deriving independent sub-seeds.
pub fn mix64(x: u64) -> u64 {
    Prng::new(x).next_u64()
}
