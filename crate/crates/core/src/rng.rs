//! Portable, counter-based random numbers.
//!
//! Every random draw in the crate goes through [`PortableRng`], a SplitMix64
//! generator: the state advances by the golden-ratio increment
//! `0x9E3779B97F4A7C15` and each output is the state passed through the
//! `mix64` finalizer (multipliers `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`,
//! shifts 30/27/31). The same constants are trivial to port, so a run is
//! bit-identical across platforms and languages.
//!
//! Independent substreams are keyed by `(experiment seed, module tag, index)`
//! through [`PortableRng::derive`]: the tag is hashed with 64-bit FNV-1a and
//! the three words are folded with `mix64`. Adding a new tag never perturbs
//! draws made under existing tags.

use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// Module tags for substream derivation.
pub mod tags {
    pub const SUPPORT: &str = "support";
    pub const PHASE: &str = "phase";
    pub const ESTIMATOR: &str = "estimator";
    pub const ROUNDING: &str = "rounding";
    pub const PLAYER: &str = "player";
    pub const GADGET: &str = "gadget";
    pub const FP_CHUNK: &str = "fp-chunk";
    pub const SKETCH_HASH: &str = "sketch-hash";
}

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortableRng {
    state: u64,
}

impl PortableRng {
    pub fn from_state(state: u64) -> Self {
        PortableRng { state }
    }

    pub fn derive(seed: u64, tag: &str, index: u64) -> Self {
        let keyed = mix64(seed ^ fnv1a64(tag.as_bytes()));
        let state = mix64(keyed ^ mix64(index.wrapping_add(GOLDEN_GAMMA)));
        PortableRng { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Unbiased integer in `[0, n)` (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform `m`-subset of `[0, n)` in draw order (sparse partial Fisher-Yates).
    pub fn sample_without_replacement(&mut self, n: u64, m: usize) -> Vec<u64> {
        assert!(m as u64 <= n, "cannot draw {m} of {n}");
        let mut swapped = std::collections::HashMap::with_capacity(2 * m);
        let mut out = Vec::with_capacity(m);
        for i in 0..m as u64 {
            let j = i + self.below(n - i);
            let at_j = *swapped.get(&j).unwrap_or(&j);
            let at_i = *swapped.get(&i).unwrap_or(&i);
            swapped.insert(j, at_i);
            out.push(at_j);
        }
        out
    }

    /// Uniform `m`-subset of `items`, returned sorted.
    pub fn choose_sorted<T: Copy + Ord>(&mut self, items: &[T], m: usize) -> Vec<T> {
        let mut picked: Vec<T> = self
            .sample_without_replacement(items.len() as u64, m)
            .into_iter()
            .map(|i| items[i as usize])
            .collect();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // SplitMix64 seeded with 0, first outputs of the reference C implementation.
        let mut rng = PortableRng::from_state(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn derived_streams_are_distinct_and_stable() {
        let a = PortableRng::derive(7, tags::PHASE, 0);
        let b = PortableRng::derive(7, tags::PHASE, 1);
        let c = PortableRng::derive(7, tags::ROUNDING, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, PortableRng::derive(7, tags::PHASE, 0));
    }

    #[test]
    fn below_is_in_range_and_roughly_uniform() {
        let mut rng = PortableRng::from_state(3);
        let mut hist = [0u32; 7];
        for _ in 0..70_000 {
            hist[rng.below(7) as usize] += 1;
        }
        for h in hist {
            assert!((9_400..10_600).contains(&h), "{hist:?}");
        }
    }

    #[test]
    fn sampling_without_replacement_is_distinct() {
        let mut rng = PortableRng::from_state(11);
        let mut s = rng.sample_without_replacement(1000, 300);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 300);
        assert!(s.iter().all(|&x| x < 1000));
    }

    #[test]
    fn uniform_open_never_hits_endpoints() {
        let mut rng = PortableRng::from_state(u64::MAX);
        for _ in 0..10_000 {
            let u = rng.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
