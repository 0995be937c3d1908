//! Keyed, stateless randomness shared by every simulated worker.
//!
//! Every draw is a pure function of `(seed, round, key, lane)` evaluated with
//! the Philox4x32-10 counter-based generator, so workers agree on shared
//! randomness (permutations for correlated rounding) without communicating and
//! fused kernels may consume draws in any order.
//!
//! Counter layout (four 32-bit words):
//!
//! | word | contents                          |
//! |------|-----------------------------------|
//! | 0    | entry index                       |
//! | 1    | super-group index                 |
//! | 2    | chunk index                       |
//! | 3    | purpose tag (8 bits) + lane (24)  |
//!
//! The lane carries the hop slot for quantization draws and the block index
//! for permutation draws. Tags occupy disjoint high bytes, so purposes never
//! share a counter.

use crate::error::{Error, Result};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

const LANE_BITS: u32 = 24;
const LANE_MASK: u32 = (1 << LANE_BITS) - 1;

/// Largest permutation length `permutation_at` supports (two draws per block).
pub const MAX_PERMUTATION_LEN: usize = 2 << LANE_BITS;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with ten rounds.
#[inline]
pub fn philox4x32(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        if round < 9 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
    }
    c
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Job-wide seed plus round counter, identical on all workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SharedSeed {
    pub seed: u64,
    pub round: u64,
}

impl SharedSeed {
    pub fn new(seed: u64, round: u64) -> Self {
        Self { seed, round }
    }

    fn philox_key(&self) -> [u32; 2] {
        let k = splitmix64(self.seed ^ splitmix64(self.round));
        [k as u32, (k >> 32) as u32]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    EntryQuant = 1,
    ScaleQuant = 2,
    Permutation = 3,
    Shuffle = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomKey {
    pub purpose: Purpose,
    pub chunk: u32,
    pub super_group: u32,
    pub entry: u32,
}

impl RandomKey {
    pub fn new(purpose: Purpose, chunk: u32, super_group: u32, entry: u32) -> Self {
        Self {
            purpose,
            chunk,
            super_group,
            entry,
        }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    #[inline]
    fn counter(&self, lane: u32) -> [u32; 4] {
        debug_assert!(lane <= LANE_MASK);
        [
            self.entry,
            self.super_group,
            self.chunk,
            ((self.purpose as u32) << LANE_BITS) | (lane & LANE_MASK),
        ]
    }
}

#[inline]
fn block(seed: &SharedSeed, key: &RandomKey, lane: u32) -> [u32; 4] {
    philox4x32(key.counter(lane), seed.philox_key())
}

#[inline]
fn to_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((hi as u64) << 32 | lo as u64) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[0, 1)` for `key` at lane 0.
pub fn uniform_at(seed: SharedSeed, key: RandomKey) -> f64 {
    uniform_lane(&seed, &key, 0)
}

/// Uniform draw in `[0, 1)` for `key` at the given lane (hop slot).
#[inline]
pub fn uniform_lane(seed: &SharedSeed, key: &RandomKey, lane: u32) -> f64 {
    let w = block(seed, key, lane);
    to_unit(w[0], w[1])
}

/// Uniformly random permutation of `0..n`, identical for identical inputs.
pub fn permutation_at(seed: SharedSeed, key: RandomKey, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("permutation length must be positive".into()));
    }
    if n > MAX_PERMUTATION_LEN {
        return Err(Error::InvalidArgument(format!(
            "permutation length {n} exceeds {MAX_PERMUTATION_LEN}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    fill_permutation(&seed, &key, &mut perm);
    Ok(perm)
}

/// Fisher-Yates over `perm` (which must start as the identity) driven by
/// keyed draws; each Philox block yields two 64-bit words.
pub(crate) fn fill_permutation<T: Copy>(seed: &SharedSeed, key: &RandomKey, perm: &mut [T]) {
    let n = perm.len();
    let pkey = seed.philox_key();
    let mut words = [0u64; 2];
    for (step, i) in (1..n).rev().enumerate() {
        if step % 2 == 0 {
            let w = philox4x32(key.counter((step / 2) as u32), pkey);
            words = [(w[0] as u64) << 32 | w[1] as u64, (w[2] as u64) << 32 | w[3] as u64];
        }
        let r = words[step % 2];
        // multiply-shift range reduction; bias is below 2^-40 for n <= 2^25
        let j = ((r as u128 * (i as u128 + 1)) >> 64) as usize;
        perm.swap(i, j);
    }
}

/// Position `slot` of the shared permutation, without allocating for small `n`.
#[inline]
pub(crate) fn permuted_slot(seed: &SharedSeed, key: &RandomKey, slot: usize, n: usize) -> usize {
    if n <= 64 {
        let mut buf = [0u8; 64];
        for (i, b) in buf.iter_mut().enumerate().take(n) {
            *b = i as u8;
        }
        fill_permutation(seed, key, &mut buf[..n]);
        buf[slot] as usize
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        fill_permutation(seed, key, &mut perm);
        perm[slot]
    }
}

/// Correlated rounding variable `(pi[slot] + gamma[slot]) / n`.
///
/// `pi` is the shared permutation drawn under the permutation tag of `key`;
/// `gamma[slot]` is drawn under the entry-quantization tag at lane `slot`.
/// For a fixed key the `n` slots land in distinct intervals `[k/n, (k+1)/n)`.
pub fn correlated_uniform(seed: SharedSeed, key: RandomKey, slot: usize, n: usize) -> Result<f64> {
    if n == 0 || slot >= n {
        return Err(Error::InvalidArgument(format!("slot {slot} out of range for n = {n}")));
    }
    if n > LANE_MASK as usize {
        return Err(Error::InvalidArgument(format!("n = {n} exceeds the lane space")));
    }
    Ok(correlated_unchecked(&seed, &key, slot, n))
}

#[inline]
pub(crate) fn correlated_unchecked(seed: &SharedSeed, key: &RandomKey, slot: usize, n: usize) -> f64 {
    let gamma = uniform_lane(seed, &key.with_purpose(Purpose::EntryQuant), slot as u32);
    if n == 1 {
        return gamma;
    }
    let pi = permuted_slot(seed, &key.with_purpose(Purpose::Permutation), slot, n);
    let u = (pi as f64 + gamma) / n as f64;
    // (pi + gamma) / n can round up to the next interval boundary; keep it inside
    let upper = (pi + 1) as f64 / n as f64;
    if u >= upper {
        f64::from_bits(upper.to_bits() - 1)
    } else {
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_uniform(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = x - i as f64 / n;
                let hi = (i + 1) as f64 / n - x;
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn philox_known_answers() {
        // Random123 known-answer vectors for philox4x32-10
        assert_eq!(
            philox4x32([0; 4], [0; 2]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn uniform_is_deterministic_and_tag_separated() {
        let seed = SharedSeed::new(7, 3);
        let key = RandomKey::new(Purpose::EntryQuant, 1, 2, 3);
        assert_eq!(uniform_at(seed, key), uniform_at(seed, key));
        assert_ne!(
            uniform_at(seed, key),
            uniform_at(seed, key.with_purpose(Purpose::ScaleQuant))
        );
        assert_ne!(uniform_at(seed, key), uniform_at(SharedSeed::new(7, 4), key));
    }

    #[test]
    fn uniform_passes_ks() {
        let seed = SharedSeed::new(42, 0);
        let xs: Vec<f64> = (0..1_000_000u32)
            .map(|i| {
                let u = uniform_at(seed, RandomKey::new(Purpose::EntryQuant, i >> 16, i & 0xff, i));
                assert!((0.0..1.0).contains(&u));
                u
            })
            .collect();
        let d = ks_uniform(xs);
        assert!(d < 0.01, "KS statistic {d}");
    }

    #[test]
    fn permutation_examples() {
        let seed = SharedSeed::new(1, 0);
        let key = RandomKey::new(Purpose::Permutation, 0, 0, 0);
        assert_eq!(permutation_at(seed, key, 1).unwrap(), vec![0]);
        assert!(permutation_at(seed, key, 0).is_err());
        let a = permutation_at(seed, key, 50).unwrap();
        let b = permutation_at(seed, key, 50).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn two_element_permutations_are_balanced() {
        let seed = SharedSeed::new(9, 0);
        let swapped = (0..10_000u32)
            .filter(|&i| {
                let p = permutation_at(seed, RandomKey::new(Purpose::Permutation, 0, 0, i), 2).unwrap();
                p == [1, 0]
            })
            .count();
        // binomial(10^4, 1/2): 4 sigma is 200, the stated band is 300
        assert!((4700..=5300).contains(&swapped), "{swapped}");
    }

    #[test]
    fn permutation_positions_are_uniform() {
        let seed = SharedSeed::new(5, 0);
        let n = 5;
        let mut counts = vec![vec![0u32; n]; n];
        let trials = 50_000u32;
        for i in 0..trials {
            let p = permutation_at(seed, RandomKey::new(Purpose::Permutation, 0, 1, i), n).unwrap();
            for (pos, &v) in p.iter().enumerate() {
                counts[pos][v] += 1;
            }
        }
        let expect = trials as f64 / n as f64;
        let sd = (trials as f64 * 0.2 * 0.8).sqrt();
        for row in &counts {
            for &c in row {
                assert!((c as f64 - expect).abs() < 5.0 * sd, "{counts:?}");
            }
        }
    }

    #[test]
    fn correlated_examples() {
        let seed = SharedSeed::new(3, 1);
        let key = RandomKey::new(Purpose::EntryQuant, 0, 4, 9);
        let g = uniform_lane(&seed, &key, 0);
        assert_eq!(correlated_uniform(seed, key, 0, 1).unwrap(), g);
        assert!(correlated_uniform(seed, key, 4, 4).is_err());
        assert!(correlated_uniform(seed, key, 0, 0).is_err());
        for e in 0..100 {
            let key = RandomKey::new(Purpose::EntryQuant, 0, 0, e);
            let below = (0..2)
                .filter(|&s| correlated_uniform(seed, key, s, 2).unwrap() < 0.5)
                .count();
            assert_eq!(below, 1);
        }
    }

    #[test]
    fn correlated_slots_partition_unit_interval() {
        let seed = SharedSeed::new(11, 0);
        for n in 2..=64usize {
            for e in 0..1000u32 {
                let key = RandomKey::new(Purpose::EntryQuant, 3, n as u32, e);
                let mut seen = vec![false; n];
                for slot in 0..n {
                    let u = correlated_uniform(seed, key, slot, n).unwrap();
                    let k = (u * n as f64).floor() as usize;
                    assert!(u >= k as f64 / n as f64 && u < (k + 1) as f64 / n as f64);
                    assert!(!seen[k], "n={n} e={e}");
                    seen[k] = true;
                }
            }
        }
    }

    #[test]
    fn correlated_marginals_are_uniform() {
        let seed = SharedSeed::new(13, 0);
        for (slot, n) in [(0usize, 2usize), (3, 4), (7, 8)] {
            let xs: Vec<f64> = (0..100_000u32)
                .map(|e| {
                    correlated_uniform(seed, RandomKey::new(Purpose::EntryQuant, 0, 0, e), slot, n)
                        .unwrap()
                })
                .collect();
            let d = ks_uniform(xs);
            // 1.63 / sqrt(1e5) is the 1% critical value
            assert!(d < 0.0052, "slot {slot}/{n}: KS {d}");
        }
    }
}
