//! Quantization value sets.
//!
//! A codebook holds `2^(b-1)` non-negative magnitudes in `[0, 1]`; the sign
//! travels in its own bit. Non-uniform codebooks follow the exponential
//! spacing
//!
//! ```text
//! f(eps, r) = ((1 + 2 eps^2)^r - 1) / ((1 + 2 eps^2)^(2^(b-1) - 1) - 1)
//! ```
//!
//! which degenerates to uniform spacing as `eps -> 0`. Values are evaluated in
//! `f64` and stored as `f32`, the precision all quantization arithmetic runs in.

use crate::error::{Error, Result};

/// Widths that carry a codebook. Width 16 is a raw binary16 passthrough.
pub const CODEBOOK_WIDTHS: [u32; 3] = [2, 4, 8];

/// Per-width curvature defaults, picked by a grid search over
/// `{0.05, 0.10, ..., 2.00}` minimising the per-group vNMSE of stochastically
/// quantizing 10^6 standard-normal groups of 16 entries, each normalized by its
/// max magnitude. Regenerate with `cargo run --release --example epsilon_grid`.
///
/// The 2-bit codebook is `{0, 1}` for every epsilon, so its grid is flat and the
/// first grid point is kept. The 8-bit optimum sits on the low edge of the grid.
const DEFAULT_EPSILON_2: f64 = 0.05;
const DEFAULT_EPSILON_4: f64 = 0.25;
const DEFAULT_EPSILON_8: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    bitwidth: u32,
    epsilon: f64,
    uniform: bool,
    values: Vec<f32>,
}

fn check_bitwidth(bitwidth: u32) -> Result<()> {
    if CODEBOOK_WIDTHS.contains(&bitwidth) {
        Ok(())
    } else {
        Err(Error::UnsupportedBitwidth(bitwidth))
    }
}

/// Number of magnitude levels for a width: one bit is spent on the sign.
pub fn levels(bitwidth: u32) -> usize {
    1usize << (bitwidth - 1)
}

/// Evaluates `f(eps, r)` for a `bitwidth`-bit codebook in double precision.
pub fn spacing(bitwidth: u32, epsilon: f64, r: usize) -> f64 {
    let last = levels(bitwidth) - 1;
    if r == 0 {
        return 0.0;
    }
    if r == last {
        return 1.0;
    }
    let base = 1.0 + 2.0 * epsilon * epsilon;
    // ln_1p keeps precision when eps is tiny and base is close to one.
    let log_base = (2.0 * epsilon * epsilon).ln_1p();
    let num = (r as f64 * log_base).exp_m1();
    let den = (last as f64 * log_base).exp_m1();
    debug_assert!(base > 1.0);
    num / den
}

impl Codebook {
    pub fn new(bitwidth: u32, epsilon: f64) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        let values: Vec<f32> = (0..levels(bitwidth))
            .map(|r| spacing(bitwidth, epsilon, r) as f32)
            .collect();
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::DegenerateCodebook { bitwidth, epsilon });
        }
        Ok(Self {
            bitwidth,
            epsilon,
            uniform: false,
            values,
        })
    }

    pub fn uniform(bitwidth: u32) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        let last = (levels(bitwidth) - 1) as f64;
        let values = (0..levels(bitwidth))
            .map(|r| (r as f64 / last) as f32)
            .collect();
        Ok(Self {
            bitwidth,
            epsilon: 0.0,
            uniform: true,
            values,
        })
    }

    /// Non-uniform codebook at the per-width default curvature.
    pub fn with_default_epsilon(bitwidth: u32) -> Result<Self> {
        Self::new(bitwidth, default_epsilon(bitwidth)?)
    }

    pub fn bitwidth(&self) -> u32 {
        self.bitwidth
    }

    /// Curvature; `0.0` for uniform codebooks.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_index(&self) -> usize {
        self.values.len() - 1
    }

    /// Indices of the two codebook values surrounding `v`.
    ///
    /// Returns `(i, i)` on an exact hit and `(i, i + 1)` otherwise.
    pub fn bracket(&self, v: f32) -> Result<(usize, usize)> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfUnitRange(v as f64));
        }
        Ok(self.bracket_unchecked(v))
    }

    #[inline]
    pub(crate) fn bracket_unchecked(&self, v: f32) -> (usize, usize) {
        // number of values <= v; at least one since values[0] == 0 <= v
        let above = self.values.partition_point(|&q| q <= v);
        let lo = above - 1;
        if self.values[lo] == v {
            (lo, lo)
        } else {
            (lo, lo + 1)
        }
    }
}

pub fn default_epsilon(bitwidth: u32) -> Result<f64> {
    match bitwidth {
        2 => Ok(DEFAULT_EPSILON_2),
        4 => Ok(DEFAULT_EPSILON_4),
        8 => Ok(DEFAULT_EPSILON_8),
        other => Err(Error::UnsupportedBitwidth(other)),
    }
}

/// The codebooks for widths 2, 4 and 8, shared by every hop of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    books: [Codebook; 3],
}

impl CodebookSet {
    pub fn non_uniform() -> Result<Self> {
        Ok(Self {
            books: [
                Codebook::with_default_epsilon(2)?,
                Codebook::with_default_epsilon(4)?,
                Codebook::with_default_epsilon(8)?,
            ],
        })
    }

    pub fn uniform() -> Result<Self> {
        Ok(Self {
            books: [
                Codebook::uniform(2)?,
                Codebook::uniform(4)?,
                Codebook::uniform(8)?,
            ],
        })
    }

    pub fn from_books(books: [Codebook; 3]) -> Result<Self> {
        for (book, w) in books.iter().zip(CODEBOOK_WIDTHS) {
            if book.bitwidth() != w {
                return Err(Error::UnsupportedBitwidth(book.bitwidth()));
            }
        }
        Ok(Self { books })
    }

    pub fn get(&self, bitwidth: u32) -> Option<&Codebook> {
        match bitwidth {
            2 => Some(&self.books[0]),
            4 => Some(&self.books[1]),
            8 => Some(&self.books[2]),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let cb = Codebook::new(4, 0.5).unwrap();
        assert_eq!(cb.values()[0], 0.0);
        assert_eq!(cb.values()[7], 1.0);
        assert_eq!(cb.len(), 8);
    }

    #[test]
    fn tiny_epsilon_approaches_uniform() {
        let cb = Codebook::new(2, 1e-6).unwrap();
        assert_eq!(cb.values(), &[0.0, 1.0]);
        // the 2-bit book has no interior point; check a 4-bit book against r/7
        let cb = Codebook::new(4, 1e-6).unwrap();
        for (r, &v) in cb.values().iter().enumerate() {
            let exact = spacing(4, 1e-6, r);
            assert!((exact - r as f64 / 7.0).abs() < 1e-9, "r={r}");
            assert!((v as f64 - r as f64 / 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_values() {
        assert_eq!(Codebook::uniform(2).unwrap().values(), &[0.0, 1.0]);
        let cb = Codebook::uniform(4).unwrap();
        assert!(cb.is_uniform());
        for (r, &v) in cb.values().iter().enumerate() {
            assert_eq!(v, (r as f64 / 7.0) as f32);
        }
    }

    #[test]
    fn signed_uniform_example_mse() {
        // X = {-1, 1/2, 1} on the signed uniform grid {-1, 0, 1}: magnitudes on {0, 1}.
        let cb = Codebook::uniform(2).unwrap();
        let mut mse = 0.0f64;
        for x in [-1.0f32, 0.5, 1.0] {
            let (lo, hi) = cb.bracket(x.abs()).unwrap();
            if lo != hi {
                let (a, b) = (cb.values()[lo] as f64, cb.values()[hi] as f64);
                let v = x.abs() as f64;
                mse += (b - v) * (v - a);
            }
        }
        assert_eq!(mse, 0.25);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(Codebook::new(3, 0.5), Err(Error::UnsupportedBitwidth(3)));
        assert_eq!(Codebook::new(16, 0.5), Err(Error::UnsupportedBitwidth(16)));
        assert_eq!(Codebook::new(4, 0.0), Err(Error::InvalidEpsilon(0.0)));
        assert_eq!(Codebook::new(4, -1.0), Err(Error::InvalidEpsilon(-1.0)));
        assert!(Codebook::uniform(1).is_err());
        assert!(default_epsilon(16).is_err());
        assert!(matches!(
            Codebook::new(8, 5.0),
            Err(Error::DegenerateCodebook { .. })
        ));
    }

    #[test]
    fn bracket_examples() {
        let u2 = Codebook::uniform(2).unwrap();
        assert_eq!(u2.bracket(0.3).unwrap(), (0, 1));
        assert_eq!(u2.bracket(0.0).unwrap(), (0, 0));
        assert_eq!(u2.bracket(1.0).unwrap(), (1, 1));
        let u4 = Codebook::uniform(4).unwrap();
        assert_eq!(u4.bracket((3.0f64 / 7.0) as f32).unwrap(), (3, 3));
        let nu = Codebook::new(8, 0.3).unwrap();
        assert_eq!(nu.bracket(0.0).unwrap(), (0, 0));
        assert!(u2.bracket(1.5).is_err());
        assert!(u2.bracket(-0.1).is_err());
        assert!(u2.bracket(f32::NAN).is_err());
    }

    #[test]
    fn larger_epsilon_pushes_mass_toward_zero() {
        let grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.1).collect();
        for b in [4u32, 8] {
            for pair in grid.windows(2) {
                for r in 1..levels(b) - 1 {
                    let (lo, hi) = (spacing(b, pair[0], r), spacing(b, pair[1], r));
                    assert!(lo > hi, "b={b} r={r} eps={pair:?}");
                }
            }
        }
    }

    #[test]
    fn defaults_build() {
        for b in CODEBOOK_WIDTHS {
            let eps = default_epsilon(b).unwrap();
            assert!(eps > 0.0);
            Codebook::new(b, eps).unwrap();
        }
        let set = CodebookSet::non_uniform().unwrap();
        assert!(set.get(16).is_none());
        assert_eq!(set.get(8).unwrap().len(), 128);
    }
}
