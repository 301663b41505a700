//! A fixed-precision bijection between the unit square and the unit interval.
//!
//! Interleaving the binary digits of `x` and `y` gives one fraction `z`
//! whose digits alternate between the two. On a `B`-bit grid this is an
//! exact bijection onto `2B`-bit fractions, and it is wildly discontinuous
//! at dyadic boundaries: `0.0111…1` and `0.1000…0` are close as inputs but
//! their images differ in the first output digit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PRECISION: u32 = 32;
/// Widest input fraction; its value is exact in an `f64`.
pub const MAX_PRECISION: u32 = 52;
const MAX_STORED: u32 = 2 * MAX_PRECISION;

/// A fraction in `[0, 1)` with exactly `precision` binary digits, stored as
/// the integer numerator over `2^precision`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitFraction {
    numerator: u128,
    precision: u32,
}

impl BitFraction {
    pub fn new(numerator: u128, precision: u32) -> Result<Self> {
        if precision == 0 || precision > MAX_STORED {
            return Err(Error::Contract(format!(
                "precision {precision} outside 1..={MAX_STORED}"
            )));
        }
        if numerator >> precision != 0 {
            return Err(Error::Contract(format!(
                "numerator {numerator} does not fit in {precision} bits"
            )));
        }
        Ok(BitFraction {
            numerator,
            precision,
        })
    }

    pub fn zero(precision: u32) -> Result<Self> {
        BitFraction::new(0, precision)
    }

    /// Digits after the binary point, most significant first.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut n = 0u128;
        for &b in bits {
            if b > 1 {
                return Err(Error::Contract(format!("digit {b} is not binary")));
            }
            n = (n << 1) | b as u128;
        }
        BitFraction::new(n, bits.len() as u32)
    }

    /// Exact conversion; fails if `v` is not on the `precision`-bit grid.
    pub fn from_f64(v: f64, precision: u32) -> Result<Self> {
        if precision > MAX_PRECISION {
            return Err(Error::Contract(format!(
                "float conversion limited to {MAX_PRECISION} bits"
            )));
        }
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Contract(format!("{v} outside [0, 1)")));
        }
        let scaled = v * (1u64 << precision) as f64;
        if scaled.fract() != 0.0 {
            return Err(Error::Contract(format!("{v} is not a {precision}-bit fraction")));
        }
        BitFraction::new(scaled as u128, precision)
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn numerator(&self) -> u128 {
        self.numerator
    }

    /// Digit `k` after the binary point (0-based).
    pub fn bit(&self, k: u32) -> u8 {
        assert!(k < self.precision, "bit {k} out of range");
        ((self.numerator >> (self.precision - 1 - k)) & 1) as u8
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.precision).map(|k| self.bit(k)).collect()
    }

    /// Nearest `f64`; exact when `precision <= 53`.
    pub fn value(&self) -> f64 {
        self.numerator as f64 / 2f64.powi(self.precision as i32)
    }

    /// Number of leading digits shared with `other` (same precision).
    pub fn common_prefix(&self, other: &BitFraction) -> Result<u32> {
        same_precision(self, other)?;
        let diff = self.numerator ^ other.numerator;
        if diff == 0 {
            return Ok(self.precision);
        }
        let highest = 127 - diff.leading_zeros();
        Ok(self.precision - 1 - highest)
    }
}

impl std::fmt::Display for BitFraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "0.")?;
        for b in self.bits() {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

fn same_precision(a: &BitFraction, b: &BitFraction) -> Result<()> {
    if a.precision != b.precision {
        return Err(Error::Contract(format!(
            "precision mismatch: {} vs {}",
            a.precision, b.precision
        )));
    }
    Ok(())
}

/// `z` with digit `2k` from `x` and digit `2k+1` from `y`.
pub fn interleave(x: &BitFraction, y: &BitFraction) -> Result<BitFraction> {
    same_precision(x, y)?;
    if x.precision > MAX_PRECISION {
        return Err(Error::Contract(format!(
            "interleave inputs limited to {MAX_PRECISION} bits"
        )));
    }
    let b = x.precision;
    let mut z = 0u128;
    for k in 0..b {
        z = (z << 2) | ((x.bit(k) as u128) << 1) | y.bit(k) as u128;
    }
    BitFraction::new(z, 2 * b)
}

/// Inverse of [`interleave`].
pub fn deinterleave(z: &BitFraction) -> Result<(BitFraction, BitFraction)> {
    if z.precision % 2 != 0 {
        return Err(Error::Contract(format!(
            "cannot split odd precision {}",
            z.precision
        )));
    }
    let b = z.precision / 2;
    let (mut x, mut y) = (0u128, 0u128);
    for k in 0..b {
        x = (x << 1) | z.bit(2 * k) as u128;
        y = (y << 1) | z.bit(2 * k + 1) as u128;
    }
    Ok((BitFraction::new(x, b)?, BitFraction::new(y, b)?))
}

/// Output distance over input distance for the boundary pair
/// `x = 0.0 1…1` (`k` ones) and `x' = 0.1`, both paired with `y`.
///
/// The input distance is `2^-(k+1)`; the outputs differ in their first
/// digit, so the ratio grows like `2^k`. Computed from exact integers with a
/// single final rounding.
pub fn boundary_expansion_with(k: u32, y: &BitFraction) -> Result<f64> {
    let b = y.precision;
    if !(2..b).contains(&k) {
        return Err(Error::Contract(format!("need 2 <= k < B, got k={k}, B={b}")));
    }
    let ones = ((1u128 << k) - 1) << (b - 1 - k);
    let x = BitFraction::new(ones, b)?;
    let x_prime = BitFraction::new(1u128 << (b - 1), b)?;
    let z = interleave(&x, y)?;
    let z_prime = interleave(&x_prime, y)?;
    let dout = z_prime.numerator.abs_diff(z.numerator);
    let din = x_prime.numerator - x.numerator;
    // (dout / 2^(2B)) / (din / 2^B)
    Ok(dout as f64 / din as f64 / 2f64.powi(b as i32))
}

pub fn boundary_expansion(k: u32, precision: u32) -> Result<f64> {
    if precision > MAX_PRECISION {
        return Err(Error::Contract(format!(
            "precision {precision} above {MAX_PRECISION}"
        )));
    }
    boundary_expansion_with(k, &BitFraction::zero(precision)?)
}

/// Checks that interleaving every pair on the `precision`-bit grid hits
/// every `2·precision`-bit fraction exactly once.
pub fn exhaustive_bijectivity(precision: u32) -> Result<bool> {
    if precision == 0 || precision > 12 {
        return Err(Error::Contract(format!(
            "exhaustive check limited to 1..=12 bits, got {precision}"
        )));
    }
    let side = 1u128 << precision;
    let mut seen = vec![false; 1usize << (2 * precision)];
    for xn in 0..side {
        let x = BitFraction::new(xn, precision)?;
        for yn in 0..side {
            let y = BitFraction::new(yn, precision)?;
            let z = interleave(&x, &y)?;
            let slot = &mut seen[z.numerator as usize];
            if *slot || deinterleave(&z)? != (x, y) {
                return Ok(false);
            }
            *slot = true;
        }
    }
    Ok(seen.iter().all(|&s| s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub k: u32,
    pub input_distance: f64,
    pub ratio: f64,
}

/// Ratios for every `k` in `2..precision`.
pub fn boundary_curve(precision: u32) -> Result<Vec<BoundaryPoint>> {
    (2..precision)
        .map(|k| {
            Ok(BoundaryPoint {
                k,
                input_distance: 2f64.powi(-(k as i32 + 1)),
                ratio: boundary_expansion(k, precision)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_interleave() {
        let x = BitFraction::from_bits(&[1]).unwrap();
        let y = BitFraction::from_bits(&[0]).unwrap();
        let z = interleave(&x, &y).unwrap();
        assert_eq!(z.bits(), vec![1, 0]);
        assert_eq!(z.value(), 0.5);
        assert_eq!(deinterleave(&z).unwrap(), (x, y));

        let zero = BitFraction::zero(8).unwrap();
        let z = interleave(&zero, &zero).unwrap();
        assert_eq!(z.value(), 0.0);
        assert_eq!(deinterleave(&z).unwrap(), (zero, zero));
    }

    #[test]
    fn contract_errors() {
        let a = BitFraction::zero(4).unwrap();
        let b = BitFraction::zero(5).unwrap();
        assert!(matches!(interleave(&a, &b).unwrap_err(), Error::Contract(_)));
        assert!(matches!(deinterleave(&b).unwrap_err(), Error::Contract(_)));
        assert!(matches!(boundary_expansion(8, 8).unwrap_err(), Error::Contract(_)));
        assert!(matches!(boundary_expansion(1, 8).unwrap_err(), Error::Contract(_)));
        assert!(BitFraction::from_bits(&[0, 2]).is_err());
        assert!(BitFraction::from_f64(0.3, 8).is_err());
    }

    #[test]
    fn boundary_example() {
        // x = 0.011, x' = 0.100: outputs 0.000101 and 0.100000
        let r = boundary_expansion(2, 8).unwrap();
        let expected = (0.5 - 0.125 - 0.03125) / 0.125;
        assert_eq!(r, expected);
        assert!(r >= 2.0);
    }

    #[test]
    fn boundary_ratio_increases() {
        let curve = boundary_curve(32).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].ratio > w[0].ratio, "k={}", w[1].k);
        }
    }

    #[test]
    fn small_grid_is_bijective() {
        assert!(exhaustive_bijectivity(4).unwrap());
    }

    #[test]
    fn float_conversion_is_exact() {
        let f = BitFraction::from_f64(0.375, 3).unwrap();
        assert_eq!(f.bits(), vec![0, 1, 1]);
        assert_eq!(f.value(), 0.375);
        assert_eq!(f.to_string(), "0.011");
    }

    #[test]
    fn prefix_length() {
        let a = BitFraction::from_bits(&[1, 0, 1, 1]).unwrap();
        let b = BitFraction::from_bits(&[1, 0, 0, 1]).unwrap();
        assert_eq!(a.common_prefix(&b).unwrap(), 2);
        assert_eq!(a.common_prefix(&a).unwrap(), 4);
    }
}
