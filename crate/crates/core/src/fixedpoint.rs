//! Signed fixed-point grid `Q(n, m)` and its integer encoding.
//!
//! A grid value is stored as the scaled integer `raw = value · 2^m`, so all
//! arithmetic on the control path is exact integer arithmetic.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Largest supported word length; raw values must fit an `i64`.
pub const MAX_WORD_BITS: u32 = 62;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum FixedPointError {
    #[error("invalid grid (n = {n}, m = {m}): need {MAX_WORD_BITS} >= n > m >= 1")]
    InvalidGrid { n: u32, m: u32 },
    #[error("value {value} is outside the representable range [{min}, {max}]")]
    Overflow { value: String, min: String, max: String },
    #[error("integer code {0} is outside Z_(2^n)")]
    CodeOutOfRange(u64),
}

/// Word length `n` and fractional bits `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridParams {
    n: u32,
    m: u32,
}

impl GridParams {
    pub fn new(n: u32, m: u32) -> Result<Self, FixedPointError> {
        if m < 1 || n <= m || n > MAX_WORD_BITS {
            return Err(FixedPointError::InvalidGrid { n, m });
        }
        Ok(Self { n, m })
    }

    pub fn word_bits(&self) -> u32 {
        self.n
    }

    pub fn frac_bits(&self) -> u32 {
        self.m
    }

    /// `2^n`, the size of the integer code space.
    pub fn modulus(&self) -> u64 {
        1u64 << self.n
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.n - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.n - 1)) - 1
    }

    pub fn contains_raw(&self, raw: i128) -> bool {
        raw >= self.min_raw() as i128 && raw <= self.max_raw() as i128
    }

    /// Grid spacing `2^{-m}` as an exact rational.
    pub fn resolution(&self) -> BigRational {
        BigRational::new(BigInt::one(), BigInt::one() << self.m)
    }

    /// `2^{n-m-1}`, the exclusive upper end of the range.
    pub fn half_range(&self) -> BigRational {
        BigRational::from_integer(BigInt::one() << (self.n - self.m - 1))
    }

    fn overflow(&self, value: String) -> FixedPointError {
        FixedPointError::Overflow {
            value,
            min: Fixed::from_raw_unchecked(self.min_raw(), *self).to_string(),
            max: Fixed::from_raw_unchecked(self.max_raw(), *self).to_string(),
        }
    }
}

/// An element of `Q(n, m)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fixed {
    raw: i64,
    grid: GridParams,
}

impl Fixed {
    pub fn zero(grid: GridParams) -> Self {
        Self { raw: 0, grid }
    }

    pub fn from_raw(raw: i64, grid: GridParams) -> Result<Self, FixedPointError> {
        Self::from_raw_wide(raw as i128, grid)
    }

    pub fn from_raw_wide(raw: i128, grid: GridParams) -> Result<Self, FixedPointError> {
        if !grid.contains_raw(raw) {
            let value = BigRational::new(BigInt::from(raw), BigInt::one() << grid.m);
            return Err(grid.overflow(value.to_string()));
        }
        Ok(Self { raw: raw as i64, grid })
    }

    fn from_raw_unchecked(raw: i64, grid: GridParams) -> Self {
        Self { raw, grid }
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn grid(&self) -> GridParams {
        self.grid
    }

    /// Rounds `x` down to the grid: `floor(x · 2^m) / 2^m`.
    ///
    /// Values at or beyond `±2^{n-m-1}` (after rounding) overflow.
    pub fn quantize(x: &BigRational, grid: GridParams) -> Result<Self, FixedPointError> {
        let scaled = x * BigRational::from_integer(BigInt::one() << grid.m);
        let floor = scaled.numer().div_floor(scaled.denom());
        match floor.to_i128() {
            Some(raw) if grid.contains_raw(raw) => Ok(Self { raw: raw as i64, grid }),
            _ => Err(grid.overflow(x.to_string())),
        }
    }

    /// The integer code `2^m · a mod 2^n`.
    pub fn to_code(&self) -> u64 {
        (self.raw as i128).rem_euclid(self.grid.modulus() as i128) as u64
    }

    /// Inverse of [`Fixed::to_code`]: codes at or above `2^{n-1}` are negative.
    pub fn from_code(code: u64, grid: GridParams) -> Result<Self, FixedPointError> {
        if code >= grid.modulus() {
            return Err(FixedPointError::CodeOutOfRange(code));
        }
        let raw = if code >= 1u64 << (grid.n - 1) {
            code as i64 - grid.modulus() as i64
        } else {
            code as i64
        };
        Ok(Self { raw, grid })
    }

    /// Negation; fails only for the most negative grid point.
    pub fn checked_neg(&self) -> Result<Self, FixedPointError> {
        Self::from_raw_wide(-(self.raw as i128), self.grid)
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.raw), BigInt::one() << self.grid.m)
    }

    /// Nearest `f64`; exact whenever `|raw| < 2^53`.
    pub fn to_f64(&self) -> f64 {
        self.raw as f64 / (1u64 << self.grid.m) as f64
    }

    pub fn is_zero(&self) -> bool {
        self.raw.is_zero()
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed({} / 2^{})", self.raw, self.grid.m)
    }
}

/// Exact decimal expansion (grid values always have a finite one).
impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.grid.m;
        let neg = self.raw < 0;
        let mag = (self.raw as i128).unsigned_abs();
        let int = mag >> m;
        let frac = mag & ((1u128 << m) - 1);
        if neg {
            f.write_str("-")?;
        }
        write!(f, "{int}")?;
        if frac != 0 {
            // frac / 2^m = frac · 5^m / 10^m
            let digits = BigInt::from(frac) * BigInt::from(5u32).pow(m);
            let s = format!("{:0>width$}", digits, width = m as usize);
            write!(f, ".{}", s.trim_end_matches('0'))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(num: i64, den: i64) -> BigRational {
        BigRational::new(num.into(), den.into())
    }

    fn g(n: u32, m: u32) -> GridParams {
        GridParams::new(n, m).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridParams::new(24, 6).is_ok());
        assert!(GridParams::new(6, 6).is_err());
        assert!(GridParams::new(6, 0).is_err());
        assert!(GridParams::new(63, 6).is_err());
    }

    #[test]
    fn quantize_examples() {
        let p = g(24, 6);
        let a = Fixed::quantize(&q(13, 10), p).unwrap();
        assert_eq!(a.raw(), 83);
        assert_eq!(a.to_rational(), q(83, 64));
        assert_eq!(a.to_string(), "1.296875");
        for m in 1..10 {
            assert_eq!(Fixed::quantize(&q(1, 2), g(24, m)).unwrap().to_rational(), q(1, 2));
        }
        let b = Fixed::quantize(&q(-13, 10), p).unwrap();
        assert_eq!(b.raw(), -84);
        assert_eq!(b.to_string(), "-1.3125");
    }

    #[test]
    fn quantize_range_edges() {
        let p = g(8, 2); // range [-32, 31.75]
        assert_eq!(Fixed::quantize(&q(-32, 1), p).unwrap().raw(), -128);
        assert_eq!(Fixed::quantize(&q(127, 4), p).unwrap().raw(), 127);
        assert!(Fixed::quantize(&q(32, 1), p).is_err());
        assert!(Fixed::quantize(&q(-3201, 100), p).is_err());
        // just below 32 rounds down onto the last grid point
        assert_eq!(Fixed::quantize(&q(3199, 100), p).unwrap().raw(), 127);
    }

    #[test]
    fn code_examples() {
        let p = g(24, 6);
        assert_eq!(Fixed::from_raw(83, p).unwrap().to_code(), 83);
        assert_eq!(Fixed::zero(p).to_code(), 0);
        // a = -2^{-6} scales to -1, whose code is 2^24 - 1
        assert_eq!(Fixed::from_raw(-1, p).unwrap().to_code(), 16_777_215);
        // a = -1 scales to -64
        assert_eq!(Fixed::from_raw(-64, p).unwrap().to_code(), 16_777_152);
        let small = g(4, 1);
        assert_eq!(Fixed::from_code(15, small).unwrap().to_rational(), q(-1, 2));
        assert_eq!(Fixed::from_code(0, small).unwrap().to_rational(), q(0, 1));
        assert_eq!(Fixed::from_code(7, small).unwrap().to_rational(), q(7, 2));
        assert!(Fixed::from_code(16, small).is_err());
    }

    #[test]
    fn exhaustive_bijection_n6_m2() {
        let p = g(6, 2);
        let mut seen = std::collections::BTreeSet::new();
        for raw in p.min_raw()..=p.max_raw() {
            let a = Fixed::from_raw(raw, p).unwrap();
            let code = a.to_code();
            assert!(code < 64);
            assert!(seen.insert(code));
            assert_eq!(Fixed::from_code(code, p).unwrap(), a);
        }
        assert_eq!(seen.len(), 64);
        for code in 0..64 {
            assert_eq!(Fixed::from_code(code, p).unwrap().to_code(), code);
        }
    }

    #[test]
    fn negation_of_most_negative_overflows() {
        let p = g(6, 2);
        let min = Fixed::from_raw(p.min_raw(), p).unwrap();
        assert!(min.checked_neg().is_err());
        let max = Fixed::from_raw(p.max_raw(), p).unwrap();
        assert_eq!(max.checked_neg().unwrap().raw(), -p.max_raw());
    }

    #[test]
    fn display_is_exact() {
        let p = g(24, 9);
        assert_eq!(Fixed::from_raw(1, p).unwrap().to_string(), "0.001953125");
        assert_eq!(Fixed::from_raw(-512, p).unwrap().to_string(), "-1");
        assert_eq!(Fixed::from_raw(-513, p).unwrap().to_string(), "-1.001953125");
    }

    proptest! {
        #[test]
        fn quantizer_error_is_one_sided(num in -1_000_000i64..1_000_000, den in 64i64..100_000, m in prop::sample::select(vec![6u32, 9])) {
            let p = g(24, m);
            let x = q(num, den);
            let a = Fixed::quantize(&x, p).unwrap();
            let delta = a.to_rational() - &x;
            prop_assert!(delta <= BigRational::zero());
            prop_assert!(delta > -p.resolution());
        }

        #[test]
        fn bijection_n24(raw in -(1i64 << 23)..(1i64 << 23), m in prop::sample::select(vec![6u32, 9])) {
            let p = g(24, m);
            let a = Fixed::from_raw(raw, p).unwrap();
            prop_assert_eq!(Fixed::from_code(a.to_code(), p).unwrap(), a);
        }

        #[test]
        fn signed_sum_compatibility(a in -(1i64 << 22)..(1i64 << 22), b in -(1i64 << 22)..(1i64 << 22)) {
            let p = g(24, 6);
            let (fa, fb) = (Fixed::from_raw(a, p).unwrap(), Fixed::from_raw(b, p).unwrap());
            let sum = Fixed::from_raw(a + b, p).unwrap();
            prop_assert_eq!((fa.to_code() + fb.to_code()) % p.modulus(), sum.to_code());
        }
    }
}
