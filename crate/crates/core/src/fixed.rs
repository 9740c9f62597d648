//! Signed fixed-point storage formats.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default fractional bits for 16-bit weights and outliers (Q8.8).
pub const DEFAULT_FRAC_BITS: u32 = 8;

/// A signed two's-complement integer format of 4, 8 or 16 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    bits: u32,
}

impl FixedPointFormat {
    pub const INT4: Self = Self { bits: 4 };
    pub const INT8: Self = Self { bits: 8 };
    pub const INT16: Self = Self { bits: 16 };

    pub fn new(bits: u32) -> Result<Self> {
        match bits {
            4 | 8 | 16 => Ok(Self { bits }),
            _ => Err(Error::contract(format!("unsupported bit width {bits}"))),
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn signed(&self) -> bool {
        true
    }

    pub fn min(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn max(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn contains(&self, v: i32) -> bool {
        (self.min()..=self.max()).contains(&v)
    }

    pub fn clamp(&self, v: i64) -> i32 {
        v.clamp(self.min() as i64, self.max() as i64) as i32
    }
}

/// Round half away from zero. `f64::round` already has this tie-break; the
/// wrapper pins the convention in one place.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// `round(x * 2^frac_bits)` saturated to the format range.
pub fn to_fixed(x: f64, fmt: FixedPointFormat, frac_bits: u32) -> i32 {
    let scaled = round_half_away(x * f64::powi(2.0, frac_bits as i32));
    // Saturating float->int cast handles values far outside i64.
    fmt.clamp(scaled as i64)
}

pub fn from_fixed(v: i32, frac_bits: u32) -> f64 {
    v as f64 / f64::powi(2.0, frac_bits as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(to_fixed(0.0, FixedPointFormat::INT16, 8), 0);
        assert_eq!(to_fixed(1.0, FixedPointFormat::INT16, 8), 256);
        assert_eq!(to_fixed(200.0, FixedPointFormat::INT8, 0), 127);
        assert_eq!(to_fixed(-200.0, FixedPointFormat::INT8, 0), -128);
        assert_eq!(to_fixed(1e300, FixedPointFormat::INT16, 8), 32767);
    }

    #[test]
    fn ties_go_away_from_zero() {
        assert_eq!(to_fixed(2.5, FixedPointFormat::INT8, 0), 3);
        assert_eq!(to_fixed(-2.5, FixedPointFormat::INT8, 0), -3);
        assert_eq!(to_fixed(0.5 / 256.0, FixedPointFormat::INT16, 8), 1);
    }

    #[test]
    fn ranges() {
        assert_eq!(FixedPointFormat::INT4.min(), -8);
        assert_eq!(FixedPointFormat::INT4.max(), 7);
        assert_eq!(FixedPointFormat::INT16.max(), 32767);
        assert!(FixedPointFormat::new(12).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone(a in -1e4f64..1e4, b in -1e4f64..1e4, bits in prop::sample::select(vec![4u32, 8, 16])) {
                let fmt = FixedPointFormat::new(bits).unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(to_fixed(lo, fmt, 4) <= to_fixed(hi, fmt, 4));
            }

            #[test]
            fn odd_symmetry(x in -100f64..100.0) {
                let fmt = FixedPointFormat::INT16;
                prop_assert_eq!(to_fixed(-x, fmt, 8), -to_fixed(x, fmt, 8));
            }
        }
    }
}
