use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outliers are always carried at 16 bits.
pub const OUTLIER_BITS: u32 = 16;

/// Static activation class.
///
/// * `A`: residual-carried activations that feed a LayerNorm.
/// * `B`: LayerNorm outputs that feed linear layers.
/// * `C`: every other quantized activation.
/// * `Unquantized`: values that never leave the chip in low precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivationGroup {
    A,
    B,
    C,
    Unquantized,
}

impl ActivationGroup {
    pub const QUANTIZED: [ActivationGroup; 3] = [Self::A, Self::B, Self::C];
}

impl fmt::Display for ActivationGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::Unquantized => "Unquantized",
        };
        f.write_str(s)
    }
}

/// Inlier precision plus outlier count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantScheme {
    pub inlier_bits: u32,
    pub outlier_count: usize,
}

impl QuantScheme {
    pub const fn new_unchecked(inlier_bits: u32, outlier_count: usize) -> Self {
        Self {
            inlier_bits,
            outlier_count,
        }
    }

    pub fn new(inlier_bits: u32, outlier_count: usize) -> Result<Self> {
        let s = Self::new_unchecked(inlier_bits, outlier_count);
        s.check_bits()?;
        Ok(s)
    }

    fn check_bits(&self) -> Result<()> {
        if self.inlier_bits != 4 && self.inlier_bits != 8 {
            return Err(Error::contract(format!(
                "inlier bits must be 4 or 8, got {}",
                self.inlier_bits
            )));
        }
        Ok(())
    }

    /// Full validity check against a hidden dimension.
    pub fn validate(&self, hz: usize) -> Result<()> {
        self.check_bits()?;
        if self.outlier_count > hz {
            return Err(Error::contract(format!(
                "outlier count {} exceeds Hz {hz}",
                self.outlier_count
            )));
        }
        Ok(())
    }

    /// Largest inlier code magnitude, `2^(m-1) - 1`.
    pub fn qmax(&self) -> i32 {
        (1 << (self.inlier_bits - 1)) - 1
    }

    pub fn inlier_count(&self, hz: usize) -> usize {
        hz - self.outlier_count
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.inlier_bits, self.outlier_count)
    }
}

/// Parses `bits:outliers`, e.g. `4:4`.
impl FromStr for QuantScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("scheme `{s}` is not bits:outliers"));
        let (bits, k) = s.trim().split_once(':').ok_or_else(bad)?;
        QuantScheme::new(bits.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?)
    }
}

/// Defaults: A = 8-bit inliers with 4 outliers, B = 4-bit with 4, C = 4-bit with none.
pub fn scheme_for_group(g: ActivationGroup) -> Result<QuantScheme> {
    SchemeTable::default().get(g)
}

/// Per-group scheme assignment, overridable for design-space sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeTable {
    pub a: QuantScheme,
    pub b: QuantScheme,
    pub c: QuantScheme,
}

impl Default for SchemeTable {
    fn default() -> Self {
        Self {
            a: QuantScheme::new_unchecked(8, 4),
            b: QuantScheme::new_unchecked(4, 4),
            c: QuantScheme::new_unchecked(4, 0),
        }
    }
}

impl SchemeTable {
    pub fn get(&self, g: ActivationGroup) -> Result<QuantScheme> {
        match g {
            ActivationGroup::A => Ok(self.a),
            ActivationGroup::B => Ok(self.b),
            ActivationGroup::C => Ok(self.c),
            ActivationGroup::Unquantized => Err(Error::NoScheme(g.to_string())),
        }
    }

    pub fn set(&mut self, g: ActivationGroup, s: QuantScheme) -> Result<()> {
        match g {
            ActivationGroup::A => self.a = s,
            ActivationGroup::B => self.b = s,
            ActivationGroup::C => self.c = s,
            ActivationGroup::Unquantized => return Err(Error::NoScheme(g.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self, hz: usize) -> Result<()> {
        self.a.validate(hz)?;
        self.b.validate(hz)?;
        self.c.validate(hz)
    }
}

impl fmt::Display for SchemeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A:{},B:{},C:{}", self.a, self.b, self.c)
    }
}

/// Parses `A:8:4,B:4:4,C:4:0`. Groups that are not mentioned keep their default.
impl FromStr for SchemeTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut table = SchemeTable::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let fields: Vec<&str> = part.split(':').collect();
            let [group, bits, k] = fields.as_slice() else {
                return Err(Error::Config(format!("bad scheme entry `{part}`")));
            };
            let g = match *group {
                "A" | "a" => ActivationGroup::A,
                "B" | "b" => ActivationGroup::B,
                "C" | "c" => ActivationGroup::C,
                other => return Err(Error::Config(format!("unknown group `{other}`"))),
            };
            let bits: u32 = bits
                .parse()
                .map_err(|_| Error::Config(format!("bad bit width in `{part}`")))?;
            let k: usize = k
                .parse()
                .map_err(|_| Error::Config(format!("bad outlier count in `{part}`")))?;
            let scheme = QuantScheme::new(bits, k).map_err(|e| Error::Config(e.to_string()))?;
            table.set(g, scheme)?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_defaults() {
        assert_eq!(
            scheme_for_group(ActivationGroup::A).unwrap(),
            QuantScheme::new(8, 4).unwrap()
        );
        assert_eq!(
            scheme_for_group(ActivationGroup::B).unwrap(),
            QuantScheme::new(4, 4).unwrap()
        );
        assert_eq!(
            scheme_for_group(ActivationGroup::C).unwrap(),
            QuantScheme::new(4, 0).unwrap()
        );
        assert!(matches!(
            scheme_for_group(ActivationGroup::Unquantized),
            Err(Error::NoScheme(_))
        ));
    }

    #[test]
    fn parse_table() {
        let t: SchemeTable = "A:8:4,B:4:4,C:4:0".parse().unwrap();
        assert_eq!(t, SchemeTable::default());
        let t: SchemeTable = "C:8:2".parse().unwrap();
        assert_eq!(t.c, QuantScheme::new(8, 2).unwrap());
        assert_eq!(t.a, SchemeTable::default().a);
        assert!("C:5:0".parse::<SchemeTable>().is_err());
        assert!("D:4:0".parse::<SchemeTable>().is_err());
        assert!("A:4".parse::<SchemeTable>().is_err());
        assert_eq!(SchemeTable::default().to_string(), "A:8:4,B:4:4,C:4:0");
    }

    #[test]
    fn validation() {
        assert!(QuantScheme::new(4, 129).unwrap().validate(128).is_err());
        assert!(QuantScheme::new(4, 128).unwrap().validate(128).is_ok());
        assert_eq!(QuantScheme::new(4, 0).unwrap().qmax(), 7);
        assert_eq!(QuantScheme::new(8, 0).unwrap().qmax(), 127);
    }
}
