//! Plaque-fraction label schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three ordinal labelings of the same plaque fraction. Thresholds are
/// invented stand-ins; only the class counts and the relative difficulty of
/// the schemes are meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// Plaque percentage: low / moderate / high.
    Rfpp3,
    /// Five-grade Quigley-Hein style proxy.
    Rfmqh5,
    /// Four-grade Sillness-Loe style proxy.
    Mslp4,
}

impl LabelScheme {
    pub const ALL: [LabelScheme; 3] = [LabelScheme::Rfpp3, LabelScheme::Rfmqh5, LabelScheme::Mslp4];

    /// Lower edges of classes `1..k`; strictly increasing inside (0, 1).
    pub fn thresholds(self) -> &'static [f64] {
        match self {
            LabelScheme::Rfpp3 => &[0.10, 0.30],
            LabelScheme::Rfmqh5 => &[0.05, 0.15, 0.30, 0.50],
            LabelScheme::Mslp4 => &[0.05, 0.20, 0.50],
        }
    }

    pub fn class_count(self) -> usize {
        self.thresholds().len() + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelScheme::Rfpp3 => "rfpp3",
            LabelScheme::Rfmqh5 => "rfmqh5",
            LabelScheme::Mslp4 => "mslp4",
        }
    }

    /// `[lo, hi)` fraction interval of `class`; the last bin is closed at 1.
    pub fn bin(self, class: usize) -> Result<(f64, f64)> {
        let t = self.thresholds();
        if class > t.len() {
            return Err(Error::range(format!(
                "class {class} does not exist in {} ({} classes)",
                self.name(),
                self.class_count()
            )));
        }
        let lo = if class == 0 { 0.0 } else { t[class - 1] };
        let hi = if class == t.len() { 1.0 } else { t[class] };
        Ok((lo, hi))
    }

    /// Class of a plaque fraction; bins are half-open `[t_i, t_{i+1})`, so a
    /// fraction equal to a threshold goes to the upper class.
    pub fn derive_label(self, fraction: f64) -> Result<usize> {
        derive_label(fraction, self)
    }
}

pub fn derive_label(fraction: f64, scheme: LabelScheme) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::range(format!("plaque fraction {fraction} outside [0, 1]")));
    }
    Ok(scheme.thresholds().iter().take_while(|&&t| fraction >= t).count())
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rfpp3" => Ok(LabelScheme::Rfpp3),
            "rfmqh5" => Ok(LabelScheme::Rfmqh5),
            "mslp4" => Ok(LabelScheme::Mslp4),
            other => Err(Error::invalid(format!(
                "unknown label scheme '{other}' (expected rfpp3, rfmqh5 or mslp4)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundary_cases() {
        assert_eq!(derive_label(0.0, LabelScheme::Rfpp3).unwrap(), 0);
        assert_eq!(derive_label(0.10, LabelScheme::Rfpp3).unwrap(), 1);
        assert_eq!(derive_label(0.2999, LabelScheme::Rfpp3).unwrap(), 1);
        assert_eq!(derive_label(0.30, LabelScheme::Rfpp3).unwrap(), 2);
        assert_eq!(derive_label(0.95, LabelScheme::Mslp4).unwrap(), 3);
        assert_eq!(derive_label(1.0, LabelScheme::Rfmqh5).unwrap(), 4);
        assert!(matches!(derive_label(1.01, LabelScheme::Rfpp3), Err(Error::Range(_))));
        assert!(matches!(derive_label(-0.1, LabelScheme::Rfpp3), Err(Error::Range(_))));
        assert!(derive_label(f64::NAN, LabelScheme::Rfpp3).is_err());
    }

    #[test]
    fn schemes_are_well_formed() {
        for s in LabelScheme::ALL {
            let t = s.thresholds();
            assert!(t.windows(2).all(|w| w[0] < w[1]));
            assert!(t.iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(s.name().parse::<LabelScheme>().unwrap(), s);
        }
        assert_eq!(
            LabelScheme::ALL.map(LabelScheme::class_count),
            [3, 5, 4]
        );
        assert!("rfpp4".parse::<LabelScheme>().is_err());
    }

    proptest! {
        #[test]
        fn label_lies_in_its_bin(f in 0.0f64..=1.0, s in 0usize..3) {
            let scheme = LabelScheme::ALL[s];
            let c = derive_label(f, scheme).unwrap();
            let (lo, hi) = scheme.bin(c).unwrap();
            prop_assert!(f >= lo);
            prop_assert!(f < hi || (f == 1.0 && hi == 1.0));
        }

        #[test]
        fn labels_are_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for s in LabelScheme::ALL {
                prop_assert!(derive_label(lo, s).unwrap() <= derive_label(hi, s).unwrap());
            }
        }
    }
}
