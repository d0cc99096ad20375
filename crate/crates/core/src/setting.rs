//! Basis and outcome labels shared by preparation and detection.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Basis {
        Self::ALL[i]
    }

    /// Unit vector of this axis on the Poincaré sphere.
    pub fn axis(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn parse(s: &str) -> Option<Basis> {
        match s {
            "X" | "x" => Some(Basis::X),
            "Y" | "y" => Some(Basis::Y),
            "Z" | "z" => Some(Basis::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Basis::X => "X",
            Basis::Y => "Y",
            Basis::Z => "Z",
        };
        f.write_str(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const ALL: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    /// Key bit carried by this outcome: `+` is 0, `-` is 1.
    pub fn bit(self) -> bool {
        self == Sign::Minus
    }

    pub fn parse(s: &str) -> Option<Sign> {
        match s {
            "+" => Some(Sign::Plus),
            "-" => Some(Sign::Minus),
            _ => None,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// One of the six preparation (or detection) settings, ordered
/// X+, X-, Y+, Y-, Z+, Z-.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Setting {
    pub basis: Basis,
    pub sign: Sign,
}

impl Setting {
    pub const fn new(basis: Basis, sign: Sign) -> Self {
        Setting { basis, sign }
    }

    pub fn index(self) -> usize {
        2 * self.basis.index() + self.sign.index()
    }

    pub fn from_index(i: usize) -> Setting {
        assert!(i < 6, "setting index {i} out of range");
        Setting {
            basis: Basis::from_index(i / 2),
            sign: Sign::ALL[i % 2],
        }
    }

    pub fn all() -> impl Iterator<Item = Setting> {
        (0..6).map(Setting::from_index)
    }

    pub fn label(self) -> String {
        format!("{}{}", self.basis, self.sign)
    }

    pub fn parse(s: &str) -> Option<Setting> {
        let mut chars = s.chars();
        let b = Basis::parse(&chars.next()?.to_string())?;
        let sign = Sign::parse(chars.as_str())?;
        Some(Setting::new(b, sign))
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.basis, self.sign)
    }
}

/// Canonical label order used by every file format.
pub const SETTING_LABELS: [&str; 6] = ["X+", "X-", "Y+", "Y-", "Z+", "Z-"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_labels() {
        for (i, label) in SETTING_LABELS.iter().enumerate() {
            let s = Setting::from_index(i);
            assert_eq!(s.index(), i);
            assert_eq!(&s.label(), label);
            assert_eq!(Setting::parse(label), Some(s));
        }
        assert_eq!(Setting::parse("W+"), None);
        assert_eq!(Setting::parse("X"), None);
    }
}
