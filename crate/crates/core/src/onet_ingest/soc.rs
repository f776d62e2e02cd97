use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid SOC code {0:?} (expected NN-NNNN.NN)")]
pub struct InvalidSocCode(pub String);

/// O*NET-SOC occupation code in `NN-NNNN.NN` form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SocCode(String);

impl SocCode {
    pub fn parse(s: &str) -> Result<Self, InvalidSocCode> {
        let b = s.as_bytes();
        let ok = b.len() == 10
            && b.iter().enumerate().all(|(i, c)| match i {
                2 => *c == b'-',
                7 => *c == b'.',
                _ => c.is_ascii_digit(),
            });
        if ok {
            Ok(Self(s.to_string()))
        } else {
            Err(InvalidSocCode(s.to_string()))
        }
    }

    /// Accepts either the full O*NET form or a 6-digit BLS code (`NN-NNNN`),
    /// which maps to its `.00` occupation.
    pub fn normalize(s: &str) -> Result<Self, InvalidSocCode> {
        let s = s.trim();
        if s.len() == 7 {
            Self::parse(&format!("{s}.00")).map_err(|_| InvalidSocCode(s.to_string()))
        } else {
            Self::parse(s)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Leading group of the SOC hierarchy with `digits` digits (2..=8).
    /// `11-3012.01` gives `11` for 2, `11-3` for 3, `11-3012` for 6.
    pub fn group(&self, digits: usize) -> &str {
        let digits = digits.clamp(2, 8);
        let end = match digits {
            2 => 2,
            3..=6 => digits + 1,
            _ => digits + 2,
        };
        &self.0[..end]
    }

    pub fn major_group(&self) -> &str {
        self.group(2)
    }

    /// The 6-digit SOC occupation this code refines, as `NN-NNNN.00`.
    pub fn base(&self) -> SocCode {
        SocCode(format!("{}.00", self.group(6)))
    }
}

impl fmt::Display for SocCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SocCode {
    type Err = InvalidSocCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for SocCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for SocCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SocCode::parse(&s).map_err(serde::de::Error::custom)
    }
}
