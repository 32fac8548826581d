use serde::{Deserialize, Serialize};
use std::fmt;

/// Discrete transfection-efficiency score on the unified 1..=10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct EfficiencyScore(u8);

impl EfficiencyScore {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 10;

    pub fn new(v: u8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&v).then_some(Self(v))
    }

    /// Score from a 0-based class index (class 0 is score 1).
    pub fn from_class(idx: usize) -> Option<Self> {
        u8::try_from(idx + 1).ok().and_then(Self::new)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn class_index(self) -> usize {
        (self.0 - 1) as usize
    }

    /// Scores 1, 2, 9 and 10.
    pub fn is_extreme(self) -> bool {
        matches!(self.0, 1 | 2 | 9 | 10)
    }
}

impl TryFrom<u8> for EfficiencyScore {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v).ok_or_else(|| format!("efficiency score {v} outside 1..=10"))
    }
}

impl From<EfficiencyScore> for u8 {
    fn from(s: EfficiencyScore) -> u8 {
        s.0
    }
}

impl fmt::Display for EfficiencyScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
