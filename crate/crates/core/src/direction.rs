use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Discrete trading direction. The numeric encoding (SHORT = 0, LONG = 1) is
/// shared by strategies, labels and environment actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Short = 0,
    Long = 1,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Short, Direction::Long];

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Direction::Short),
            1 => Some(Direction::Long),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Maps {SHORT, LONG} onto {-1, +1}.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Short => -1.0,
            Direction::Long => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Short => "SHORT",
            Direction::Long => "LONG",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown direction {0:?}; expected LONG or SHORT")]
pub struct ParseDirectionError(pub String);

impl FromStr for Direction {
    type Err = ParseDirectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "LONG" | "1" => Ok(Direction::Long),
            "SHORT" | "0" => Ok(Direction::Short),
            other => Err(ParseDirectionError(other.to_string())),
        }
    }
}
