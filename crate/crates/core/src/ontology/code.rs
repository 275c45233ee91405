use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deepest ATC level (chemical substance).
pub const MAX_LEVEL: u8 = 5;

/// Character length of a code at levels 1 through 5.
pub const LEVEL_LENGTHS: [usize; 5] = [1, 3, 4, 5, 7];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("invalid ATC code length {len} in {text:?}: expected 1, 3, 4, 5 or 7 characters")]
    InvalidLength { text: String, len: usize },
    #[error("invalid ATC code {text:?}: character {position} should be a {expected}")]
    InvalidPattern {
        text: String,
        position: usize,
        expected: &'static str,
    },
    #[error("level {requested} is out of range for code {code} (level {actual})")]
    LevelExceedsCode {
        code: String,
        requested: u8,
        actual: u8,
    },
}

/// Character length used by codes at `level`, or `None` outside 1..=5.
pub fn level_length(level: u8) -> Option<usize> {
    match level {
        1..=MAX_LEVEL => Some(LEVEL_LENGTHS[usize::from(level) - 1]),
        _ => None,
    }
}

/// Level implied by a code length, or `None` for illegal lengths.
pub fn level_for_length(len: usize) -> Option<u8> {
    LEVEL_LENGTHS
        .iter()
        .position(|&l| l == len)
        .map(|i| i as u8 + 1)
}

/// A validated ATC code such as `A10BA02`.
///
/// Codes are stored uppercase. The level is fully determined by the length:
/// 1, 3, 4, 5 and 7 characters map to levels 1 through 5.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AtcCode {
    text: String,
    level: u8,
}

impl AtcCode {
    pub fn parse(text: &str) -> Result<Self, CodeError> {
        let text = text.trim().to_ascii_uppercase();
        let len = text.chars().count();
        let level = level_for_length(len).ok_or_else(|| CodeError::InvalidLength {
            text: text.clone(),
            len,
        })?;
        for (i, c) in text.chars().enumerate() {
            let (ok, expected) = match i {
                0 | 3 | 4 => (c.is_ascii_uppercase(), "letter"),
                _ => (c.is_ascii_digit(), "digit"),
            };
            if !ok {
                return Err(CodeError::InvalidPattern {
                    text,
                    position: i + 1,
                    expected,
                });
            }
        }
        Ok(Self { text, level })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Truncates the code to its ancestor at `level`.
    pub fn prefix_at_level(&self, level: u8) -> Result<AtcCode, CodeError> {
        match level_length(level) {
            Some(len) if level <= self.level => Ok(AtcCode {
                text: self.text[..len].to_owned(),
                level,
            }),
            _ => Err(CodeError::LevelExceedsCode {
                code: self.text.clone(),
                requested: level,
                actual: self.level,
            }),
        }
    }

    /// Immediate ancestor, `None` for level-1 codes.
    pub fn parent(&self) -> Option<AtcCode> {
        if self.level == 1 {
            None
        } else {
            self.prefix_at_level(self.level - 1).ok()
        }
    }

    /// True when `self` is `other` or one of its ancestors.
    pub fn is_prefix_of(&self, other: &AtcCode) -> bool {
        self.level <= other.level && other.text.starts_with(&self.text)
    }
}

impl fmt::Display for AtcCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for AtcCode {
    type Err = CodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AtcCode::parse(s)
    }
}

impl TryFrom<String> for AtcCode {
    type Error = CodeError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        AtcCode::parse(&value)
    }
}

impl From<AtcCode> for String {
    fn from(code: AtcCode) -> Self {
        code.text
    }
}

impl AsRef<str> for AtcCode {
    fn as_ref(&self) -> &str {
        &self.text
    }
}
