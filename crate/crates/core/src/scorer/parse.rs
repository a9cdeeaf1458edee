//! Extracting an integer score from generated text.
//!
//! Rationalization answers carry the score on their first nonempty line; CoT
//! answers on their last. Within the chosen line the first maximal run of
//! ASCII digits is the score, so `Score: 92` and `92/100` both read as 92.
//! A sign is not part of the token. Generations cut short by a small
//! `max_new_tokens` may truncate a multi-digit score; the parser cannot tell
//! and returns whatever complete digit run it sees.

use crate::domain::QualityScore;
use crate::error::{Error, Result};

use super::prompt::PromptMode;

/// First maximal decimal digit run in `line`, saturating at `u64::MAX`.
fn first_integer(line: &str) -> Option<u64> {
    let bytes = line.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let value = bytes[start..]
        .iter()
        .take_while(|b| b.is_ascii_digit())
        .fold(0u64, |acc, b| {
            acc.saturating_mul(10).saturating_add(u64::from(b - b'0'))
        });
    Some(value)
}

pub fn parse_score(raw: &str, mode: PromptMode) -> Result<QualityScore> {
    let mut lines = raw.lines().map(str::trim).filter(|l| !l.is_empty());
    let found = match mode {
        PromptMode::Rationalization => lines.next().and_then(first_integer),
        PromptMode::Cot => lines.rev().find_map(first_integer),
    };
    let n = found.ok_or_else(|| Error::NoScoreFound(raw.to_owned()))?;
    if n > u64::from(QualityScore::MAX) {
        return Err(Error::OutOfRange(n));
    }
    Ok(QualityScore::new(n as i64).expect("checked bound"))
}
