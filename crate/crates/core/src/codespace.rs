//! The structured code space: one uppercase ASCII letter followed by zero or
//! more lowercase letters (`[A-Z][a-z]*`), enumerated shortest-first.
//!
//! Because every code carries exactly one uppercase letter and it sits at
//! the front, a concatenation of codes splits unambiguously at uppercase
//! letters even though the code set is not prefix-free.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{split_list, ConfigError, KvConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeSpaceError {
    #[error("requested {requested} codes but the profile only holds {ceiling}")]
    Capacity { requested: usize, ceiling: u64 },
    #[error("invalid code {0:?}: expected one uppercase letter followed by lowercase letters")]
    InvalidCode(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// Returns true iff `s` matches `[A-Z][a-z]*`.
pub fn is_valid_code(s: &str) -> bool {
    let bytes = s.as_bytes();
    match bytes.split_first() {
        Some((first, rest)) => {
            first.is_ascii_uppercase() && rest.iter().all(u8::is_ascii_lowercase)
        }
        None => false,
    }
}

/// A validated code. Orders by length first, then by text.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CodeString(Box<str>);

impl CodeString {
    pub fn new(s: &str) -> Result<Self, CodeSpaceError> {
        if is_valid_code(s) {
            Ok(CodeString(s.into()))
        } else {
            Err(CodeSpaceError::InvalidCode(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Length in bytes, which for codes equals length in characters.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Ord for CodeString {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for CodeString {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CodeString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for CodeString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl AsRef<str> for CodeString {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl FromStr for CodeString {
    type Err = CodeSpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CodeString::new(s)
    }
}

/// Number of codes of exactly `length` letters when nothing is excluded.
pub fn unrestricted_capacity(length: u32) -> u64 {
    if length == 0 {
        return 0;
    }
    26u64.saturating_pow(length)
}

/// Which part of the code space a deployment draws from.
///
/// Single-letter codes are the uppercase alphabet minus
/// `excluded_single_letters`. Longer codes start with one of
/// `multi_initials` (kept sorted) followed by any lowercase letters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpaceProfile {
    max_len: usize,
    excluded_single_letters: BTreeSet<char>,
    multi_initials: Vec<char>,
}

impl CodeSpaceProfile {
    pub fn new(
        max_len: usize,
        excluded_single_letters: impl IntoIterator<Item = char>,
        multi_initials: impl IntoIterator<Item = char>,
    ) -> Result<Self, CodeSpaceError> {
        if max_len == 0 {
            return Err(CodeSpaceError::InvalidProfile(
                "max_len must be at least 1".into(),
            ));
        }
        let excluded: BTreeSet<char> = excluded_single_letters.into_iter().collect();
        let initials: BTreeSet<char> = multi_initials.into_iter().collect();
        if let Some(c) = excluded
            .iter()
            .chain(initials.iter())
            .find(|c| !c.is_ascii_uppercase())
        {
            return Err(CodeSpaceError::InvalidProfile(format!(
                "{c:?} is not an uppercase ASCII letter"
            )));
        }
        Ok(CodeSpaceProfile {
            max_len,
            excluded_single_letters: excluded,
            multi_initials: initials.into_iter().collect(),
        })
    }

    /// Every code up to `max_len` letters, no exclusions.
    pub fn unrestricted(max_len: usize) -> Self {
        Self::new(max_len, [], 'A'..='Z').expect("unrestricted profile is valid")
    }

    /// The 162-slot layout: single letters B..X without I and O (21 codes),
    /// then two-letter codes with initials A..F (156 slots, of which the
    /// first 141 end at `Fk`).
    pub fn compact() -> Self {
        Self::new(2, ['A', 'I', 'O', 'Y', 'Z'], 'A'..='F').expect("compact profile is valid")
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn excluded_single_letters(&self) -> &BTreeSet<char> {
        &self.excluded_single_letters
    }

    pub fn multi_initials(&self) -> &[char] {
        &self.multi_initials
    }

    fn single_letters(&self) -> impl Iterator<Item = char> + '_ {
        ('A'..='Z').filter(|c| !self.excluded_single_letters.contains(c))
    }

    /// Number of codes of exactly `length` letters under this profile.
    pub fn capacity(&self, length: usize) -> u64 {
        match length {
            0 => 0,
            l if l > self.max_len => 0,
            1 => 26 - self.excluded_single_letters.len() as u64,
            l => (self.multi_initials.len() as u64)
                .saturating_mul(26u64.saturating_pow(l as u32 - 1)),
        }
    }

    pub fn total_capacity(&self) -> u64 {
        (1..=self.max_len)
            .map(|l| self.capacity(l))
            .fold(0u64, u64::saturating_add)
    }

    /// All codes in canonical order: length-major, alphabetical within a length.
    pub fn codes(&self) -> Codes<'_> {
        Codes {
            profile: self,
            singles: self.single_letters().collect(),
            len: 1,
            index: 0,
        }
    }

    /// Reads `max_len`, `excluded_single_letters` and `two_char_first_letters`.
    /// Missing keys take the [`CodeSpaceProfile::compact`] values.
    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        cfg.deny_unknown(&["max_len", "excluded_single_letters", "two_char_first_letters"])?;
        let base = Self::compact();
        let max_len = cfg.parse_opt::<usize>("max_len")?.unwrap_or(base.max_len);
        let excluded = match cfg.get("excluded_single_letters") {
            Some(v) => parse_letter_set(v)
                .map_err(|m| cfg.invalid("excluded_single_letters", m))?,
            None => base.excluded_single_letters.iter().copied().collect(),
        };
        let initials = match cfg.get("two_char_first_letters") {
            Some(v) => {
                parse_letter_set(v).map_err(|m| cfg.invalid("two_char_first_letters", m))?
            }
            None => base.multi_initials.clone(),
        };
        Self::new(max_len, excluded, initials).map_err(|e| ConfigError::Other(e.to_string()))
    }

    pub fn to_config_string(&self) -> String {
        let excluded: Vec<String> = self
            .excluded_single_letters
            .iter()
            .map(char::to_string)
            .collect();
        let initials: Vec<String> = self.multi_initials.iter().map(char::to_string).collect();
        format!(
            "max_len = {}\nexcluded_single_letters = {}\ntwo_char_first_letters = {}\n",
            self.max_len,
            excluded.join(","),
            initials.join(",")
        )
    }
}

impl Default for CodeSpaceProfile {
    fn default() -> Self {
        Self::compact()
    }
}

/// Parses letters and ranges such as `A,I,O` or `A-F` or `B..X`.
pub fn parse_letter_set(value: &str) -> Result<Vec<char>, String> {
    let mut out = Vec::new();
    for item in split_list(value) {
        let range = item
            .split_once("..")
            .or_else(|| item.split_once('-'));
        match range {
            Some((a, b)) => {
                let (a, b) = (single_letter(a)?, single_letter(b)?);
                if a > b {
                    return Err(format!("empty letter range {item}"));
                }
                out.extend(a..=b);
            }
            None => out.push(single_letter(item)?),
        }
    }
    Ok(out)
}

fn single_letter(s: &str) -> Result<char, String> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => Ok(c),
        _ => Err(format!("{s:?} is not a single uppercase letter")),
    }
}

/// Iterator over a profile's codes in canonical order.
pub struct Codes<'a> {
    profile: &'a CodeSpaceProfile,
    singles: Vec<char>,
    len: usize,
    index: u64,
}

impl Iterator for Codes<'_> {
    type Item = CodeString;

    fn next(&mut self) -> Option<CodeString> {
        loop {
            if self.len > self.profile.max_len {
                return None;
            }
            if self.index >= self.profile.capacity(self.len) {
                self.len += 1;
                self.index = 0;
                continue;
            }
            let code = if self.len == 1 {
                self.singles[self.index as usize].to_string()
            } else {
                let tail_len = self.len - 1;
                let tail_space = 26u64.pow(tail_len as u32);
                let initial = self.profile.multi_initials[(self.index / tail_space) as usize];
                let mut rem = self.index % tail_space;
                let mut tail = vec![b'a'; tail_len];
                for slot in tail.iter_mut().rev() {
                    *slot = b'a' + (rem % 26) as u8;
                    rem /= 26;
                }
                let mut s = String::with_capacity(self.len);
                s.push(initial);
                s.push_str(std::str::from_utf8(&tail).expect("ascii"));
                s
            };
            self.index += 1;
            return Some(CodeString(code.into()));
        }
    }
}

/// The first `count` codes of `profile` in canonical order.
pub fn enumerate_codes(
    profile: &CodeSpaceProfile,
    count: usize,
) -> Result<Vec<CodeString>, CodeSpaceError> {
    let ceiling = profile.total_capacity();
    if count as u64 > ceiling {
        return Err(CodeSpaceError::Capacity {
            requested: count,
            ceiling,
        });
    }
    Ok(profile.codes().take(count).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validity() {
        assert!(is_valid_code("B"));
        assert!(is_valid_code("Aa"));
        assert!(is_valid_code("Zzzz"));
        for bad in ["aB", "", "AB", "A1", "Ä", "a", "Ab C"] {
            assert!(!is_valid_code(bad), "{bad:?}");
        }
    }

    #[test]
    fn capacity_table() {
        let p = CodeSpaceProfile::unrestricted(4);
        assert_eq!(p.capacity(1), 26);
        assert_eq!(p.capacity(2), 676);
        assert_eq!(p.capacity(3), 17_576);
        assert_eq!(p.capacity(4), 456_976);
        assert_eq!(p.capacity(5), 0);
        assert_eq!(p.total_capacity(), 475_254);
        assert_eq!((1..=4).map(unrestricted_capacity).sum::<u64>(), 475_254);
    }

    #[test]
    fn unrestricted_single_letters() {
        let codes = enumerate_codes(&CodeSpaceProfile::unrestricted(4), 26).unwrap();
        let text: String = codes.iter().map(CodeString::as_str).collect();
        assert_eq!(text, "ABCDEFGHIJKLMNOPQRSTUVWXYZ");
    }

    #[test]
    fn unrestricted_enumeration_is_complete() {
        let p = CodeSpaceProfile::unrestricted(4);
        let codes = enumerate_codes(&p, 475_254).unwrap();
        assert_eq!(codes.len(), 475_254);
        assert_eq!(codes[26].as_str(), "Aa");
        assert_eq!(codes[26 + 676 - 1].as_str(), "Zz");
        assert_eq!(codes.last().unwrap().as_str(), "Zzzz");
        assert!(matches!(
            enumerate_codes(&p, 475_255),
            Err(CodeSpaceError::Capacity { ceiling: 475_254, .. })
        ));
    }

    #[test]
    fn compact_profile_layout() {
        let p = CodeSpaceProfile::compact();
        let codes = enumerate_codes(&p, 162).unwrap();
        let singles: Vec<&str> = codes.iter().filter(|c| c.len() == 1).map(|c| c.as_str()).collect();
        assert_eq!(singles.len(), 21);
        assert_eq!(singles.first(), Some(&"B"));
        assert_eq!(singles.last(), Some(&"X"));
        assert!(!singles.contains(&"I") && !singles.contains(&"O"));
        assert_eq!(codes.iter().filter(|c| c.len() == 2).count(), 141);
        assert_eq!(codes[21].as_str(), "Aa");
        assert_eq!(codes[161].as_str(), "Fk");
        assert_eq!(p.total_capacity(), 21 + 156);
    }

    #[test]
    fn profile_from_config() {
        let cfg = KvConfig::parse(
            "max_len = 3\nexcluded_single_letters = I, O\ntwo_char_first_letters = A..C\n",
        )
        .unwrap();
        let p = CodeSpaceProfile::from_config(&cfg).unwrap();
        assert_eq!(p.max_len(), 3);
        assert_eq!(p.capacity(1), 24);
        assert_eq!(p.capacity(3), 3 * 676);
        let back = CodeSpaceProfile::from_config(&KvConfig::parse(&p.to_config_string()).unwrap())
            .unwrap();
        assert_eq!(back, p);

        let empty = CodeSpaceProfile::from_config(&KvConfig::parse("").unwrap()).unwrap();
        assert_eq!(empty, CodeSpaceProfile::compact());

        let bad = KvConfig::parse("excluded_single_letters = a").unwrap();
        assert!(CodeSpaceProfile::from_config(&bad).is_err());
        assert!(CodeSpaceProfile::new(0, [], []).is_err());
    }

    fn arb_profile() -> impl Strategy<Value = CodeSpaceProfile> {
        (
            1usize..=3,
            prop::collection::btree_set(0u8..26, 0..26),
            prop::collection::btree_set(0u8..26, 0..26),
        )
            .prop_map(|(max_len, ex, ini)| {
                CodeSpaceProfile::new(
                    max_len,
                    ex.into_iter().map(|b| (b'A' + b) as char),
                    ini.into_iter().map(|b| (b'A' + b) as char),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn enumeration_sorted_unique_valid(p in arb_profile(), frac in 0.0f64..=1.0) {
            let total = p.total_capacity() as usize;
            let count = (total as f64 * frac) as usize;
            let codes = enumerate_codes(&p, count).unwrap();
            prop_assert_eq!(codes.len(), count);
            for w in codes.windows(2) {
                prop_assert!(w[0] < w[1], "{:?} !< {:?}", w[0], w[1]);
            }
            for c in &codes {
                prop_assert!(is_valid_code(c.as_str()));
                prop_assert!(c.len() <= p.max_len());
            }
            for l in 1..=p.max_len() {
                let n = p.codes().filter(|c| c.len() == l).count() as u64;
                prop_assert_eq!(n, p.capacity(l));
            }
        }
    }
}
