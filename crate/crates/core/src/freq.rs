//! Code point frequency analysis over corpora, partitioned by script ranges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{split_list, ConfigError, KvConfig};

/// Script name used for code points outside every configured range.
pub const OTHER_SCRIPT: &str = "other";

#[derive(Debug, Error)]
pub enum FreqError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },
    #[error("unknown script {0:?}")]
    UnknownScript(String),
    #[error("invalid script range: {0}")]
    InvalidRange(String),
    #[error("frequency table line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named set of inclusive code point intervals, sorted and disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRange {
    name: String,
    ranges: Vec<RangeInclusive<u32>>,
}

impl ScriptRange {
    pub fn new(
        name: impl Into<String>,
        ranges: impl IntoIterator<Item = RangeInclusive<u32>>,
    ) -> Result<Self, FreqError> {
        let name = name.into();
        if name.is_empty() || name == OTHER_SCRIPT || name.chars().any(char::is_whitespace) {
            return Err(FreqError::InvalidRange(format!("bad script name {name:?}")));
        }
        let mut ranges: Vec<_> = ranges.into_iter().collect();
        if ranges.is_empty() {
            return Err(FreqError::InvalidRange(format!("{name}: no intervals")));
        }
        ranges.sort_by_key(|r| *r.start());
        for r in &ranges {
            if r.start() > r.end() || *r.end() > 0x10FFFF {
                return Err(FreqError::InvalidRange(format!(
                    "{name}: bad interval {:X}-{:X}",
                    r.start(),
                    r.end()
                )));
            }
        }
        for w in ranges.windows(2) {
            if w[1].start() <= w[0].end() {
                return Err(FreqError::InvalidRange(format!(
                    "{name}: intervals {:X}-{:X} and {:X}-{:X} overlap",
                    w[0].start(),
                    w[0].end(),
                    w[1].start(),
                    w[1].end()
                )));
            }
        }
        Ok(ScriptRange { name, ranges })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ranges(&self) -> &[RangeInclusive<u32>] {
        &self.ranges
    }

    pub fn contains(&self, c: char) -> bool {
        let cp = c as u32;
        self.ranges.iter().any(|r| r.contains(&cp))
    }
}

/// Tibetan, Mongolian, Uyghur (Arabic script) and CJK unified ideographs.
pub fn default_ranges() -> Vec<ScriptRange> {
    vec![
        ScriptRange::new("Tibetan", [0x0F00..=0x0FFF]).unwrap(),
        ScriptRange::new("Mongolian", [0x1800..=0x18AF]).unwrap(),
        ScriptRange::new(
            "Uyghur",
            [0x0600..=0x06FF, 0xFB50..=0xFDFF, 0xFE70..=0xFEFF],
        )
        .unwrap(),
        ScriptRange::new("CJK", [0x4E00..=0x9FFF]).unwrap(),
    ]
}

/// Loads ranges from a config of `Name = 0F00-0FFF, ...` lines, in file order.
pub fn ranges_from_config(cfg: &KvConfig) -> Result<Vec<ScriptRange>, FreqError> {
    let mut out = Vec::new();
    for name in cfg.keys() {
        let value = cfg.get(name).unwrap_or_default();
        let mut intervals = Vec::new();
        for item in split_list(value) {
            let (a, b) = item.split_once('-').unwrap_or((item, item));
            let parse = |s: &str| {
                let s = s.trim_start_matches("U+").trim_start_matches("0x");
                u32::from_str_radix(s, 16).map_err(|_| cfg.invalid(name, format!("bad hex {s:?}")))
            };
            intervals.push(parse(a)?..=parse(b)?);
        }
        out.push(ScriptRange::new(name, intervals)?);
    }
    Ok(out)
}

pub fn ranges_to_config(ranges: &[ScriptRange]) -> String {
    let mut s = String::new();
    for r in ranges {
        let parts: Vec<String> = r
            .ranges
            .iter()
            .map(|i| format!("{:04X}-{:04X}", i.start(), i.end()))
            .collect();
        let _ = writeln!(s, "{} = {}", r.name, parts.join(", "));
    }
    s
}

/// Per-code-point counts with the script each point belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyTable {
    counts: BTreeMap<char, u64>,
    script_of: BTreeMap<char, String>,
    scripts: Vec<String>,
    total_chars: u64,
}

impl FrequencyTable {
    /// An empty table that knows the given scripts.
    pub fn new(ranges: &[ScriptRange]) -> Self {
        FrequencyTable {
            scripts: ranges.iter().map(|r| r.name.clone()).collect(),
            ..Default::default()
        }
    }

    pub fn counts(&self) -> &BTreeMap<char, u64> {
        &self.counts
    }

    pub fn count(&self, c: char) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn script_of(&self, c: char) -> Option<&str> {
        self.script_of.get(&c).map(String::as_str)
    }

    /// Configured script names, in configuration order.
    pub fn scripts(&self) -> &[String] {
        &self.scripts
    }

    pub fn total_chars(&self) -> u64 {
        self.total_chars
    }

    pub fn is_empty(&self) -> bool {
        self.total_chars == 0
    }

    fn add(&mut self, c: char, n: u64, ranges: &[ScriptRange]) {
        *self.counts.entry(c).or_insert(0) += n;
        self.total_chars += n;
        self.script_of.entry(c).or_insert_with(|| {
            ranges
                .iter()
                .find(|r| r.contains(c))
                .map(|r| r.name.clone())
                .unwrap_or_else(|| OTHER_SCRIPT.to_string())
        });
    }

    /// Counts every character of `text`.
    pub fn add_text(&mut self, text: &str, ranges: &[ScriptRange]) {
        for c in text.chars() {
            self.add(c, 1, ranges);
        }
    }

    /// Pointwise sum. Both tables must come from the same ranges.
    pub fn merge(&mut self, other: &FrequencyTable) {
        for (&c, &n) in &other.counts {
            *self.counts.entry(c).or_insert(0) += n;
            if let Some(s) = other.script_of.get(&c) {
                self.script_of.entry(c).or_insert_with(|| s.clone());
            }
        }
        self.total_chars += other.total_chars;
        for s in &other.scripts {
            if !self.scripts.contains(s) {
                self.scripts.push(s.clone());
            }
        }
    }

    /// Entries sorted by descending count, ties by ascending code point.
    pub fn ranked(&self) -> Vec<(char, u64)> {
        let mut v: Vec<(char, u64)> = self.counts.iter().map(|(&c, &n)| (c, n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// Code points of `script` with count ≥ `min_count`, most frequent first.
    pub fn charset_for(&self, script: &str, min_count: u64) -> Result<Vec<char>, FreqError> {
        if !self.scripts.iter().any(|s| s == script) {
            return Err(FreqError::UnknownScript(script.to_string()));
        }
        Ok(self
            .ranked()
            .into_iter()
            .filter(|&(c, n)| n >= min_count && self.script_of(c) == Some(script))
            .map(|(c, _)| c)
            .collect())
    }

    /// One frequency-ordered list over several scripts.
    pub fn merged_charset(&self, scripts: &[&str], min_count: u64) -> Result<Vec<char>, FreqError> {
        for s in scripts {
            if !self.scripts.iter().any(|k| k == s) {
                return Err(FreqError::UnknownScript(s.to_string()));
            }
        }
        Ok(self
            .ranked()
            .into_iter()
            .filter(|&(c, n)| {
                n >= min_count && self.script_of(c).is_some_and(|s| scripts.contains(&s))
            })
            .map(|(c, _)| c)
            .collect())
    }

    /// `codepoint<TAB>hex<TAB>script<TAB>count` rows, most frequent first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (c, n) in self.ranked() {
            let _ = writeln!(
                out,
                "{}\t{:04X}\t{}\t{}",
                c as u32,
                c as u32,
                self.script_of(c).unwrap_or(OTHER_SCRIPT),
                n
            );
        }
        out
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_tsv().as_bytes())
    }

    /// Parses [`FrequencyTable::to_tsv`] output. The script list is rebuilt
    /// from the rows, in first-appearance order.
    pub fn from_tsv(text: &str) -> Result<Self, FreqError> {
        let mut table = FrequencyTable::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| FreqError::Format {
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let dec: u32 = fields[0]
                .parse()
                .map_err(|_| err(format!("bad code point {:?}", fields[0])))?;
            let hex = u32::from_str_radix(fields[1], 16)
                .map_err(|_| err(format!("bad hex {:?}", fields[1])))?;
            if dec != hex {
                return Err(err(format!("code point {dec} disagrees with hex {}", fields[1])));
            }
            let c = char::from_u32(dec).ok_or_else(|| err(format!("{dec:X} is not a scalar value")))?;
            let script = fields[2];
            let n: u64 = fields[3]
                .parse()
                .map_err(|_| err(format!("bad count {:?}", fields[3])))?;
            if n == 0 {
                return Err(err("count must be positive".into()));
            }
            if table.counts.insert(c, n).is_some() {
                return Err(err(format!("duplicate code point {dec:04X}")));
            }
            table.total_chars += n;
            table.script_of.insert(c, script.to_string());
            if script != OTHER_SCRIPT && !table.scripts.iter().any(|s| s == script) {
                table.scripts.push(script.to_string());
            }
        }
        Ok(table)
    }

    /// SHA-256 over the canonical TSV, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_tsv().as_bytes());
        hash.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Distinct script names actually present, excluding `other`.
    pub fn present_scripts(&self) -> BTreeSet<&str> {
        self.script_of
            .values()
            .map(String::as_str)
            .filter(|s| *s != OTHER_SCRIPT)
            .collect()
    }
}

/// Counts every code point of `reader`, line by line. Line terminators (LF
/// and a CR directly before it) are not counted.
pub fn scan_corpus<R: BufRead>(
    mut reader: R,
    ranges: &[ScriptRange],
) -> Result<FrequencyTable, FreqError> {
    let mut table = FrequencyTable::new(ranges);
    let mut buf = Vec::new();
    let mut offset = 0u64;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let mut line: &[u8] = &buf;
        if let Some(rest) = line.strip_suffix(b"\n") {
            line = rest.strip_suffix(b"\r").unwrap_or(rest);
        }
        let text = std::str::from_utf8(line).map_err(|e| FreqError::InvalidUtf8 {
            offset: offset + e.valid_up_to() as u64,
        })?;
        table.add_text(text, ranges);
        offset += n as u64;
    }
    Ok(table)
}

pub fn scan_str(text: &str, ranges: &[ScriptRange]) -> FrequencyTable {
    scan_corpus(text.as_bytes(), ranges).expect("str input is valid UTF-8")
}
