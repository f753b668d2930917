//! Bidirectional character ↔ code mappings and the strategies that build them.
//!
//! A codebook file is UTF-8 TSV with LF line endings:
//!
//! ```text
//! #strategy=basic freq_digest=<hex>
//! 0F40    B    1    1
//! 0F72    C    2    1
//! ```
//!
//! Rows are `codepoint_hex<TAB>code<TAB>rank<TAB>token_count`; a token count
//! of 0 means it was not measured. A codebook carrying a lossy character
//! transform adds `reversible=false` to the header and one
//! `@xform<TAB>codepoint_hex<TAB>replacement` row per transformed character.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::bpe::BpeModel;
use crate::codespace::{enumerate_codes, CodeSpaceError, CodeSpaceProfile, CodeString};

const XFORM_TAG: &str = "@xform";

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error(transparent)]
    Capacity(#[from] CodeSpaceError),
    #[error("character U+{:04X} appears more than once", *.0 as u32)]
    DuplicateChar(char),
    #[error("character U+{:04X} is reserved by the encoding and cannot be mapped", *.0 as u32)]
    ReservedChar(char),
    #[error("line {line}: {message}")]
    Integrity { line: usize, message: String },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How a codebook's codes were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Basic,
    TokenizerOpt,
    Hybrid,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Basic => "basic",
            Strategy::TokenizerOpt => "tokenizer_opt",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "basic" => Ok(Strategy::Basic),
            "tokenizer" | "tokenizer_opt" => Ok(Strategy::TokenizerOpt),
            "hybrid" => Ok(Strategy::Hybrid),
            _ => Err(format!("unknown strategy {s:?} (basic, tokenizer, hybrid)")),
        }
    }
}

/// Characters a codebook may never map: ASCII letters and `@` belong to the
/// encoded-text grammar, and line breaks must stay line breaks.
pub fn is_reserved(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '@' || c == '\n' || c == '\r'
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodebookEntry {
    pub ch: char,
    pub code: CodeString,
    /// 1-based frequency rank.
    pub rank: usize,
    /// Tokens the code needs in isolation; 0 when unmeasured.
    pub token_count: u32,
}

/// A lossy per-character replacement (for example, hanzi to pinyin). Its
/// output cannot be decoded back.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CharTransform {
    map: BTreeMap<char, String>,
}

impl CharTransform {
    pub fn new(map: BTreeMap<char, String>) -> Result<Self, CodebookError> {
        for (&c, r) in &map {
            if is_reserved(c) {
                return Err(CodebookError::ReservedChar(c));
            }
            if r.is_empty() || r.contains(['\n', '\r']) {
                return Err(CodebookError::Config(format!(
                    "replacement for U+{:04X} must be a non-empty single-line string",
                    c as u32
                )));
            }
        }
        Ok(CharTransform { map })
    }

    /// Parses `<char or U+hex><TAB><replacement>` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, CodebookError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| CodebookError::Format { line: i + 1, message };
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `char<TAB>replacement`".into()))?;
            let c = parse_char_field(key).ok_or_else(|| err(format!("bad character {key:?}")))?;
            if map.insert(c, value.to_string()).is_some() {
                return Err(CodebookError::Integrity {
                    line: i + 1,
                    message: format!("U+{:04X} listed twice", c as u32),
                });
            }
        }
        Self::new(map)
    }

    pub fn get(&self, c: char) -> Option<&str> {
        self.map.get(&c).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn parse_char_field(s: &str) -> Option<char> {
    let mut chars = s.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return Some(c);
    }
    let hex = s.strip_prefix("U+").or_else(|| s.strip_prefix("u+"))?;
    char::from_u32(u32::from_str_radix(hex, 16).ok()?)
}

// Dense decode table covering every code of up to three letters.
const SHORT_SLOTS: usize = 26 * 27 * 27;
const NO_CHAR: u32 = u32::MAX;

fn short_slot(code: &[u8]) -> Option<usize> {
    if code.is_empty() || code.len() > 3 {
        return None;
    }
    let hi = (code[0] - b'A') as usize;
    let l1 = code.get(1).map_or(0, |b| (b - b'a') as usize + 1);
    let l2 = code.get(2).map_or(0, |b| (b - b'a') as usize + 1);
    Some(hi * 729 + l1 * 27 + l2)
}

/// A bijection between characters and codes, with build metadata.
#[derive(Clone)]
pub struct Codebook {
    entries: Vec<CodebookEntry>,
    strategy: Strategy,
    source_digest: Option<String>,
    transform: Option<CharTransform>,
    char_index: HashMap<char, u32>,
    code_index: HashMap<Box<str>, u32>,
    short_codes: Box<[u32]>,
    max_code_len: usize,
}

impl fmt::Debug for Codebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Codebook")
            .field("strategy", &self.strategy)
            .field("entries", &self.entries.len())
            .field("source_digest", &self.source_digest)
            .field("transform", &self.transform.as_ref().map(CharTransform::len))
            .finish()
    }
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
            && self.strategy == other.strategy
            && self.source_digest == other.source_digest
            && self.transform == other.transform
    }
}

impl Eq for Codebook {}

impl Codebook {
    /// Checks the bijection and reserved characters. Errors carry the
    /// 1-based entry index as the line.
    pub fn from_entries(
        entries: Vec<CodebookEntry>,
        strategy: Strategy,
    ) -> Result<Self, CodebookError> {
        Self::from_entries_at(entries, strategy, 1)
    }

    fn from_entries_at(
        entries: Vec<CodebookEntry>,
        strategy: Strategy,
        first_line: usize,
    ) -> Result<Self, CodebookError> {
        let mut char_index = HashMap::with_capacity(entries.len());
        let mut code_index = HashMap::with_capacity(entries.len());
        let mut ranks = std::collections::HashSet::with_capacity(entries.len());
        let mut short_codes = vec![NO_CHAR; SHORT_SLOTS].into_boxed_slice();
        let mut max_code_len = 0;
        for (i, e) in entries.iter().enumerate() {
            let line = first_line + i;
            if is_reserved(e.ch) {
                return Err(CodebookError::ReservedChar(e.ch));
            }
            if char_index.insert(e.ch, i as u32).is_some() {
                return Err(CodebookError::Integrity {
                    line,
                    message: format!("duplicate character U+{:04X}", e.ch as u32),
                });
            }
            if code_index.insert(Box::from(e.code.as_str()), i as u32).is_some() {
                return Err(CodebookError::Integrity {
                    line,
                    message: format!("duplicate code {}", e.code),
                });
            }
            if e.rank == 0 || !ranks.insert(e.rank) {
                return Err(CodebookError::Integrity {
                    line,
                    message: format!("rank {} is zero or repeated", e.rank),
                });
            }
            if let Some(slot) = short_slot(e.code.as_str().as_bytes()) {
                short_codes[slot] = e.ch as u32;
            }
            max_code_len = max_code_len.max(e.code.len());
        }
        Ok(Codebook {
            entries,
            strategy,
            source_digest: None,
            transform: None,
            char_index,
            code_index,
            short_codes,
            max_code_len,
        })
    }

    /// Records the digest of the frequency table the ranking came from.
    pub fn with_source_digest(mut self, digest: impl Into<String>) -> Self {
        self.source_digest = Some(digest.into());
        self
    }

    /// Attaches a lossy transform. Its characters must not also be mapped.
    pub fn with_transform(mut self, transform: CharTransform) -> Result<Self, CodebookError> {
        if let Some(&c) = transform.map.keys().find(|c| self.char_index.contains_key(c)) {
            return Err(CodebookError::Config(format!(
                "U+{:04X} is both mapped and transformed",
                c as u32
            )));
        }
        self.transform = (!transform.is_empty()).then_some(transform);
        Ok(self)
    }

    /// Fills in token counts for every code under `model`.
    pub fn with_token_counts(mut self, model: &BpeModel) -> Self {
        for e in &mut self.entries {
            e.token_count = model.count_tokens(e.code.as_str()) as u32;
        }
        self
    }

    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn source_digest(&self) -> Option<&str> {
        self.source_digest.as_deref()
    }

    pub fn transform(&self) -> Option<&CharTransform> {
        self.transform.as_ref()
    }

    /// False when a lossy transform is attached.
    pub fn is_reversible(&self) -> bool {
        self.transform.is_none()
    }

    pub fn max_code_len(&self) -> usize {
        self.max_code_len
    }

    pub fn code_for(&self, c: char) -> Option<&CodeString> {
        self.char_index
            .get(&c)
            .map(|&i| &self.entries[i as usize].code)
    }

    pub fn char_for(&self, code: &str) -> Option<char> {
        match short_slot(code.as_bytes()) {
            Some(slot) if crate::codespace::is_valid_code(code) => {
                char::from_u32(self.short_codes[slot])
            }
            _ => self
                .code_index
                .get(code)
                .map(|&i| self.entries[i as usize].ch),
        }
    }

    /// Characters whose code is a single token (requires measured counts).
    pub fn single_token_count(&self) -> usize {
        self.entries.iter().filter(|e| e.token_count == 1).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "#strategy={} freq_digest={}",
            self.strategy,
            self.source_digest.as_deref().unwrap_or("none")
        );
        if !self.is_reversible() {
            s.push_str(" reversible=false");
        }
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:04X}\t{}\t{}\t{}",
                e.ch as u32, e.code, e.rank, e.token_count
            );
        }
        if let Some(t) = &self.transform {
            for (c, r) in &t.map {
                let _ = writeln!(s, "{XFORM_TAG}\t{:04X}\t{r}", *c as u32);
            }
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, CodebookError> {
        let text = text.strip_prefix('\u{FEFF}').unwrap_or(text);
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(CodebookError::Format {
            line: 1,
            message: "empty codebook file".into(),
        })?;
        let header = header.strip_suffix('\r').unwrap_or(header);
        let header_err = |message: String| CodebookError::Format { line: 1, message };
        let fields = header
            .strip_prefix('#')
            .ok_or_else(|| header_err("missing `#strategy=...` header".into()))?;
        let mut strategy = None;
        let mut digest = None;
        let mut reversible = true;
        for field in fields.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| header_err(format!("bad header field {field:?}")))?;
            match k {
                "strategy" => strategy = Some(v.parse::<Strategy>().map_err(header_err)?),
                "freq_digest" => digest = (v != "none").then(|| v.to_string()),
                "reversible" => {
                    reversible = v
                        .parse::<bool>()
                        .map_err(|_| header_err(format!("bad reversible flag {v:?}")))?
                }
                _ => return Err(header_err(format!("unknown header field {k:?}"))),
            }
        }
        let strategy = strategy.ok_or_else(|| header_err("header lacks strategy".into()))?;

        let mut entries = Vec::new();
        let mut xform = BTreeMap::new();
        let mut first_row_line = None;
        let mut seen_chars = std::collections::HashSet::new();
        let mut seen_codes = std::collections::HashSet::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CodebookError::Format {
                line: line_no,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0] == XFORM_TAG {
                if cols.len() != 3 {
                    return Err(err("expected `@xform<TAB>hex<TAB>replacement`".into()));
                }
                let c = parse_hex_char(cols[1]).ok_or_else(|| err(format!("bad code point {:?}", cols[1])))?;
                if xform.insert(c, cols[2].to_string()).is_some() {
                    return Err(CodebookError::Integrity {
                        line: line_no,
                        message: format!("duplicate transform for U+{:04X}", c as u32),
                    });
                }
                continue;
            }
            if cols.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, got {}", cols.len())));
            }
            let ch = parse_hex_char(cols[0]).ok_or_else(|| err(format!("bad code point {:?}", cols[0])))?;
            let code = CodeString::new(cols[1]).map_err(|e| err(e.to_string()))?;
            let rank = cols[2].parse().map_err(|_| err(format!("bad rank {:?}", cols[2])))?;
            let token_count = cols[3]
                .parse()
                .map_err(|_| err(format!("bad token count {:?}", cols[3])))?;
            let what = if !seen_chars.insert(ch) {
                Some(format!("character U+{:04X}", ch as u32))
            } else if !seen_codes.insert(code.clone()) {
                Some(format!("code {code}"))
            } else {
                None
            };
            if let Some(what) = what {
                return Err(CodebookError::Integrity {
                    line: line_no,
                    message: format!("duplicate {what}"),
                });
            }
            first_row_line.get_or_insert(line_no);
            entries.push(CodebookEntry {
                ch,
                code,
                rank,
                token_count,
            });
        }
        let mut cb = Self::from_entries_at(entries, strategy, first_row_line.unwrap_or(2))?;
        cb.source_digest = digest;
        if !xform.is_empty() {
            cb = cb.with_transform(CharTransform::new(xform)?)?;
        } else if !reversible {
            return Err(header_err("reversible=false without transform rows".into()));
        }
        Ok(cb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodebookError> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|source| CodebookError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodebookError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CodebookError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }
}

fn parse_hex_char(s: &str) -> Option<char> {
    let s = s.strip_prefix("U+").unwrap_or(s);
    if s.is_empty() || s.len() > 6 {
        return None;
    }
    char::from_u32(u32::from_str_radix(s, 16).ok()?)
}

fn check_chars(chars: &[char]) -> Result<(), CodebookError> {
    let mut seen = std::collections::HashSet::with_capacity(chars.len());
    for &c in chars {
        if is_reserved(c) {
            return Err(CodebookError::ReservedChar(c));
        }
        if !seen.insert(c) {
            return Err(CodebookError::DuplicateChar(c));
        }
    }
    Ok(())
}

/// The i-th most frequent character gets the i-th code in canonical order,
/// so shorter codes go to more frequent characters.
pub fn build_basic(chars: &[char], profile: &CodeSpaceProfile) -> Result<Codebook, CodebookError> {
    check_chars(chars)?;
    let codes = enumerate_codes(profile, chars.len())?;
    let entries = chars
        .iter()
        .zip(codes)
        .enumerate()
        .map(|(i, (&ch, code))| CodebookEntry {
            ch,
            code,
            rank: i + 1,
            token_count: 0,
        })
        .collect();
    Codebook::from_entries(entries, Strategy::Basic)
}

/// Prefers codes that are a single token under `model`, tested in isolation.
///
/// Candidates are every code of `profile`, ordered by token count and then
/// canonically. Characters are served most frequent first, each taking the
/// best remaining candidate, except that no character ever receives a code
/// with more tokens than the basic strategy's code for it: a pick that would
/// leave some later character unable to meet that bound is skipped.
pub fn build_tokenizer_optimized(
    chars: &[char],
    profile: &CodeSpaceProfile,
    model: &BpeModel,
) -> Result<Codebook, CodebookError> {
    assign_by_tokens(chars, profile, model, Strategy::TokenizerOpt)
}

/// Tokenizer-optimized codes against a merged vocabulary
/// (see [`crate::bpe::merge_vocab`]).
pub fn build_hybrid(
    chars: &[char],
    profile: &CodeSpaceProfile,
    merged: &BpeModel,
) -> Result<Codebook, CodebookError> {
    assign_by_tokens(chars, profile, merged, Strategy::Hybrid)
}

fn assign_by_tokens(
    chars: &[char],
    profile: &CodeSpaceProfile,
    model: &BpeModel,
    strategy: Strategy,
) -> Result<Codebook, CodebookError> {
    check_chars(chars)?;
    let n = chars.len();
    let ceiling = profile.total_capacity();
    if n as u64 > ceiling {
        return Err(CodeSpaceError::Capacity {
            requested: n,
            ceiling,
        }
        .into());
    }

    // Distinct token counts become buckets; each bucket lists its codes in
    // canonical order.
    let mut by_tokens: BTreeMap<usize, Vec<CodeString>> = BTreeMap::new();
    let mut basic_tokens = Vec::with_capacity(n);
    for (i, code) in profile.codes().enumerate() {
        let t = model.count_tokens(code.as_str());
        if i < n {
            basic_tokens.push(t);
        }
        by_tokens.entry(t).or_default().push(code);
    }
    let levels: Vec<usize> = by_tokens.keys().copied().collect();
    let mut buckets: Vec<std::collections::VecDeque<CodeString>> =
        by_tokens.into_values().map(Into::into).collect();
    let level_of = |t: usize| levels.binary_search(&t).expect("token level exists");
    let bounds: Vec<usize> = basic_tokens.iter().map(|&t| level_of(t)).collect();

    // need[k]: characters still to serve whose bound is level k.
    let mut need = vec![0usize; levels.len()];
    for &b in &bounds {
        need[b] += 1;
    }
    let mut entries = Vec::with_capacity(n);
    for (i, &ch) in chars.iter().enumerate() {
        let bound = bounds[i];
        need[bound] -= 1;
        let feasible = |take: usize| {
            // Hall's condition on the nested sets "bound ≤ k".
            let (mut demand, mut supply) = (0usize, 0usize);
            for k in 0..levels.len() {
                demand += need[k];
                supply += buckets[k].len() - usize::from(k == take);
                if demand > supply {
                    return false;
                }
            }
            true
        };
        let pick = (0..=bound)
            .find(|&k| !buckets[k].is_empty() && feasible(k))
            .expect("the basic assignment is always feasible");
        let code = buckets[pick].pop_front().expect("bucket is non-empty");
        entries.push(CodebookEntry {
            ch,
            code,
            rank: i + 1,
            token_count: levels[pick] as u32,
        });
    }
    Codebook::from_entries(entries, strategy)
}
