//! Byte-pair encoding: applying a merge list, training one, and merging
//! vocabularies.
//!
//! Pre-tokenization splits text into maximal non-whitespace runs ("words");
//! every whitespace character stands alone as a literal token. Within a word,
//! merges are applied lowest rank first. All occurrences of the current
//! best pair are merged left to right in one sweep before the next rank is
//! considered, so results match a naive full-rescan implementation exactly.
//!
//! On disk a model is a directory with `vocab.txt` (one token per line, in
//! rank order) and `merges.txt` (one space-separated pair per line, optional
//! `#version` header). Tokens are escaped so they never contain raw
//! whitespace: `\s` space, `\t`, `\n`, `\r` and `\\`.

use std::cmp::{Ordering, Reverse};
use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MERGES_FILE: &str = "merges.txt";
pub const UNK_TOKEN: &str = "<unk>";
const MERGES_HEADER: &str = "#version: 0.2";

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("{file} line {line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },
    #[error("inconsistent model: {0}")]
    Integrity(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const NO_ID: u32 = u32::MAX;

/// A BPE vocabulary with its ordered merge rules.
#[derive(Debug, Clone)]
pub struct BpeModel {
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    byte_fallback: bool,
    // Symbol ids: 0..vocab.len() are vocabulary entries; ids past that are
    // merge operands that are not themselves vocabulary tokens.
    symbol_ids: HashMap<String, u32>,
    merge_table: HashMap<(u32, u32), (u32, u32)>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.merges == other.merges
            && self.byte_fallback == other.byte_fallback
    }
}

impl Eq for BpeModel {}

impl BpeModel {
    pub fn new(
        vocab: Vec<String>,
        merges: Vec<(String, String)>,
        byte_fallback: bool,
    ) -> Result<Self, BpeError> {
        let mut symbol_ids = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if tok.is_empty() {
                return Err(BpeError::Integrity(format!("empty token at rank {i}")));
            }
            if symbol_ids.insert(tok.clone(), i as u32).is_some() {
                return Err(BpeError::Integrity(format!("duplicate vocab entry {tok:?}")));
            }
        }
        let mut next_id = vocab.len() as u32;
        let mut merge_table = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            if a.is_empty() || b.is_empty() {
                return Err(BpeError::Integrity(format!("empty operand in merge {rank}")));
            }
            let joined = format!("{a}{b}");
            let result = *symbol_ids.get(&joined).filter(|&&id| (id as usize) < vocab.len()).ok_or_else(|| {
                BpeError::Integrity(format!("merge {a:?} + {b:?} produces {joined:?}, which is not in the vocabulary"))
            })?;
            let mut id_of = |s: &String| match symbol_ids.entry(s.clone()) {
                Entry::Occupied(e) => *e.get(),
                Entry::Vacant(e) => {
                    next_id += 1;
                    *e.insert(next_id - 1)
                }
            };
            let key = (id_of(a), id_of(b));
            // First occurrence wins; later duplicates can never fire.
            merge_table.entry(key).or_insert((rank as u32, result));
        }
        Ok(BpeModel {
            vocab,
            merges,
            byte_fallback,
            symbol_ids,
            merge_table,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.symbol_ids
            .get(token)
            .is_some_and(|&id| (id as usize) < self.vocab.len())
    }

    /// Splits `text` into tokens.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for_each_piece(text, |piece| {
            for sym in self.merge_word(piece) {
                let s = &piece[sym.start..sym.end];
                if (sym.id as usize) < self.vocab.len() {
                    out.push(s.to_string());
                } else if self.byte_fallback {
                    out.extend(s.bytes().map(|b| format!("<0x{b:02X}>")));
                } else {
                    out.push(UNK_TOKEN.to_string());
                }
            }
        });
        out
    }

    /// `tokenize(text).len()` without building the strings.
    pub fn count_tokens(&self, text: &str) -> usize {
        let mut n = 0;
        for_each_piece(text, |piece| {
            for sym in self.merge_word(piece) {
                n += if (sym.id as usize) < self.vocab.len() || !self.byte_fallback {
                    1
                } else {
                    sym.end - sym.start
                };
            }
        });
        n
    }

    fn merge_word(&self, word: &str) -> Vec<Sym> {
        let mut syms: Vec<Sym> = word
            .char_indices()
            .map(|(i, c)| {
                let end = i + c.len_utf8();
                Sym {
                    id: self.symbol_ids.get(&word[i..end]).copied().unwrap_or(NO_ID),
                    start: i,
                    end,
                }
            })
            .collect();
        let n = syms.len();
        if n < 2 || self.merge_table.is_empty() {
            return syms;
        }
        let mut next: Vec<usize> = (1..=n).collect();
        let mut prev: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect();
        let mut alive = vec![true; n];
        let rank_at = |syms: &[Sym], next: &[usize], p: usize| -> Option<(u32, u32)> {
            let q = next[p];
            if q >= syms.len() {
                return None;
            }
            self.merge_table.get(&(syms[p].id, syms[q].id)).copied()
        };
        let mut heap: BinaryHeap<Reverse<(u32, usize)>> = BinaryHeap::new();
        for p in 0..n - 1 {
            if let Some((rank, _)) = rank_at(&syms, &next, p) {
                heap.push(Reverse((rank, p)));
            }
        }
        let mut batch = Vec::new();
        let mut touched = Vec::new();
        while let Some(Reverse((rank, p))) = heap.pop() {
            batch.clear();
            batch.push(p);
            while let Some(&Reverse((r, q))) = heap.peek() {
                if r != rank {
                    break;
                }
                heap.pop();
                batch.push(q);
            }
            touched.clear();
            for &p in &batch {
                if !alive[p] {
                    continue;
                }
                let Some((r, result)) = rank_at(&syms, &next, p) else {
                    continue;
                };
                if r != rank {
                    continue;
                }
                let q = next[p];
                syms[p].id = result;
                syms[p].end = syms[q].end;
                alive[q] = false;
                next[p] = next[q];
                if next[q] < n {
                    prev[next[q]] = p;
                }
                touched.push(p);
            }
            for &p in &touched {
                if !alive[p] {
                    continue;
                }
                if let Some((r, _)) = rank_at(&syms, &next, p) {
                    heap.push(Reverse((r, p)));
                }
                let l = prev[p];
                if l < n {
                    if let Some((r, _)) = rank_at(&syms, &next, l) {
                        heap.push(Reverse((r, l)));
                    }
                }
            }
        }
        syms.into_iter()
            .zip(alive)
            .filter_map(|(s, a)| a.then_some(s))
            .collect()
    }

    /// Reads `vocab.txt` and `merges.txt` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BpeError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| BpeError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        Self::from_strs(&read(VOCAB_FILE)?, &read(MERGES_FILE)?)
    }

    pub fn from_strs(vocab_txt: &str, merges_txt: &str) -> Result<Self, BpeError> {
        let mut vocab = Vec::new();
        for (i, raw) in vocab_txt.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            vocab.push(unescape(line).map_err(|message| BpeError::Format {
                file: VOCAB_FILE.into(),
                line: i + 1,
                message,
            })?);
        }
        let mut merges = Vec::new();
        let mut byte_fallback = false;
        for (i, raw) in merges_txt.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let err = |message: String| BpeError::Format {
                file: MERGES_FILE.into(),
                line: i + 1,
                message,
            };
            if i == 0 && line.starts_with("#version") {
                byte_fallback = line.split_whitespace().any(|f| f == "byte_fallback=true");
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| err(format!("expected `left right`, got {line:?}")))?;
            if b.contains(' ') {
                return Err(err(format!("expected exactly two tokens, got {line:?}")));
            }
            merges.push((unescape(a).map_err(err)?, unescape(b).map_err(err)?));
        }
        Self::new(vocab, merges, byte_fallback)
    }

    pub fn vocab_txt(&self) -> String {
        let mut s = String::new();
        for tok in &self.vocab {
            s.push_str(&escape(tok));
            s.push('\n');
        }
        s
    }

    pub fn merges_txt(&self) -> String {
        let mut s = format!("{MERGES_HEADER} byte_fallback={}\n", self.byte_fallback);
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{} {}", escape(a), escape(b));
        }
        s
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), BpeError> {
        let dir = dir.as_ref();
        let io = |path: &Path, source| BpeError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let vp = dir.join(VOCAB_FILE);
        fs::write(&vp, self.vocab_txt()).map_err(|e| io(&vp, e))?;
        let mp = dir.join(MERGES_FILE);
        fs::write(&mp, self.merges_txt()).map_err(|e| io(&mp, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Sym {
    id: u32,
    start: usize,
    end: usize,
}

/// Calls `f` on each pre-token: maximal non-whitespace runs and single
/// whitespace characters.
fn for_each_piece<'a>(text: &'a str, mut f: impl FnMut(&'a str)) {
    let mut word_start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = word_start.take() {
                f(&text[s..i]);
            }
            f(&text[i..i + c.len_utf8()]);
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(s) = word_start {
        f(&text[s..]);
    }
}

fn escape(tok: &str) -> String {
    let mut s = String::with_capacity(tok.len());
    for c in tok.chars() {
        match c {
            '\\' => s.push_str("\\\\"),
            ' ' => s.push_str("\\s"),
            '\t' => s.push_str("\\t"),
            '\n' => s.push_str("\\n"),
            '\r' => s.push_str("\\r"),
            c => s.push(c),
        }
    }
    s
}

fn unescape(field: &str) -> Result<String, String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    left: String,
    right: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    // Highest count first; ties go to the lexicographically smallest pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Trains a model on the lines of `corpus` until it holds `target_vocab`
/// tokens or no adjacent pair is left to merge.
pub fn train<R: BufRead>(corpus: R, target_vocab: usize) -> Result<BpeModel, BpeError> {
    let mut word_counts: HashMap<String, i64> = HashMap::new();
    let mut alphabet: std::collections::BTreeSet<char> = Default::default();
    for line in corpus.lines() {
        let line = line.map_err(|source| BpeError::Io {
            path: "<corpus>".into(),
            source,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        alphabet.extend(line.chars());
        for_each_piece(line, |piece| {
            if !piece.starts_with(char::is_whitespace) {
                *word_counts.entry(piece.to_string()).or_insert(0) += 1;
            }
        });
    }
    if alphabet.is_empty() {
        return Err(BpeError::Config("training corpus is empty".into()));
    }
    if alphabet.len() > target_vocab {
        return Err(BpeError::Config(format!(
            "corpus alphabet has {} symbols, more than the target vocabulary of {target_vocab}",
            alphabet.len()
        )));
    }

    let mut vocab: Vec<String> = alphabet.iter().map(char::to_string).collect();
    let mut ids: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    // Sorted so training order never depends on hash iteration.
    let mut words: Vec<(Vec<u32>, i64)> = word_counts
        .into_iter()
        .collect::<BTreeMap<_, _>>()
        .into_iter()
        .map(|(w, n)| (w.chars().map(|c| ids[&c.to_string()]).collect(), n))
        .collect();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, n)) in words.iter().enumerate() {
        for w in syms.windows(2) {
            *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
            where_.entry((w[0], w[1])).or_default().insert(wi);
        }
    }
    let candidate = |vocab: &[String], pair: (u32, u32), count: i64| Candidate {
        count,
        left: vocab[pair.0 as usize].clone(),
        right: vocab[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&p, &c)| candidate(&vocab, p, c))
        .collect();

    let mut merges = Vec::new();
    while vocab.len() < target_vocab {
        let Some(best) = heap.pop() else { break };
        let current = pair_counts.get(&best.pair).copied().unwrap_or(0);
        if current != best.count || current <= 0 {
            continue;
        }
        let (a, b) = best.pair;
        let joined = format!("{}{}", best.left, best.right);
        let new_id = match ids.get(&joined) {
            Some(&id) => id,
            None => {
                let id = vocab.len() as u32;
                vocab.push(joined.clone());
                ids.insert(joined, id);
                id
            }
        };
        merges.push((best.left, best.right));

        let mut delta: HashMap<(u32, u32), i64> = HashMap::new();
        let mut affected: Vec<usize> = where_.remove(&(a, b)).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let (syms, n) = &mut words[wi];
            if !syms.windows(2).any(|w| w[0] == a && w[1] == b) {
                continue;
            }
            for w in syms.windows(2) {
                *delta.entry((w[0], w[1])).or_insert(0) -= *n;
            }
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(syms[i]);
                    i += 1;
                }
            }
            *syms = merged;
            for w in syms.windows(2) {
                *delta.entry((w[0], w[1])).or_insert(0) += *n;
                where_.entry((w[0], w[1])).or_default().insert(wi);
            }
        }
        let mut changed: Vec<((u32, u32), i64)> = delta.into_iter().filter(|&(_, d)| d != 0).collect();
        changed.sort_unstable();
        for (pair, d) in changed {
            let c = pair_counts.entry(pair).or_insert(0);
            *c += d;
            if *c > 0 {
                heap.push(candidate(&vocab, pair, *c));
            }
        }
    }
    BpeModel::new(vocab, merges, false)
}

/// Union of two models: `base` tokens in order, then the new tokens of
/// `extra` in order; merges concatenated base-first without repeats.
pub fn merge_vocab(base: &BpeModel, extra: &BpeModel) -> Result<BpeModel, BpeError> {
    let mut vocab = base.vocab.clone();
    let mut seen: HashSet<&str> = base.vocab.iter().map(String::as_str).collect();
    for tok in &extra.vocab {
        if seen.insert(tok) {
            vocab.push(tok.clone());
        }
    }
    let mut merges = base.merges.clone();
    let mut seen_merges: HashSet<(&str, &str)> = base
        .merges
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    for (a, b) in &extra.merges {
        if seen_merges.insert((a, b)) {
            merges.push((a.clone(), b.clone()));
        }
    }
    BpeModel::new(vocab, merges, base.byte_fallback || extra.byte_fallback)
}

/// Counts of strings by how many tokens each needs: 1, 2, 3, 4 or more.
/// Strings that produce no tokens are not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenHistogram {
    pub buckets: [u64; 4],
}

impl TokenHistogram {
    pub fn add(&mut self, tokens: usize) {
        if tokens > 0 {
            self.buckets[tokens.min(4) - 1] += 1;
        }
    }

    pub fn get(&self, tokens: usize) -> u64 {
        match tokens {
            0 => 0,
            t => self.buckets[t.min(4) - 1],
        }
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().sum()
    }

    /// `bucket<TAB>count` lines for buckets `1`, `2`, `3`, `4+`.
    pub fn to_tsv(&self) -> String {
        let labels = ["1", "2", "3", "4+"];
        labels
            .iter()
            .zip(self.buckets)
            .map(|(l, n)| format!("{l}\t{n}\n"))
            .collect()
    }
}

pub fn token_length_histogram<'a>(
    strings: impl IntoIterator<Item = &'a str>,
    model: &BpeModel,
) -> TokenHistogram {
    let mut h = TokenHistogram::default();
    for s in strings {
        h.add(model.count_tokens(s));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn model(vocab: &[&str], merges: &[(&str, &str)]) -> BpeModel {
        BpeModel::new(
            vocab.iter().map(|s| s.to_string()).collect(),
            merges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            false,
        )
        .unwrap()
    }

    /// Reference applier: rescans the whole symbol list for the lowest-rank
    /// pair, merges every occurrence left to right, repeats.
    fn naive_tokenize(m: &BpeModel, text: &str) -> Vec<String> {
        let ranks: HashMap<(&str, &str), usize> = m
            .merges()
            .iter()
            .enumerate()
            .rev()
            .map(|(i, (a, b))| ((a.as_str(), b.as_str()), i))
            .collect();
        let mut pieces: Vec<String> = Vec::new();
        let mut cur = String::new();
        for c in text.chars() {
            if c.is_whitespace() {
                if !cur.is_empty() {
                    pieces.push(std::mem::take(&mut cur));
                }
                pieces.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            pieces.push(cur);
        }
        let mut out = Vec::new();
        for piece in pieces {
            let mut syms: Vec<String> = piece.chars().map(String::from).collect();
            loop {
                let best = syms
                    .windows(2)
                    .filter_map(|w| ranks.get(&(w[0].as_str(), w[1].as_str())).copied())
                    .min();
                let Some(best) = best else { break };
                let (a, b) = &m.merges()[best];
                let mut next = Vec::new();
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                        next.push(format!("{a}{b}"));
                        i += 2;
                    } else {
                        next.push(syms[i].clone());
                        i += 1;
                    }
                }
                syms = next;
            }
            for s in syms {
                if m.contains(&s) {
                    out.push(s);
                } else if m.byte_fallback() {
                    out.extend(s.bytes().map(|b| format!("<0x{b:02X}>")));
                } else {
                    out.push(UNK_TOKEN.into());
                }
            }
        }
        out
    }

    #[test]
    fn single_merge() {
        let m = model(&["A", "a", "Aa"], &[("A", "a")]);
        assert_eq!(m.tokenize("Aa"), ["Aa"]);
        assert!(m.tokenize("").is_empty());
        assert_eq!(m.count_tokens(""), 0);
    }

    #[test]
    fn operands_need_not_be_tokens() {
        let m = model(&["B", "C", "Aa"], &[("A", "a")]);
        assert_eq!(m.tokenize("Aa"), ["Aa"]);
        assert_eq!(m.tokenize("A"), [UNK_TOKEN]);
        assert_eq!(m.tokenize("BC"), ["B", "C"]);
    }

    #[test]
    fn whitespace_is_literal_and_fallback() {
        let m = BpeModel::new(vec!["a".into(), " ".into()], vec![], true).unwrap();
        assert_eq!(m.tokenize("a a"), ["a", " ", "a"]);
        assert_eq!(m.tokenize("ཀ"), ["<0xE0>", "<0xBD>", "<0x80>"]);
        assert_eq!(m.count_tokens("ཀ\t"), 4);
    }

    #[test]
    fn merge_result_must_be_in_vocab() {
        let r = BpeModel::new(vec!["a".into()], vec![("a".into(), "a".into())], false);
        assert!(matches!(r, Err(BpeError::Integrity(_))));
        let r = BpeModel::new(vec!["a".into(), "a".into()], vec![], false);
        assert!(matches!(r, Err(BpeError::Integrity(_))));
    }

    #[test]
    fn overlapping_pairs_match_naive() {
        let m = model(&["a", "aa", "aaa"], &[("a", "a"), ("aa", "a")]);
        for text in ["aaa", "aaaa", "aaaaa", "a a aa"] {
            assert_eq!(m.tokenize(text), naive_tokenize(&m, text), "{text}");
        }
        assert_eq!(m.tokenize("aaaaa"), ["aa", "aaa"]);
    }

    fn random_model(rng: &mut impl Rng) -> BpeModel {
        let alphabet = ["a", "b", "c", "A", "B", "ཀ"];
        let mut vocab: Vec<String> = alphabet.iter().map(|s| s.to_string()).collect();
        let mut merges = Vec::new();
        for _ in 0..rng.random_range(0..25) {
            let a = vocab[rng.random_range(0..vocab.len())].clone();
            let b = vocab[rng.random_range(0..vocab.len())].clone();
            let j = format!("{a}{b}");
            if j.chars().count() > 6 {
                continue;
            }
            if !vocab.contains(&j) {
                vocab.push(j);
            }
            merges.push((a, b));
        }
        // Shuffle ranks so low-rank merges can depend on later ones.
        for i in (1..merges.len()).rev() {
            let j = rng.random_range(0..=i);
            merges.swap(i, j);
        }
        BpeModel::new(vocab, merges, rng.random_bool(0.5)).unwrap()
    }

    #[test]
    fn matches_naive_reference_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let chars = ['a', 'b', 'c', 'A', 'B', 'ཀ', 'x', ' '];
        for _ in 0..200 {
            let m = random_model(&mut rng);
            let len = rng.random_range(0..30);
            let text: String = (0..len).map(|_| chars[rng.random_range(0..chars.len())]).collect();
            let fast = m.tokenize(&text);
            assert_eq!(fast, naive_tokenize(&m, &text), "{text:?} {:?}", m.merges());
            assert_eq!(m.count_tokens(&text), fast.len());
        }
    }

    #[test]
    fn train_learns_frequent_pair() {
        let m = train("abab abab".as_bytes(), 5).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
        assert_eq!(m.len(), 5);
        assert_eq!(m.tokenize("abab abab"), ["abab", " ", "abab"]);
    }

    #[test]
    fn train_degenerate_and_errors() {
        let m = train("aaaa".as_bytes(), 2).unwrap();
        assert_eq!(m.merges(), [("a".to_string(), "a".to_string())]);
        // Alphabet plus one fits; a bigger target stops once pairs run out.
        let m = train("a".as_bytes(), 10).unwrap();
        assert_eq!(m.len(), 1);
        assert!(matches!(train("abc".as_bytes(), 2), Err(BpeError::Config(_))));
        assert!(matches!(train("".as_bytes(), 2), Err(BpeError::Config(_))));
    }

    #[test]
    fn train_tie_breaks_lexicographically() {
        // Both pairs occur once; (a,b) sorts first.
        let m = train("cd ab".as_bytes(), 7).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
        assert_eq!(m.merges()[1], ("c".to_string(), "d".to_string()));
    }

    #[test]
    fn merge_vocab_arithmetic() {
        let a = model(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"], &[]);
        let b = model(&["k", "l", "m", "n", "o"], &[]);
        assert_eq!(merge_vocab(&a, &b).unwrap().len(), 15);
        assert_eq!(merge_vocab(&a, &a).unwrap(), a);
        let c = model(&["j", "x", "a"], &[]);
        let m = merge_vocab(&a, &c).unwrap();
        assert_eq!(m.len(), 11);
        assert_eq!(m.vocab().last().map(String::as_str), Some("x"));
    }

    #[test]
    fn file_roundtrip_with_escapes() {
        let m = BpeModel::new(
            vec!["a".into(), " ".into(), "\\".into(), "a ".into(), "\t".into()],
            vec![("a".into(), " ".into())],
            true,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = BpeModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.byte_fallback());
        let crlf = BpeModel::from_strs("a\r\nb\r\nab\r\n", "a b\r\n").unwrap();
        assert_eq!(crlf.tokenize("ab"), ["ab"]);
        assert!(BpeModel::from_strs("a\n", "a\n").is_err());
        assert!(BpeModel::from_strs("a\\q\n", "").is_err());
    }

    #[test]
    fn histogram_buckets() {
        let m = model(&["A", "a", "Aa"], &[("A", "a")]);
        let h = token_length_histogram(["Aa", "A", "aaa", "aaaaa", "aa"], &m);
        assert_eq!(h.buckets, [2, 1, 1, 1]);
        assert_eq!(h.to_tsv(), "1\t2\n2\t1\n3\t1\n4+\t1\n");
    }

    #[test]
    fn histogram_matches_per_string_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng);
        let strings: Vec<String> = (0..100)
            .map(|_| (0..rng.random_range(1..7)).map(|_| ['a', 'b', 'A', 'ཀ'][rng.random_range(0..4)]).collect())
            .collect();
        let h = token_length_histogram(strings.iter().map(String::as_str), &m);
        let mut expected = [0u64; 4];
        for s in &strings {
            let n = naive_tokenize(&m, s).len();
            expected[n.min(4) - 1] += 1;
        }
        assert_eq!(h.buckets, expected);
    }

    proptest! {
        #[test]
        fn trained_model_covers_its_corpus(lines in prop::collection::vec("[ab ཀཁ]{0,12}", 1..8), extra in 0usize..20) {
            let corpus = lines.join("\n");
            prop_assume!(corpus.chars().any(|c| c != '\n'));
            let alphabet: HashSet<char> = corpus.chars().filter(|&c| c != '\n').collect();
            let m = train(corpus.as_bytes(), alphabet.len() + extra).unwrap();
            for line in &lines {
                for tok in m.tokenize(line) {
                    prop_assert!(m.contains(&tok), "{tok:?}");
                }
            }
            let again = BpeModel::from_strs(&m.vocab_txt(), &m.merges_txt()).unwrap();
            prop_assert_eq!(&again, &m);
            for line in &lines {
                prop_assert_eq!(again.tokenize(line), m.tokenize(line));
            }
        }

        #[test]
        fn merge_size_law(a in prop::collection::btree_set("[a-e]{1,3}", 0..20), b in prop::collection::btree_set("[a-e]{1,3}", 0..20)) {
            let ma = BpeModel::new(a.iter().cloned().collect(), vec![], false).unwrap();
            let mb = BpeModel::new(b.iter().cloned().collect(), vec![], false).unwrap();
            let merged = merge_vocab(&ma, &mb).unwrap();
            prop_assert_eq!(merged.len(), a.len() + b.len() - a.intersection(&b).count());
            prop_assert_eq!(merge_vocab(&ma, &ma).unwrap(), ma);
        }
    }
}
