//! Compression measures between an original text and its encoding.
//!
//! Byte accounting: a leading UTF-8 byte order mark is not counted and every
//! CRLF pair counts as a single LF byte. Token counts are summed over lines,
//! with line terminators excluded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::BpeModel;

const BOM: &[u8] = b"\xEF\xBB\xBF";

/// Languages averaged by [`average_token_ratio`].
pub const LOW_RESOURCE_TAGS: [&str; 3] = ["bo", "mn", "ug"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("encoded {what} count is 0 while the original has {original}")]
    ZeroEncoded { what: &'static str, original: u64 },
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counts bytes after BOM removal and CRLF normalization.
pub fn count_bytes<R: BufRead>(mut reader: R) -> io::Result<u64> {
    let mut total = 0u64;
    let mut buf = Vec::new();
    let mut first = true;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let mut len = n as u64;
        if first && buf.starts_with(BOM) {
            len -= BOM.len() as u64;
        }
        first = false;
        if buf.ends_with(b"\r\n") {
            len -= 1;
        }
        total += len;
    }
    Ok(total)
}

fn ratio(original: u64, encoded: u64, what: &'static str) -> Result<Option<f64>, MetricsError> {
    match (original, encoded) {
        (0, 0) => Ok(None),
        (o, 0) => Err(MetricsError::ZeroEncoded { what, original: o }),
        (o, e) => Ok(Some(o as f64 / e as f64)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub original: u64,
    pub encoded: u64,
    /// `original / encoded`; absent when both are zero.
    pub ratio: Option<f64>,
}

pub fn file_compression<A: BufRead, B: BufRead>(original: A, encoded: B) -> Result<Measure, MetricsError> {
    let o = count_bytes(original)?;
    let e = count_bytes(encoded)?;
    Ok(Measure {
        original: o,
        encoded: e,
        ratio: ratio(o, e, "byte")?,
    })
}

const BATCH_LINES: usize = 4096;

/// Sum of per-line token counts.
pub fn count_tokens<R: BufRead>(mut reader: R, model: &BpeModel) -> Result<u64, MetricsError> {
    let mut total = 0u64;
    let mut offset = 0u64;
    let mut first = true;
    let mut batch: Vec<String> = Vec::with_capacity(BATCH_LINES);
    let flush = |batch: &mut Vec<String>, total: &mut u64| {
        *total += batch
            .par_iter()
            .map(|l| model.count_tokens(l) as u64)
            .sum::<u64>();
        batch.clear();
    };
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let mut line: &[u8] = &buf;
        let mut skipped = 0;
        if first {
            if let Some(rest) = line.strip_prefix(BOM) {
                line = rest;
                skipped = BOM.len();
            }
            first = false;
        }
        if let Some(rest) = line.strip_suffix(b"\n") {
            line = rest.strip_suffix(b"\r").unwrap_or(rest);
        }
        let text = std::str::from_utf8(line).map_err(|e| MetricsError::InvalidUtf8 {
            offset: offset + (skipped + e.valid_up_to()) as u64,
        })?;
        batch.push(text.to_string());
        if batch.len() == BATCH_LINES {
            flush(&mut batch, &mut total);
        }
        offset += n as u64;
    }
    flush(&mut batch, &mut total);
    Ok(total)
}

pub fn token_compression<A: BufRead, B: BufRead>(
    original: A,
    encoded: B,
    model: &BpeModel,
) -> Result<Measure, MetricsError> {
    let o = count_tokens(original, model)?;
    let e = count_tokens(encoded, model)?;
    Ok(Measure {
        original: o,
        encoded: e,
        ratio: ratio(o, e, "token")?,
    })
}

/// One JSON-lines record per (language, strategy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub language_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    pub original_bytes: u64,
    pub encoded_bytes: u64,
    pub file_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoded_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ratio: Option<f64>,
    /// True when the original text is empty.
    pub empty: bool,
    pub byte_accounting: String,
}

pub const BYTE_ACCOUNTING: &str = "utf8-no-bom-lf";

impl CompressionReport {
    pub fn new(language_tag: impl Into<String>, strategy: Option<String>, bytes: Measure, tokens: Option<Measure>) -> Self {
        CompressionReport {
            language_tag: language_tag.into(),
            strategy,
            original_bytes: bytes.original,
            encoded_bytes: bytes.encoded,
            file_ratio: bytes.ratio,
            original_tokens: tokens.map(|t| t.original),
            encoded_tokens: tokens.map(|t| t.encoded),
            token_ratio: tokens.and_then(|t| t.ratio),
            empty: bytes.original == 0,
            byte_accounting: BYTE_ACCOUNTING.to_string(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Mean token ratio over the low-resource languages, per strategy.
pub fn average_token_ratio(reports: &[CompressionReport]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, u32)> = BTreeMap::new();
    for r in reports {
        if !LOW_RESOURCE_TAGS.contains(&r.language_tag.as_str()) {
            continue;
        }
        if let Some(t) = r.token_ratio {
            let key = r.strategy.clone().unwrap_or_default();
            let e = sums.entry(key).or_default();
            e.0 += t;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / f64::from(n))).collect()
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Plain-text table with ratios to two decimals.
pub fn format_table(reports: &[CompressionReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<6} {:>12} {:>12} {:>8} {:>12} {:>12} {:>8}",
        "strategy", "lang", "orig_bytes", "enc_bytes", "file", "orig_tok", "enc_tok", "token"
    );
    for r in reports {
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |n| n.to_string());
        let _ = writeln!(
            out,
            "{:<14} {:<6} {:>12} {:>12} {:>8} {:>12} {:>12} {:>8}",
            r.strategy.as_deref().unwrap_or("-"),
            r.language_tag,
            r.original_bytes,
            r.encoded_bytes,
            fmt_ratio(r.file_ratio),
            opt(r.original_tokens),
            opt(r.encoded_tokens),
            fmt_ratio(r.token_ratio),
        );
    }
    let avg = average_token_ratio(reports);
    for (strategy, v) in &avg {
        let name = if strategy.is_empty() { "-" } else { strategy };
        let _ = writeln!(out, "average token ratio ({name}, bo/mn/ug): {v:.2}");
    }
    out
}
