//! Reversible encoding of text into Latin codes and back.
//!
//! Encoded text follows a small grammar:
//!
//! * a mapped character becomes its code, `[A-Z][a-z]*`;
//! * a maximal run of unmapped ASCII letters and `@` is wrapped in `@…@`,
//!   with each `@` inside the run doubled;
//! * every other unmapped character (spaces, digits, punctuation, newlines,
//!   emoji, other scripts) is copied unchanged.
//!
//! Decoding walks the text once. `@` opens a preserved run that ends at the
//! next `@` not followed by another `@`. An uppercase letter starts a code
//! segment that extends over the following lowercase letters and is matched
//! greedily, longest code first. Since every code holds exactly one
//! uppercase letter, at its start, segments line up with codes and the
//! greedy match is exact.

use std::fmt;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codebook::Codebook;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unterminated preserved run opened at byte {offset}")]
    UnterminatedRun { offset: usize },
    #[error("empty preserved run at byte {offset}")]
    EmptyRun { offset: usize },
    #[error("stray lowercase letter {ch:?} at byte {offset}")]
    StrayLowercase { offset: usize, ch: char },
    #[error("unknown code segment {segment:?} at byte {offset}")]
    UnknownSegment { offset: usize, segment: String },
    #[error("codebook applies a lossy transform; strict decoding cannot be lossless")]
    NonReversible,
}

impl DecodeError {
    /// Byte offset into the encoded text, when the error has one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            DecodeError::UnterminatedRun { offset }
            | DecodeError::EmptyRun { offset }
            | DecodeError::StrayLowercase { offset, .. }
            | DecodeError::UnknownSegment { offset, .. } => Some(*offset),
            DecodeError::NonReversible => None,
        }
    }

    /// True for violations of the encoded-text grammar, as opposed to codes
    /// the codebook does not know.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            DecodeError::UnterminatedRun { .. }
                | DecodeError::EmptyRun { .. }
                | DecodeError::StrayLowercase { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Unknown code segments are errors.
    #[default]
    Strict,
    /// Unknown code segments are copied through and counted as warnings.
    Lenient,
}

impl std::str::FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strict" => Ok(DecodeMode::Strict),
            "lenient" => Ok(DecodeMode::Lenient),
            _ => Err(format!("unknown decode mode {s:?} (strict, lenient)")),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Strict => "strict",
            DecodeMode::Lenient => "lenient",
        })
    }
}

/// Text produced by [`to_latin`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EncodedText(String);

impl EncodedText {
    /// Wraps text that claims to follow the encoded grammar; it is checked
    /// when decoded.
    pub fn new(text: impl Into<String>) -> Self {
        EncodedText(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl AsRef<str> for EncodedText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EncodedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodeWarning {
    pub offset: usize,
    pub segment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decoded {
    pub text: String,
    pub warnings: Vec<DecodeWarning>,
}

/// Encodes `text` with `cb`. Total over all strings.
pub fn to_latin(text: &str, cb: &Codebook) -> EncodedText {
    let mut out = String::with_capacity(text.len());
    encode_into(text, cb, &mut out);
    EncodedText(out)
}

fn encode_into(text: &str, cb: &Codebook, out: &mut String) {
    let transform = cb.transform();
    let mut in_run = false;
    for c in text.chars() {
        if c.is_ascii() {
            if c.is_ascii_alphabetic() || c == '@' {
                if !in_run {
                    out.push('@');
                    in_run = true;
                }
                if c == '@' {
                    out.push_str("@@");
                } else {
                    out.push(c);
                }
                continue;
            }
            if in_run {
                out.push('@');
                in_run = false;
            }
            if let Some(code) = cb.code_for(c) {
                out.push_str(code.as_str());
            } else {
                out.push(c);
            }
            continue;
        }
        if in_run {
            out.push('@');
            in_run = false;
        }
        if let Some(code) = cb.code_for(c) {
            out.push_str(code.as_str());
        } else if let Some(rep) = transform.and_then(|t| t.get(c)) {
            out.push_str(rep);
        } else {
            out.push(c);
        }
    }
    if in_run {
        out.push('@');
    }
}

/// Restores the original text from `enc`.
pub fn from_latin(enc: &str, cb: &Codebook, mode: DecodeMode) -> Result<Decoded, DecodeError> {
    let mut out = Decoded {
        text: String::with_capacity(enc.len() * 2),
        warnings: Vec::new(),
    };
    decode_into(enc, cb, mode, &mut out)?;
    Ok(out)
}

fn decode_into(enc: &str, cb: &Codebook, mode: DecodeMode, out: &mut Decoded) -> Result<(), DecodeError> {
    if mode == DecodeMode::Strict && !cb.is_reversible() {
        return Err(DecodeError::NonReversible);
    }
    let bytes = enc.as_bytes();
    let len = bytes.len();
    let max_code = cb.max_code_len().max(1);
    let mut i = 0;
    while i < len {
        let b = bytes[i];
        if b == b'@' {
            let open = i;
            i += 1;
            let mut empty = true;
            loop {
                let Some(rel) = bytes[i..].iter().position(|&x| x == b'@') else {
                    return Err(DecodeError::UnterminatedRun { offset: open });
                };
                let at = i + rel;
                if at > i {
                    out.text.push_str(&enc[i..at]);
                    empty = false;
                }
                if bytes.get(at + 1) == Some(&b'@') {
                    out.text.push('@');
                    empty = false;
                    i = at + 2;
                } else {
                    i = at + 1;
                    break;
                }
            }
            if empty {
                return Err(DecodeError::EmptyRun { offset: open });
            }
        } else if b.is_ascii_uppercase() {
            let seg_start = i;
            let mut seg_end = i + 1;
            while seg_end < len && bytes[seg_end].is_ascii_lowercase() {
                seg_end += 1;
            }
            let mut pos = seg_start;
            while pos < seg_end {
                let found = if bytes[pos].is_ascii_uppercase() {
                    (1..=max_code.min(seg_end - pos))
                        .rev()
                        .find_map(|l| cb.char_for(&enc[pos..pos + l]).map(|c| (c, l)))
                } else {
                    None
                };
                match found {
                    Some((c, l)) => {
                        out.text.push(c);
                        pos += l;
                    }
                    None => {
                        let segment = &enc[seg_start..seg_end];
                        if mode == DecodeMode::Strict {
                            return Err(DecodeError::UnknownSegment {
                                offset: seg_start,
                                segment: segment.to_string(),
                            });
                        }
                        out.text.push_str(&enc[pos..seg_end]);
                        out.warnings.push(DecodeWarning {
                            offset: pos,
                            segment: segment.to_string(),
                        });
                        pos = seg_end;
                    }
                }
            }
            i = seg_end;
        } else if b.is_ascii_lowercase() {
            return Err(DecodeError::StrayLowercase {
                offset: i,
                ch: b as char,
            });
        } else {
            let start = i;
            i += 1;
            while i < len && !(bytes[i] == b'@' || bytes[i].is_ascii_alphabetic()) {
                i += 1;
            }
            out.text.push_str(&enc[start..i]);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RoundtripReport {
    pub total: u64,
    pub failures: u64,
    /// Byte offset (in the input) of the first failing line.
    pub first_failure_offset: Option<u64>,
    /// 1-based line number of the first failing line.
    pub first_failure_line: Option<u64>,
    /// False when the codebook applies a lossy transform.
    pub lossless_claimed: bool,
}

/// Encodes and decodes every line of `reader`, counting lines that do not
/// come back identical. Lines that are not valid UTF-8 count as failures.
pub fn verify_roundtrip<R: BufRead>(mut reader: R, cb: &Codebook) -> io::Result<RoundtripReport> {
    let mut report = RoundtripReport {
        lossless_claimed: cb.is_reversible(),
        ..Default::default()
    };
    let mut buf = Vec::new();
    let mut offset = 0u64;
    let mut enc = String::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        report.total += 1;
        let ok = match std::str::from_utf8(&buf) {
            Ok(line) => {
                enc.clear();
                encode_into(line, cb, &mut enc);
                matches!(from_latin(&enc, cb, DecodeMode::Strict), Ok(d) if d.text == line)
            }
            Err(_) => false,
        };
        if !ok {
            report.failures += 1;
            report.first_failure_offset.get_or_insert(offset);
            report.first_failure_line.get_or_insert(report.total);
        }
        offset += n as u64;
    }
    Ok(report)
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },
    #[error("line {line}: {source}")]
    Decode {
        line: u64,
        /// Byte offset of the error in the whole input.
        offset: u64,
        #[source]
        source: DecodeError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub lines: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub warnings: u64,
}

const BATCH_BYTES: usize = 1 << 20;

/// Reads up to about a megabyte of whole lines.
fn read_batch<R: BufRead>(reader: &mut R, lines: &mut Vec<Vec<u8>>) -> io::Result<usize> {
    lines.clear();
    let mut total = 0;
    while total < BATCH_BYTES {
        let mut buf = Vec::new();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        total += n;
        lines.push(buf);
    }
    Ok(total)
}

fn utf8_lines(lines: &[Vec<u8>], base: u64) -> Result<Vec<&str>, StreamError> {
    let mut offset = base;
    lines
        .iter()
        .map(|l| {
            let s = std::str::from_utf8(l).map_err(|e| StreamError::InvalidUtf8 {
                offset: offset + e.valid_up_to() as u64,
            });
            offset += l.len() as u64;
            s
        })
        .collect()
}

/// Encodes `reader` to `writer` line by line. Lines in a batch are encoded
/// in parallel; output order and bytes match sequential encoding.
pub fn encode_stream<R: BufRead, W: Write>(
    mut reader: R,
    mut writer: W,
    cb: &Codebook,
) -> Result<StreamStats, StreamError> {
    let mut stats = StreamStats::default();
    let mut lines = Vec::new();
    loop {
        let n = read_batch(&mut reader, &mut lines)?;
        if n == 0 {
            break;
        }
        let texts = utf8_lines(&lines, stats.bytes_in)?;
        let encoded: Vec<EncodedText> = texts.par_iter().map(|t| to_latin(t, cb)).collect();
        for e in &encoded {
            writer.write_all(e.as_str().as_bytes())?;
            stats.bytes_out += e.as_str().len() as u64;
        }
        stats.lines += lines.len() as u64;
        stats.bytes_in += n as u64;
    }
    writer.flush()?;
    Ok(stats)
}

/// Decodes `reader` to `writer` line by line; stops at the first error.
pub fn decode_stream<R: BufRead, W: Write>(
    mut reader: R,
    mut writer: W,
    cb: &Codebook,
    mode: DecodeMode,
) -> Result<StreamStats, StreamError> {
    let mut stats = StreamStats::default();
    let mut lines = Vec::new();
    loop {
        let n = read_batch(&mut reader, &mut lines)?;
        if n == 0 {
            break;
        }
        let texts = utf8_lines(&lines, stats.bytes_in)?;
        let decoded: Vec<Result<Decoded, DecodeError>> =
            texts.par_iter().map(|t| from_latin(t, cb, mode)).collect();
        let mut line_offset = stats.bytes_in;
        for (i, d) in decoded.into_iter().enumerate() {
            let d = d.map_err(|source| StreamError::Decode {
                line: stats.lines + i as u64 + 1,
                offset: line_offset + source.offset().unwrap_or(0) as u64,
                source,
            })?;
            writer.write_all(d.text.as_bytes())?;
            stats.bytes_out += d.text.len() as u64;
            stats.warnings += d.warnings.len() as u64;
            line_offset += lines[i].len() as u64;
        }
        stats.lines += lines.len() as u64;
        stats.bytes_in += n as u64;
    }
    writer.flush()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_basic, CodebookEntry, Strategy as BuildStrategy};
    use crate::codespace::{CodeSpaceProfile, CodeString};
    use proptest::prelude::*;

    fn cb2(first: &str, second: &str) -> Codebook {
        Codebook::from_entries(
            vec![
                CodebookEntry { ch: '\u{0F40}', code: CodeString::new(first).unwrap(), rank: 1, token_count: 0 },
                CodebookEntry { ch: '\u{0F41}', code: CodeString::new(second).unwrap(), rank: 2, token_count: 0 },
            ],
            BuildStrategy::Basic,
        )
        .unwrap()
    }

    fn decode(enc: &str, cb: &Codebook) -> Result<String, DecodeError> {
        from_latin(enc, cb, DecodeMode::Strict).map(|d| d.text)
    }

    #[test]
    fn direct_mapping() {
        let cb = cb2("B", "Aa");
        assert_eq!(to_latin("ཀཁཀ", &cb).as_str(), "BAaB");
        assert_eq!(decode("BAaB", &cb).unwrap(), "ཀཁཀ");
    }

    #[test]
    fn passthrough_of_unmapped_non_letters() {
        let cb = cb2("B", "Aa");
        assert_eq!(to_latin("ཀ་ཁ", &cb).as_str(), "B་Aa");
        assert_eq!(to_latin("ཀ 1,\n", &cb).as_str(), "B 1,\n");
    }

    #[test]
    fn preserved_run_with_at_sign() {
        let cb = cb2("B", "Aa");
        // The run "a@" becomes '@' + "a@@" + '@'.
        let enc = to_latin("ཀa@ཁ", &cb);
        assert_eq!(enc.as_str(), "B@a@@@Aa");
        assert_eq!(decode(enc.as_str(), &cb).unwrap(), "ཀa@ཁ");
        assert_eq!(to_latin("@", &cb).as_str(), "@@@@");
        assert_eq!(to_latin("Hi there", &cb).as_str(), "@Hi@ @there@");
    }

    #[test]
    fn maximal_munch_prefers_longer_code() {
        let cb = cb2("B", "Ba");
        assert_eq!(decode("BaB", &cb).unwrap(), "\u{0F41}\u{0F40}");
    }

    #[test]
    fn grammar_errors() {
        let cb = cb2("B", "Aa");
        assert_eq!(decode("@@a@", &cb), Err(DecodeError::EmptyRun { offset: 0 }));
        assert_eq!(decode("B@ab", &cb), Err(DecodeError::UnterminatedRun { offset: 1 }));
        assert_eq!(decode("B x", &cb), Err(DecodeError::StrayLowercase { offset: 2, ch: 'x' }));
        assert_eq!(
            decode("BAab", &cb),
            Err(DecodeError::UnknownSegment { offset: 1, segment: "Aab".into() })
        );
        assert_eq!(
            decode(" Q", &cb),
            Err(DecodeError::UnknownSegment { offset: 1, segment: "Q".into() })
        );
        assert!(from_latin("@@a@", &cb, DecodeMode::Lenient).is_err());
    }

    #[test]
    fn lenient_passes_unknown_segments() {
        let cb = cb2("B", "Aa");
        let d = from_latin("BAabQz B", &cb, DecodeMode::Lenient).unwrap();
        assert_eq!(d.text, "ཀཁbQz ཀ");
        assert_eq!(d.warnings.len(), 2);
        assert_eq!(d.warnings[0], DecodeWarning { offset: 3, segment: "Aab".into() });
        assert_eq!(d.warnings[1].segment, "Qz");
    }

    #[test]
    fn lossy_transform_refuses_strict() {
        let t = crate::codebook::CharTransform::parse("中\tzhong\n").unwrap();
        let cb = cb2("B", "Aa").with_transform(t).unwrap();
        let enc = to_latin("ཀ中", &cb);
        assert_eq!(enc.as_str(), "Bzhong");
        assert_eq!(from_latin(enc.as_str(), &cb, DecodeMode::Strict), Err(DecodeError::NonReversible));
        let r = verify_roundtrip("ཀ中\n".as_bytes(), &cb).unwrap();
        assert!(!r.lossless_claimed);
        assert_eq!(r.failures, 1);
    }

    #[test]
    fn verify_reports() {
        let cb = cb2("B", "Aa");
        let r = verify_roundtrip("".as_bytes(), &cb).unwrap();
        assert_eq!((r.total, r.failures), (0, 0));
        let at_run = "@".repeat(1000);
        let r = verify_roundtrip(format!("ཀx\n{at_run}\n\n").as_bytes(), &cb).unwrap();
        assert_eq!((r.total, r.failures), (3, 0));
        let r = verify_roundtrip(&b"ok\n\xff\n"[..], &cb).unwrap();
        assert_eq!((r.failures, r.first_failure_offset, r.first_failure_line), (1, Some(3), Some(2)));
    }

    /// Second implementation of the grammar: tokenizes into runs, codes and
    /// passthrough characters with plain string operations.
    fn reference_encode(text: &str, cb: &Codebook) -> String {
        let mut out = String::new();
        let mut run = String::new();
        let flush = |run: &mut String, out: &mut String| {
            if !run.is_empty() {
                out.push('@');
                out.push_str(&run.replace('@', "@@"));
                out.push('@');
                run.clear();
            }
        };
        for c in text.chars() {
            if let Some(code) = cb.code_for(c) {
                flush(&mut run, &mut out);
                out.push_str(code.as_str());
            } else if c.is_ascii_alphabetic() || c == '@' {
                run.push(c);
            } else {
                flush(&mut run, &mut out);
                out.push(c);
            }
        }
        flush(&mut run, &mut out);
        out
    }

    #[test]
    fn adversarial_at_runs_match_reference() {
        let cb = cb2("B", "Aa");
        for n in 0..50 {
            let s = format!("{}ཀ{}a{}", "@".repeat(n), "@".repeat(n / 2), "@".repeat(n % 3));
            let enc = to_latin(&s, &cb);
            assert_eq!(enc.as_str(), reference_encode(&s, &cb));
            assert_eq!(decode(enc.as_str(), &cb).unwrap(), s);
        }
        let s = "@".repeat(1000);
        let enc = to_latin(&s, &cb);
        assert_eq!(enc.as_str().len(), 2 + 2 * 1000);
        assert_eq!(decode(enc.as_str(), &cb).unwrap(), s);
    }

    #[test]
    fn streams_match_whole_text() {
        let chars: Vec<char> = (0x0F40..0x0F60).filter_map(char::from_u32).collect();
        let cb = build_basic(&chars, &CodeSpaceProfile::compact()).unwrap();
        let text: String = (0..5000)
            .map(|i| format!("ཀཁ{}a@ {i}\r\n", char::from_u32(0x0F40 + (i % 40)).unwrap()))
            .collect();
        let mut enc = Vec::new();
        let stats = encode_stream(text.as_bytes(), &mut enc, &cb).unwrap();
        assert_eq!(stats.lines, 5000);
        assert_eq!(String::from_utf8(enc.clone()).unwrap(), to_latin(&text, &cb).as_str());
        let mut dec = Vec::new();
        decode_stream(&enc[..], &mut dec, &cb, DecodeMode::Strict).unwrap();
        assert_eq!(dec, text.as_bytes());

        match decode_stream("B\nBx y\n".as_bytes(), Vec::new(), &cb, DecodeMode::Strict) {
            Err(StreamError::Decode { line: 2, offset: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match encode_stream(&b"ok\n\xfe"[..], Vec::new(), &cb) {
            Err(StreamError::InvalidUtf8 { offset: 3 }) => {}
            other => panic!("{other:?}"),
        }
    }

    fn arb_text() -> impl Strategy<Value = String> {
        let pieces = prop_oneof![
            "[\u{0F40}-\u{0F6C}]",
            "[\u{1820}-\u{1842}]",
            "[\u{0626}-\u{064A}]",
            "[a-zA-Z@]{1,4}",
            "[ 0-9.,\n\t་]",
            "[😀-🙏]",
            "@+",
            ".",
        ];
        prop::collection::vec(pieces, 0..30).prop_map(|v| v.concat())
    }

    fn mixed_codebook() -> Codebook {
        let chars: Vec<char> = (0x0F40..=0x0F6C)
            .chain(0x1820..=0x1877)
            .chain(0x0626..=0x064A)
            .filter_map(char::from_u32)
            .take(162)
            .collect();
        build_basic(&chars, &CodeSpaceProfile::compact()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn roundtrip_identity(s in arb_text()) {
            let cb = mixed_codebook();
            let enc = to_latin(&s, &cb);
            prop_assert_eq!(enc.as_str(), reference_encode(&s, &cb));
            prop_assert_eq!(decode(enc.as_str(), &cb).unwrap(), s);
        }

        #[test]
        fn run_wrapping_cost(run in "[a-zA-Z@]{1,40}") {
            let cb = mixed_codebook();
            let enc = to_latin(&run, &cb);
            let ats = run.matches('@').count();
            prop_assert_eq!(enc.as_str().len(), run.len() + 2 + ats);
        }

        #[test]
        fn mapped_chars_encode_to_ascii_letters(idx in prop::collection::vec(0usize..162, 0..50)) {
            let cb = mixed_codebook();
            let s: String = idx.iter().map(|&i| cb.entries()[i].ch).collect();
            let enc = to_latin(&s, &cb);
            prop_assert!(enc.as_str().bytes().all(|b| b.is_ascii_alphabetic()));
            let code_len: usize = idx.iter().map(|&i| cb.entries()[i].code.len()).sum();
            prop_assert_eq!(enc.as_str().len(), code_len);
        }
    }
}
