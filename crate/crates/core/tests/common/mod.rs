//! Seeded synthetic corpora shared by the integration tests.

#![allow(dead_code)]

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn range(lo: u32, hi: u32) -> Vec<char> {
    (lo..=hi).filter_map(char::from_u32).collect()
}

/// Tibetan consonants and vowel signs.
pub fn tibetan_alphabet() -> Vec<char> {
    let mut v = range(0x0F40, 0x0F6C);
    v.extend(range(0x0F71, 0x0F7D));
    v.extend(range(0x0F90, 0x0F97));
    v
}

/// Mongolian letters.
pub fn mongolian_alphabet() -> Vec<char> {
    range(0x1820, 0x1851)
}

/// Arabic letters used for Uyghur.
pub fn uyghur_alphabet() -> Vec<char> {
    let mut v = range(0x0626, 0x063A);
    v.extend(range(0x0641, 0x064A));
    v.extend(['\u{067E}', '\u{0686}', '\u{0698}', '\u{06AD}', '\u{06AF}', '\u{06BE}', '\u{06C6}', '\u{06C7}']);
    v
}

pub fn cjk_alphabet() -> Vec<char> {
    range(0x4E00, 0x4FFF)
}

/// Zipf weights 1/k^s for ranks 1..=n.
pub fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|k| 1.0 / (k as f64).powf(s)).collect()
}

pub struct Lang {
    pub tag: &'static str,
    alphabet: Vec<char>,
    sampler: WeightedIndex<f64>,
    separator: &'static str,
}

impl Lang {
    pub fn new(tag: &'static str, alphabet: Vec<char>, separator: &'static str) -> Self {
        let sampler = WeightedIndex::new(zipf_weights(alphabet.len(), 1.1)).unwrap();
        Lang { tag, alphabet, sampler, separator }
    }

    pub fn line(&self, rng: &mut impl Rng) -> String {
        let words = rng.random_range(4..14);
        let mut out = String::new();
        for w in 0..words {
            if w > 0 {
                out.push_str(self.separator);
            }
            for _ in 0..rng.random_range(2..7) {
                out.push(self.alphabet[self.sampler.sample(rng)]);
            }
        }
        out
    }
}

pub fn languages() -> Vec<Lang> {
    vec![
        Lang::new("bo", tibetan_alphabet(), "\u{0F0B}"),
        Lang::new("mn", mongolian_alphabet(), " "),
        Lang::new("ug", uyghur_alphabet(), " "),
        Lang::new("zh", cjk_alphabet(), ""),
        Lang::new("other", ('a'..='z').collect(), " "),
    ]
}

/// `per_label` lines for each language, grouped by language.
pub fn labeled_corpus(per_label: usize, seed: u64) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for lang in languages() {
        for _ in 0..per_label {
            out.push((lang.line(&mut r), lang.tag.to_string()));
        }
    }
    out
}

/// The characters of the three low-resource alphabets, most frequent first
/// within each, interleaved so the merged list has no script bias.
pub fn low_resource_chars() -> Vec<char> {
    let alphabets = [tibetan_alphabet(), mongolian_alphabet(), uyghur_alphabet()];
    let longest = alphabets.iter().map(Vec::len).max().unwrap();
    let mut out = Vec::new();
    for i in 0..longest {
        for a in &alphabets {
            if let Some(&c) = a.get(i) {
                out.push(c);
            }
        }
    }
    out
}

/// Random lines mixing the three low-resource scripts with ASCII, `@`
/// runs, emoji, digits, and empty or one-character lines.
pub fn mixed_line(rng: &mut impl Rng, pool: &[char]) -> String {
    match rng.random_range(0..20) {
        0 => String::new(),
        1 => pool[rng.random_range(0..pool.len())].to_string(),
        2 => "@".repeat(rng.random_range(1..6)),
        _ => {
            let mut s = String::new();
            for _ in 0..rng.random_range(1..40) {
                match rng.random_range(0..12) {
                    0..=5 => s.push(pool[rng.random_range(0..pool.len())]),
                    6 => s.push(char::from(rng.random_range(b'a'..=b'z'))),
                    7 => s.push(char::from(rng.random_range(b'A'..=b'Z'))),
                    8 => s.push('@'),
                    9 => s.push(['😀', '🎉', '🙏', '\u{200D}', 'é'][rng.random_range(0..5)]),
                    10 => s.push(char::from(rng.random_range(b'0'..=b'9'))),
                    _ => s.push([' ', '\t', ',', '.', '\u{0F0B}', '\r'][rng.random_range(0..6)]),
                }
            }
            s
        }
    }
}

/// Every character of the three low-resource ranges, mapped or not.
pub fn script_pool() -> Vec<char> {
    let mut v = range(0x0F00, 0x0FDA);
    v.extend(range(0x1800, 0x18AA));
    v.extend(range(0x0600, 0x06FF));
    v
}
