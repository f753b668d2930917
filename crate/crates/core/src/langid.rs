//! Language identification with a linear model over hashed character n-grams.
//!
//! Text is turned into the bag of its character n-grams, each hashed into
//! one of `hash_buckets` slots. The score of a label is its bias plus the
//! mean weight of the text's slots; a softmax turns scores into
//! probabilities. Training is plain SGD on the cross-entropy loss, with the
//! learning rate decaying linearly to zero. Slots seen fewer than
//! `min_count` times in training are dropped.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, KvConfig};

pub const DEFAULT_LABELS: [&str; 5] = ["bo", "mn", "ug", "zh", "other"];
pub const OTHER_LABEL: &str = "other";
const MAGIC: &str = "scriptcode-langid 1";
const LABEL_PREFIX: &str = "__label__";

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("training: {0}")]
    Training(String),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: u32,
    pub min_count: u32,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub hash_buckets: u32,
    /// Recorded only; the linear model has no embedding layer.
    pub dim: u32,
    /// Recorded only.
    pub window: u32,
    pub seed: u64,
}

impl TrainParams {
    /// Raw-text classifier defaults.
    pub fn input() -> Self {
        TrainParams {
            learning_rate: 0.1,
            epochs: 25,
            min_count: 5,
            ngram_min: 1,
            ngram_max: 3,
            hash_buckets: 1 << 20,
            dim: 100,
            window: 5,
            seed: 0,
        }
    }

    /// Encoded-text classifier defaults.
    pub fn output() -> Self {
        TrainParams {
            learning_rate: 0.05,
            epochs: 30,
            min_count: 3,
            ngram_min: 2,
            ngram_max: 4,
            ..Self::input()
        }
    }

    const KEYS: [&'static str; 10] = [
        "preset",
        "learning_rate",
        "epochs",
        "min_count",
        "ngram_min",
        "ngram_max",
        "hash_buckets",
        "dim",
        "window",
        "seed",
    ];

    /// Reads `preset = input|output` plus any overrides.
    pub fn from_config(cfg: &KvConfig) -> Result<Self, LangIdError> {
        cfg.deny_unknown(&Self::KEYS)?;
        let mut p = match cfg.get("preset") {
            None | Some("input") => Self::input(),
            Some("output") => Self::output(),
            Some(other) => {
                return Err(cfg
                    .invalid("preset", format!("{other:?} is not input or output"))
                    .into())
            }
        };
        if let Some(v) = cfg.parse_opt("learning_rate")? {
            p.learning_rate = v;
        }
        if let Some(v) = cfg.parse_opt("epochs")? {
            p.epochs = v;
        }
        if let Some(v) = cfg.parse_opt("min_count")? {
            p.min_count = v;
        }
        if let Some(v) = cfg.parse_opt("ngram_min")? {
            p.ngram_min = v;
        }
        if let Some(v) = cfg.parse_opt("ngram_max")? {
            p.ngram_max = v;
        }
        if let Some(v) = cfg.parse_opt("hash_buckets")? {
            p.hash_buckets = v;
        }
        if let Some(v) = cfg.parse_opt("dim")? {
            p.dim = v;
        }
        if let Some(v) = cfg.parse_opt("window")? {
            p.window = v;
        }
        if let Some(v) = cfg.parse_opt("seed")? {
            p.seed = v;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LangIdError> {
        let bad = |m: String| Err(LangIdError::Training(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return bad(format!("bad n-gram range ({}, {})", self.ngram_min, self.ngram_max));
        }
        if !self.hash_buckets.is_power_of_two() || self.hash_buckets < 2 {
            return bad(format!("hash_buckets must be a power of two ≥ 2, got {}", self.hash_buckets));
        }
        Ok(())
    }

    fn bucket_bits(&self) -> u32 {
        self.hash_buckets.trailing_zeros()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_update(mut h: u64, c: char) -> u64 {
    let mut buf = [0u8; 4];
    for &b in c.encode_utf8(&mut buf).as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashed slots of every n-gram of `text`, with repetitions.
pub fn ngram_buckets(text: &str, ngram_min: usize, ngram_max: usize, bits: u32) -> Vec<u32> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::with_capacity(chars.len() * (ngram_max + 1 - ngram_min));
    for i in 0..chars.len() {
        let mut h = FNV_OFFSET;
        for (len, &c) in chars[i..].iter().take(ngram_max).enumerate() {
            h = fnv_update(h, c);
            if len + 1 >= ngram_min {
                out.push((h.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> (64 - bits)) as u32);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: String,
    pub confidence: f64,
    pub distribution: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangIdModel {
    labels: Vec<String>,
    params: TrainParams,
    bias: Vec<f32>,
    /// Kept slot → row in `weights`.
    rows: HashMap<u32, u32>,
    /// Row-major, `labels.len()` values per row.
    weights: Vec<f32>,
}

/// Orders labels: the default tags first, in their order, then the rest sorted.
fn order_labels<'a>(present: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut set: Vec<&str> = present.into_iter().collect();
    set.sort_unstable();
    set.dedup();
    let mut out: Vec<String> = DEFAULT_LABELS
        .iter()
        .filter(|l| set.contains(l))
        .map(|l| l.to_string())
        .collect();
    out.extend(
        set.into_iter()
            .filter(|l| !DEFAULT_LABELS.contains(l))
            .map(String::from),
    );
    out
}

impl LangIdModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    /// Number of hash slots that carry weights.
    pub fn active_buckets(&self) -> usize {
        self.rows.len()
    }

    /// Trains on `(text, label)` pairs. The result does not depend on the
    /// order of `examples`.
    pub fn train(examples: &[(String, String)], params: &TrainParams) -> Result<Self, LangIdError> {
        params.validate()?;
        let labels = order_labels(examples.iter().map(|(_, l)| l.as_str()));
        if labels.len() < 2 {
            return Err(LangIdError::Training(format!(
                "need at least 2 labels, corpus has {}",
                labels.len()
            )));
        }
        let label_idx: HashMap<&str, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut sorted: Vec<&(String, String)> = examples.iter().collect();
        sorted.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

        let bits = params.bucket_bits();
        let feats: Vec<Vec<u32>> = sorted
            .iter()
            .map(|(text, _)| ngram_buckets(text, params.ngram_min, params.ngram_max, bits))
            .collect();
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        for f in feats.iter().flatten() {
            *counts.entry(*f).or_insert(0) += 1;
        }
        let rows: HashMap<u32, u32> = counts
            .into_iter()
            .filter(|&(_, n)| n >= u64::from(params.min_count))
            .enumerate()
            .map(|(row, (bucket, _))| (bucket, row as u32))
            .collect();
        let data: Vec<(usize, Vec<u32>)> = sorted
            .iter()
            .zip(feats)
            .map(|((_, label), f)| {
                let rows_of: Vec<u32> = f.iter().filter_map(|b| rows.get(b).copied()).collect();
                (label_idx[label.as_str()], rows_of)
            })
            .collect();

        let k = labels.len();
        let mut model = LangIdModel {
            labels,
            params: params.clone(),
            bias: vec![0.0; k],
            weights: vec![0.0; rows.len() * k],
            rows,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let total = (params.epochs as u64 * data.len() as u64).max(1) as f64;
        let mut step = 0u64;
        let mut probs = vec![0.0f64; k];
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let lr = params.learning_rate * (1.0 - step as f64 / total);
                step += 1;
                let (y, ref f) = data[i];
                model.scores_into(f, &mut probs);
                softmax(&mut probs);
                let scale = if f.is_empty() { 0.0 } else { 1.0 / f.len() as f64 };
                for (l, p) in probs.iter().enumerate() {
                    let g = p - if l == y { 1.0 } else { 0.0 };
                    model.bias[l] -= (lr * g) as f32;
                    let dw = (lr * g * scale) as f32;
                    for &r in f {
                        model.weights[r as usize * k + l] -= dw;
                    }
                }
            }
        }
        Ok(model)
    }

    /// Bias plus mean row weight, per label.
    fn scores_into(&self, rows: &[u32], out: &mut [f64]) {
        let k = self.labels.len();
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o = f64::from(*b);
        }
        if rows.is_empty() {
            return;
        }
        let mut acc = vec![0.0f64; k];
        for &r in rows {
            let w = &self.weights[r as usize * k..(r as usize + 1) * k];
            for (a, x) in acc.iter_mut().zip(w) {
                *a += f64::from(*x);
            }
        }
        let n = rows.len() as f64;
        for (o, a) in out.iter_mut().zip(acc) {
            *o += a / n;
        }
    }

    pub fn predict(&self, text: &str) -> Prediction {
        let k = self.labels.len();
        if text.is_empty() {
            let p = 1.0 / k as f64;
            let label = if self.labels.iter().any(|l| l == OTHER_LABEL) {
                OTHER_LABEL.to_string()
            } else {
                self.labels[0].clone()
            };
            return Prediction {
                label,
                confidence: p,
                distribution: self.labels.iter().map(|l| (l.clone(), p)).collect(),
            };
        }
        let rows: Vec<u32> = ngram_buckets(
            text,
            self.params.ngram_min,
            self.params.ngram_max,
            self.params.bucket_bits(),
        )
        .into_iter()
        .filter_map(|b| self.rows.get(&b).copied())
        .collect();
        let mut probs = vec![0.0; k];
        self.scores_into(&rows, &mut probs);
        softmax(&mut probs);
        let best = argmax(&probs);
        Prediction {
            label: self.labels[best].clone(),
            confidence: probs[best],
            distribution: self.labels.iter().cloned().zip(probs).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LangIdError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Text header, a blank line, then little-endian binary: the bias per
    /// label, then for each kept slot its index (u32) and one f32 per label.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let p = &self.params;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "labels: {}", self.labels.join(","))?;
        writeln!(w, "ngram_range: {},{}", p.ngram_min, p.ngram_max)?;
        writeln!(w, "hash_buckets: {}", p.hash_buckets)?;
        writeln!(w, "learning_rate: {}", p.learning_rate)?;
        writeln!(w, "epochs: {}", p.epochs)?;
        writeln!(w, "min_count: {}", p.min_count)?;
        writeln!(w, "dim: {}", p.dim)?;
        writeln!(w, "window: {}", p.window)?;
        writeln!(w, "seed: {}", p.seed)?;
        writeln!(w, "rows: {}", self.rows.len())?;
        writeln!(w)?;
        for b in &self.bias {
            w.write_all(&b.to_le_bytes())?;
        }
        let k = self.labels.len();
        let mut by_row: Vec<(u32, u32)> = self.rows.iter().map(|(&b, &r)| (b, r)).collect();
        by_row.sort_unstable();
        for (bucket, row) in by_row {
            w.write_all(&bucket.to_le_bytes())?;
            for x in &self.weights[row as usize * k..(row as usize + 1) * k] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LangIdError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self, LangIdError> {
        let bad = |m: String| LangIdError::Format(m);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(bad(format!("expected {MAGIC:?} header, found {:?}", line.trim_end())));
        }
        let mut header: HashMap<String, String> = HashMap::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("header is not terminated by a blank line".into()));
            }
            let l = line.trim_end();
            if l.is_empty() {
                break;
            }
            let (k, v) = l
                .split_once(": ")
                .ok_or_else(|| bad(format!("bad header line {l:?}")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| header.get(k).ok_or_else(|| bad(format!("missing header field {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, LangIdError> {
            v.parse()
                .map_err(|_| LangIdError::Format(format!("bad {k} value {v:?}")))
        }
        let labels: Vec<String> = get("labels")?.split(',').map(String::from).collect();
        let (nmin, nmax) = get("ngram_range")?
            .split_once(',')
            .ok_or_else(|| bad("bad ngram_range".into()))?;
        let params = TrainParams {
            learning_rate: num("learning_rate", get("learning_rate")?)?,
            epochs: num("epochs", get("epochs")?)?,
            min_count: num("min_count", get("min_count")?)?,
            ngram_min: num("ngram_range", nmin)?,
            ngram_max: num("ngram_range", nmax)?,
            hash_buckets: num("hash_buckets", get("hash_buckets")?)?,
            dim: num("dim", get("dim")?)?,
            window: num("window", get("window")?)?,
            seed: num("seed", get("seed")?)?,
        };
        params.validate().map_err(|e| bad(e.to_string()))?;
        if labels.len() < 2 || labels.iter().any(String::is_empty) {
            return Err(bad("need at least 2 non-empty labels".into()));
        }
        let n_rows: usize = num("rows", get("rows")?)?;
        let k = labels.len();
        let mut bytes = |n: usize| -> Result<Vec<u8>, LangIdError> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)
                .map_err(|e| bad(format!("truncated weight block: {e}")))?;
            Ok(buf)
        };
        let f32s = |b: &[u8]| -> Vec<f32> {
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let bias = f32s(&bytes(k * 4)?);
        let mut rows = HashMap::with_capacity(n_rows);
        let mut weights = Vec::with_capacity(n_rows * k);
        for row in 0..n_rows {
            let rec = bytes(4 + k * 4)?;
            let bucket = u32::from_le_bytes(rec[..4].try_into().unwrap());
            if bucket >= params.hash_buckets || rows.insert(bucket, row as u32).is_some() {
                return Err(bad(format!("bad or repeated slot {bucket}")));
            }
            weights.extend(f32s(&rec[4..]));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after weight block".into()));
        }
        Ok(LangIdModel {
            labels,
            params,
            bias,
            rows,
            weights,
        })
    }
}

fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest value; the first one on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Parses `__label__<tag><TAB><text>` lines. Blank lines are skipped.
pub fn read_labeled<R: BufRead>(reader: R) -> Result<Vec<(String, String)>, LangIdError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| LangIdError::Corpus {
            line: i + 1,
            message: message.to_string(),
        };
        let rest = line
            .strip_prefix(LABEL_PREFIX)
            .ok_or_else(|| err("missing __label__ prefix"))?;
        let (tag, text) = rest
            .split_once('\t')
            .ok_or_else(|| err("missing tab after label"))?;
        if tag.is_empty() || tag.chars().any(char::is_whitespace) {
            return Err(err("bad label"));
        }
        out.push((text.to_string(), tag.to_string()));
    }
    Ok(out)
}

pub fn format_labeled(text: &str, label: &str) -> String {
    format!("{LABEL_PREFIX}{label}\t{text}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub examples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub f1: BTreeMap<String, f64>,
}

/// Per-label F1 and its mean over `labels`. A label with no gold and no
/// predicted examples scores 1.
pub fn evaluate_predictions(gold: &[&str], predicted: &[&str], labels: &[&str]) -> Evaluation {
    assert_eq!(gold.len(), predicted.len());
    let mut f1 = BTreeMap::new();
    for &l in labels {
        let tp = gold.iter().zip(predicted).filter(|(g, p)| **g == l && **p == l).count();
        let fp = gold.iter().zip(predicted).filter(|(g, p)| **g != l && **p == l).count();
        let fn_ = gold.iter().zip(predicted).filter(|(g, p)| **g == l && **p != l).count();
        let score = if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        f1.insert(l.to_string(), score);
    }
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    Evaluation {
        examples: gold.len(),
        accuracy: if gold.is_empty() { 1.0 } else { correct as f64 / gold.len() as f64 },
        macro_f1: if labels.is_empty() { 0.0 } else { f1.values().sum::<f64>() / labels.len() as f64 },
        f1,
    }
}

pub fn evaluate(model: &LangIdModel, examples: &[(String, String)]) -> Evaluation {
    let preds: Vec<Prediction> = examples.iter().map(|(t, _)| model.predict(t)).collect();
    let gold: Vec<&str> = examples.iter().map(|(_, l)| l.as_str()).collect();
    let predicted: Vec<&str> = preds.iter().map(|p| p.label.as_str()).collect();
    let labels: Vec<&str> = model.labels().iter().map(String::as_str).collect();
    evaluate_predictions(&gold, &predicted, &labels)
}
