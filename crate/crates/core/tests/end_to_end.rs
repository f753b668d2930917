mod common;

use std::collections::HashMap;

use proptest::prelude::*;

use scriptcode::bpe::{self, BpeModel};
use scriptcode::codebook::{build_basic, build_hybrid, build_tokenizer_optimized, Codebook};
use scriptcode::codespace::CodeSpaceProfile;
use scriptcode::freq::{self, FrequencyTable};
use scriptcode::langid::{LangIdModel, TrainParams};
use scriptcode::metrics;
use scriptcode::translit::{self, from_latin, to_latin, DecodeMode};

fn corpus(lines: usize, seed: u64) -> String {
    let mut rng = common::rng(seed);
    let langs = common::languages();
    let mut out = String::new();
    for i in 0..lines {
        out.push_str(&langs[i % 3].line(&mut rng));
        out.push('\n');
    }
    out
}

#[test]
fn analyze_build_encode_decode_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let text = corpus(600, 1);
    let table = freq::scan_corpus(text.as_bytes(), &freq::default_ranges()).unwrap();

    // Independent tally straight from the text.
    let mut tally: HashMap<char, u64> = HashMap::new();
    for c in text.chars().filter(|&c| c != '\n') {
        *tally.entry(c).or_default() += 1;
    }
    let tsv_path = dir.path().join("freq.tsv");
    std::fs::write(&tsv_path, table.to_tsv()).unwrap();
    let reread = FrequencyTable::from_tsv(&std::fs::read_to_string(&tsv_path).unwrap()).unwrap();
    assert_eq!(reread.digest(), table.digest());
    let merged = reread.merged_charset(&["Tibetan", "Mongolian", "Uyghur"], 1).unwrap();
    assert_eq!(merged.len(), tally.len() - 1, "every letter except the space separator");
    for pair in merged.windows(2) {
        assert!(tally[&pair[0]] >= tally[&pair[1]]);
    }

    let cb = build_basic(&merged, &CodeSpaceProfile::compact()).unwrap();
    let cb_path = dir.path().join("cb.tsv");
    cb.save(&cb_path).unwrap();
    let cb = Codebook::load(&cb_path).unwrap();

    let mut enc = Vec::new();
    let stats = translit::encode_stream(text.as_bytes(), &mut enc, &cb).unwrap();
    assert_eq!(stats.lines, 600);
    assert!(enc.is_ascii());
    let mut dec = Vec::new();
    translit::decode_stream(&enc[..], &mut dec, &cb, DecodeMode::Strict).unwrap();
    assert_eq!(dec, text.as_bytes());

    let report = translit::verify_roundtrip(text.as_bytes(), &cb).unwrap();
    assert_eq!((report.total, report.failures), (600, 0));

    let m = metrics::file_compression(text.as_bytes(), &enc[..]).unwrap();
    let oracle_enc: u64 = tally
        .iter()
        .map(|(c, n)| n * cb.code_for(*c).map_or(c.len_utf8(), |code| code.len()) as u64)
        .sum::<u64>()
        + 600;
    assert_eq!(m.original, text.len() as u64);
    assert_eq!(m.encoded, oracle_enc);
}

#[test]
fn strategies_never_cost_more_tokens_than_basic() {
    let dir = tempfile::tempdir().unwrap();
    // Few enough characters that basic leaves single-token codes unused.
    let chars = &common::low_resource_chars()[..60];
    let profile = CodeSpaceProfile::compact();
    let mut words = String::new();
    for hi in ['A', 'B', 'C'] {
        for lo in 'a'..='m' {
            words.push_str(&format!("{hi}{lo} {hi}{lo}{lo}\n"));
        }
    }
    for c in ('A'..='Z').chain('a'..='z') {
        words.push(c);
        words.push('\n');
    }
    let model = bpe::train(words.as_bytes(), 144).unwrap();
    model.save(dir.path().join("tok")).unwrap();
    let model = BpeModel::load(dir.path().join("tok")).unwrap();

    let basic = build_basic(chars, &profile).unwrap();
    let opt = build_tokenizer_optimized(chars, &profile, &model).unwrap();
    let extra = BpeModel::new(["Dd", "Ee"].map(String::from).to_vec(), Vec::new(), false).unwrap();
    let merged = bpe::merge_vocab(&model, &extra).unwrap();
    let hybrid = build_hybrid(chars, &profile, &merged).unwrap();

    for (i, c) in chars.iter().enumerate() {
        let b = model.count_tokens(basic.code_for(*c).unwrap().as_str());
        let o = model.count_tokens(opt.code_for(*c).unwrap().as_str());
        let h = merged.count_tokens(hybrid.code_for(*c).unwrap().as_str());
        assert!(o <= b, "char #{i}: optimized {o} > basic {b}");
        assert!(h <= merged.count_tokens(basic.code_for(*c).unwrap().as_str()));
    }
    // Rank-weighted, so moving single-token codes to frequent chars counts.
    let sum = |cb: &Codebook, m: &BpeModel| -> f64 {
        chars
            .iter()
            .enumerate()
            .map(|(r, c)| m.count_tokens(cb.code_for(*c).unwrap().as_str()) as f64 / (r + 1) as f64)
            .sum()
    };
    assert!(sum(&opt, &model) < sum(&basic, &model));
    let singles = |cb: &Codebook| cb.entries().iter().filter(|e| model.count_tokens(e.code.as_str()) == 1).count();
    // 21 letters plus Aa..Am, Ba..Bm, Ca..Cm.
    assert_eq!(singles(&opt), 60);
    assert_eq!(singles(&basic), 21 + 13 + 13);
}

#[test]
fn classifier_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::labeled_corpus(300, 7);
    let params = TrainParams {
        hash_buckets: 1 << 16,
        epochs: 5,
        ..TrainParams::input()
    };
    let model = LangIdModel::train(&data, &params).unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let back = LangIdModel::load(&path).unwrap();
    assert_eq!(back, model);
    for (text, _) in data.iter().step_by(37) {
        assert_eq!(back.predict(text), model.predict(text));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn any_string_roundtrips(s in any::<String>()) {
        let cb = build_basic(&common::low_resource_chars(), &CodeSpaceProfile::compact()).unwrap();
        let enc = to_latin(&s, &cb);
        prop_assert_eq!(from_latin(enc.as_str(), &cb, DecodeMode::Strict).unwrap().text, s);
    }

    #[test]
    fn lenient_equals_strict_on_valid_input(seed in any::<u64>()) {
        let cb = build_basic(&common::low_resource_chars(), &CodeSpaceProfile::compact()).unwrap();
        let line = common::mixed_line(&mut common::rng(seed), &common::script_pool());
        let enc = to_latin(&line, &cb);
        let lenient = from_latin(enc.as_str(), &cb, DecodeMode::Lenient).unwrap();
        prop_assert!(lenient.warnings.is_empty());
        prop_assert_eq!(lenient.text, line);
    }
}
