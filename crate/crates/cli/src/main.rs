//! `scriptcode`: command-line front end.
//!
//! Data goes to stdout, diagnostics to stderr. Errors are reported as one
//! line, `error[<kind>]: <message>`, and map to exit codes: 1 for usage,
//! 2 for data, format and I/O problems, 3 for failed verification.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use scriptcode::bpe::{self, BpeModel};
use scriptcode::codebook::{self, CharTransform, Codebook, Strategy};
use scriptcode::codespace::CodeSpaceProfile;
use scriptcode::config::KvConfig;
use scriptcode::freq::{self, FrequencyTable, OTHER_SCRIPT};
use scriptcode::langid::{self, LangIdModel, TrainParams};
use scriptcode::metrics::{self, CompressionReport};
use scriptcode::pipeline::{Pipeline, PipelineConfig};
use scriptcode::translit::{self, DecodeMode};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (formats: frequency-tsv 1, codebook-tsv 1, bpe merges 0.2, langid-model 1, trace 1)"
);

#[derive(Parser)]
#[command(name = "scriptcode", version = VERSION, about = "Reversible Latin encoding for low-resource scripts")]
struct Cli {
    /// Flat key = value file with defaults for `seed` and `log_level`; for
    /// `pipeline`, also the pipeline settings.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, value_name = "LEVEL")]
    log_level: Option<log::LevelFilter>,
    /// Seed for every randomized step (classifier training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count code points per script; writes a frequency TSV.
    Analyze {
        corpus: PathBuf,
        /// Script ranges, `Name = 0F00-0FFF, ...` per line. Defaults to
        /// Tibetan, Mongolian, Uyghur and CJK.
        #[arg(long)]
        ranges: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Assign codes to characters from a frequency TSV.
    BuildCodebook {
        #[arg(long)]
        freq: PathBuf,
        #[arg(long, default_value = "basic")]
        strategy: Strategy,
        /// Tokenizer directory (vocab.txt + merges.txt); for `hybrid`, the
        /// merged vocabulary.
        #[arg(long)]
        bpe: Option<PathBuf>,
        /// Extra vocabulary merged into `--bpe` before a hybrid build.
        #[arg(long)]
        extra_bpe: Option<PathBuf>,
        /// Code-space profile; the compact 162-slot layout when absent.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Scripts to include (comma separated); all non-`other` scripts by default.
        #[arg(long, value_delimiter = ',')]
        scripts: Vec<String>,
        #[arg(long, default_value_t = 1)]
        min_count: u64,
        /// Lossy per-character replacements (`char<TAB>text` lines).
        #[arg(long)]
        transform: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Encode stdin (or a file) to stdout.
    Encode {
        #[arg(long)]
        codebook: PathBuf,
        input: Option<PathBuf>,
    },
    /// Decode stdin (or a file) to stdout.
    Decode {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long, default_value = "strict")]
        mode: DecodeMode,
        input: Option<PathBuf>,
    },
    /// Round-trip every line of a corpus; exit 3 when any line fails.
    Verify {
        #[arg(long)]
        codebook: PathBuf,
        corpus: PathBuf,
    },
    /// Compression report for an original file and its encoding.
    Stats {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        bpe: Option<PathBuf>,
        #[arg(long, default_value = "und")]
        lang: String,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        original: PathBuf,
        encoded: PathBuf,
    },
    /// Train a BPE tokenizer.
    BpeTrain {
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, short = 'o')]
        output: PathBuf,
    },
    /// Merge an extra vocabulary into a base tokenizer.
    BpeMerge {
        base: PathBuf,
        extra: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
    },
    /// Histogram of token counts over a codebook's codes.
    TokenHist {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
    },
    /// Train a language classifier on `__label__<tag><TAB><text>` lines.
    LangidTrain {
        labeled: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Used when `--params` is absent.
        #[arg(long, value_enum, default_value = "input")]
        preset: Preset,
        #[arg(long, short = 'o')]
        output: PathBuf,
    },
    /// Classify the given text, or each stdin line.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Print the full distribution as JSON.
        #[arg(long)]
        json: bool,
        text: Option<String>,
    },
    /// Run the classify / encode / model / restore pipeline over lines.
    Pipeline {
        /// Write one JSON trace record per line to stderr.
        #[arg(long)]
        trace: bool,
        input: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Output {
    /// Write here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Input,
    Output,
}

enum Failure {
    Data(String),
    Verification(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        let mut msg = e.to_string();
        let mut src = e.source();
        while let Some(s) = src {
            let text = s.to_string();
            if !msg.contains(&text) {
                msg.push_str(": ");
                msg.push_str(&text);
            }
            src = s.source();
        }
        Failure::Data(msg)
    }
}

fn data(msg: impl Into<String>) -> Failure {
    Failure::Data(msg.into())
}

type Result<T> = std::result::Result<T, Failure>;

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    let f = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

fn input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    match path {
        Some(p) if p != Path::new("-") => open(p),
        _ => Ok(Box::new(io::stdin().lock())),
    }
}

fn output(out: &Output) -> Result<Box<dyn Write>> {
    Ok(match &out.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn stdout() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn load_codebook(path: &Path) -> Result<Codebook> {
    Ok(Codebook::load(path)?)
}

fn load_bpe(path: &Path) -> Result<BpeModel> {
    BpeModel::load(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn run(cli: Cli, seed: Option<u64>) -> Result<()> {
    let config = cli.config;
    match cli.command {
        Cmd::Analyze { corpus, ranges, out } => {
            let ranges = match ranges {
                Some(p) => freq::ranges_from_config(&KvConfig::load(&p)?)?,
                None => freq::default_ranges(),
            };
            let table = freq::scan_corpus(open(&corpus)?, &ranges)?;
            info!("{} characters, {} distinct", table.total_chars(), table.counts().len());
            let mut w = output(&out)?;
            table.write_tsv(&mut w)?;
            w.flush()?;
        }
        Cmd::BuildCodebook {
            freq: freq_path,
            strategy,
            bpe: bpe_dir,
            extra_bpe,
            profile,
            scripts,
            min_count,
            transform,
            out,
        } => {
            let text = fs::read_to_string(&freq_path)
                .map_err(|e| data(format!("{}: {e}", freq_path.display())))?;
            let table = FrequencyTable::from_tsv(&text)?;
            let profile = match profile {
                Some(p) => CodeSpaceProfile::from_config(&KvConfig::load(&p)?)?,
                None => CodeSpaceProfile::compact(),
            };
            let scripts: Vec<String> = if scripts.is_empty() {
                table.scripts().iter().filter(|s| *s != OTHER_SCRIPT).cloned().collect()
            } else {
                scripts
            };
            let names: Vec<&str> = scripts.iter().map(String::as_str).collect();
            let chars = table.merged_charset(&names, min_count)?;
            info!("{} characters from {}", chars.len(), names.join(", "));
            let model = match (&bpe_dir, &extra_bpe) {
                (Some(b), Some(x)) => Some(bpe::merge_vocab(&load_bpe(b)?, &load_bpe(x)?)?),
                (Some(b), None) => Some(load_bpe(b)?),
                (None, Some(_)) => return Err(data("--extra-bpe needs --bpe")),
                (None, None) => None,
            };
            let cb = match (strategy, &model) {
                (Strategy::Basic, _) => codebook::build_basic(&chars, &profile)?,
                (Strategy::TokenizerOpt, Some(m)) => codebook::build_tokenizer_optimized(&chars, &profile, m)?,
                (Strategy::Hybrid, Some(m)) => codebook::build_hybrid(&chars, &profile, m)?,
                (_, None) => return Err(data(format!("strategy {strategy} needs --bpe"))),
            };
            let mut cb = cb.with_source_digest(table.digest());
            if let Some(m) = &model {
                cb = cb.with_token_counts(m);
            }
            if let Some(p) = transform {
                let text = fs::read_to_string(&p).map_err(|e| data(format!("{}: {e}", p.display())))?;
                cb = cb.with_transform(CharTransform::parse(&text)?)?;
            }
            let mut w = output(&out)?;
            w.write_all(cb.to_tsv().as_bytes())?;
            w.flush()?;
        }
        Cmd::Encode { codebook, input: inp } => {
            let cb = load_codebook(&codebook)?;
            let stats = translit::encode_stream(input(inp.as_deref())?, stdout(), &cb)?;
            info!("encoded {} lines, {} -> {} bytes", stats.lines, stats.bytes_in, stats.bytes_out);
        }
        Cmd::Decode { codebook, mode, input: inp } => {
            let cb = load_codebook(&codebook)?;
            let stats = translit::decode_stream(input(inp.as_deref())?, stdout(), &cb, mode)?;
            if stats.warnings > 0 {
                warn!("{} unknown code segments passed through", stats.warnings);
            }
        }
        Cmd::Verify { codebook, corpus } => {
            let cb = load_codebook(&codebook)?;
            let r = translit::verify_roundtrip(open(&corpus)?, &cb)?;
            let mut w = stdout();
            writeln!(w, "lines: {}", r.total)?;
            writeln!(w, "failures: {}", r.failures)?;
            if let (Some(line), Some(offset)) = (r.first_failure_line, r.first_failure_offset) {
                writeln!(w, "first_failure: line {line}, byte {offset}")?;
            }
            if !r.lossless_claimed {
                writeln!(w, "note: codebook applies a lossy transform")?;
            }
            w.flush()?;
            if r.failures > 0 {
                return Err(Failure::Verification(format!(
                    "{} of {} lines did not round-trip",
                    r.failures, r.total
                )));
            }
        }
        Cmd::Stats { codebook, bpe: bpe_dir, lang, format, original, encoded } => {
            let cb = load_codebook(&codebook)?;
            let bytes = metrics::file_compression(open(&original)?, open(&encoded)?)?;
            let tokens = match &bpe_dir {
                Some(d) => Some(metrics::token_compression(open(&original)?, open(&encoded)?, &load_bpe(d)?)?),
                None => None,
            };
            let report = CompressionReport::new(lang, Some(cb.strategy().to_string()), bytes, tokens);
            let mut w = stdout();
            match format {
                ReportFormat::Json => writeln!(w, "{}", report.to_json_line())?,
                ReportFormat::Table => write!(w, "{}", metrics::format_table(&[report]))?,
            }
            w.flush()?;
        }
        Cmd::BpeTrain { corpus, vocab_size, output } => {
            let model = bpe::train(open(&corpus)?, vocab_size)?;
            info!("{} tokens, {} merges", model.len(), model.merges().len());
            model.save(&output)?;
        }
        Cmd::BpeMerge { base, extra, output } => {
            let merged = bpe::merge_vocab(&load_bpe(&base)?, &load_bpe(&extra)?)?;
            info!("merged vocabulary: {} tokens", merged.len());
            merged.save(&output)?;
        }
        Cmd::TokenHist { codebook, bpe: bpe_dir } => {
            let cb = load_codebook(&codebook)?;
            let model = load_bpe(&bpe_dir)?;
            let h = bpe::token_length_histogram(cb.entries().iter().map(|e| e.code.as_str()), &model);
            let mut w = stdout();
            w.write_all(h.to_tsv().as_bytes())?;
            w.flush()?;
        }
        Cmd::LangidTrain { labeled, params, preset, output } => {
            let mut p = match params {
                Some(path) => TrainParams::from_config(&KvConfig::load(&path)?)?,
                None => match preset {
                    Preset::Input => TrainParams::input(),
                    Preset::Output => TrainParams::output(),
                },
            };
            if let Some(s) = seed {
                p.seed = s;
            }
            let examples = langid::read_labeled(open(&labeled)?)?;
            let model = LangIdModel::train(&examples, &p)?;
            info!(
                "labels {}; {} active slots; training accuracy {:.4}",
                model.labels().join(","),
                model.active_buckets(),
                langid::evaluate(&model, &examples).accuracy
            );
            model.save(&output)?;
        }
        Cmd::Detect { model, json, text } => {
            let model = LangIdModel::load(&model)?;
            let mut w = stdout();
            let emit = |t: &str, w: &mut dyn Write| -> Result<()> {
                let p = model.predict(t);
                if json {
                    writeln!(w, "{}", serde_json::to_string(&p).map_err(|e| data(e.to_string()))?)?;
                } else {
                    writeln!(w, "{}\t{:.6}", p.label, p.confidence)?;
                }
                Ok(())
            };
            match text {
                Some(t) => emit(&t, &mut w)?,
                None => {
                    for line in io::stdin().lock().lines() {
                        emit(&line?, &mut w)?;
                    }
                }
            }
            w.flush()?;
        }
        Cmd::Pipeline { trace, input: inp } => {
            let path = config.ok_or_else(|| data("pipeline needs --config"))?;
            let cfg = PipelineConfig::load(&path)?;
            let pipeline = Pipeline::load(&cfg)?;
            let mut err = io::stderr().lock();
            let sink: Option<&mut dyn Write> = if trace { Some(&mut err) } else { None };
            let summary = pipeline.run_stream(input(inp.as_deref())?, stdout(), sink)?;
            info!(
                "{} lines, {} encoded, {} restored, {} errors",
                summary.lines, summary.encoded, summary.restored, summary.errors
            );
            if summary.errors > 0 {
                warn!("{} lines failed and were copied through unchanged", summary.errors);
            }
        }
    }
    Ok(())
}

struct Globals {
    seed: Option<u64>,
    log_level: log::LevelFilter,
}

fn globals(cli: &Cli) -> Result<Globals> {
    let mut g = Globals {
        seed: None,
        log_level: log::LevelFilter::Warn,
    };
    if let Some(path) = &cli.config {
        let cfg = KvConfig::load(path)?;
        if !matches!(cli.command, Cmd::Pipeline { .. }) {
            cfg.deny_unknown(&["seed", "log_level"])?;
        }
        g.seed = cfg.parse_opt("seed")?;
        if let Some(l) = cfg.parse_opt("log_level")? {
            g.log_level = l;
        }
    }
    if cli.seed.is_some() {
        g.seed = cli.seed;
    }
    if let Some(l) = cli.log_level {
        g.log_level = l;
    }
    Ok(g)
}

fn report(kind: &str, msg: &str) {
    let one_line = msg.replace(['\n', '\r'], " ");
    eprintln!("error[{kind}]: {one_line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            report("usage", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let result = globals(&cli).and_then(|g| {
        env_logger::Builder::new()
            .filter_level(g.log_level)
            .format_timestamp(None)
            .init();
        run(cli, g.seed)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            report("data", &m);
            ExitCode::from(2)
        }
        Err(Failure::Verification(m)) => {
            report("verification", &m);
            ExitCode::from(3)
        }
    }
}
