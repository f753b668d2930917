//! Classify, encode, run a model stage, classify again, restore.
//!
//! Input in a low-resource language (classified with enough confidence) is
//! encoded before the model stage. The stage output is classified on its
//! own; when that classifier names a low-resource language the text is
//! decoded back to its script. Everything else passes through.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codebook::{CharTransform, Codebook};
use crate::config::{split_list, ConfigError, KvConfig};
use crate::langid::LangIdModel;
use crate::translit::{from_latin, to_latin, DecodeError, DecodeMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading {path}: {message}")]
    Load { path: String, message: String },
    #[error("model stage failed: {message}")]
    Stage { message: String, stderr: String },
    #[error("restoring output: {source}")]
    Decode {
        #[from]
        source: DecodeError,
    },
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelStage {
    Identity,
    /// Run through `sh -c`: text on stdin, text on stdout, exit status 0.
    External { command: String },
}

impl ModelStage {
    /// Runs the stage. A single trailing newline the command adds to input
    /// that had none is removed.
    pub fn run(&self, input: &str) -> Result<String, PipelineError> {
        let command = match self {
            ModelStage::Identity => return Ok(input.to_string()),
            ModelStage::External { command } => command,
        };
        let stage_err = |message: String, stderr: String| PipelineError::Stage { message, stderr };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| stage_err(format!("cannot start `{command}`: {e}"), String::new()))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let data = input.as_bytes().to_vec();
        let writer = std::thread::spawn(move || stdin.write_all(&data));
        let out = child
            .wait_with_output()
            .map_err(|e| stage_err(format!("waiting for `{command}`: {e}"), String::new()))?;
        let write_result = writer.join().expect("stdin writer does not panic");
        let stderr = String::from_utf8_lossy(&out.stderr).trim_end().to_string();
        if !out.status.success() {
            return Err(stage_err(format!("`{command}` exited with {}", out.status), stderr));
        }
        if let Err(e) = write_result {
            if e.kind() != io::ErrorKind::BrokenPipe {
                return Err(stage_err(format!("writing to `{command}`: {e}"), stderr));
            }
        }
        let mut text = String::from_utf8(out.stdout)
            .map_err(|_| stage_err(format!("`{command}` wrote invalid UTF-8"), stderr))?;
        if !input.ends_with('\n') && text.ends_with('\n') {
            text.pop();
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub model_stage: ModelStage,
    pub decode_mode: DecodeMode,
    /// Below this confidence text is left as it is.
    pub confidence_threshold: f64,
    pub max_concurrency: usize,
    pub low_resource: Vec<String>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            model_stage: ModelStage::Identity,
            decode_mode: DecodeMode::Strict,
            confidence_threshold: 0.5,
            max_concurrency: std::thread::available_parallelism().map_or(1, usize::from),
            low_resource: ["bo", "mn", "ug"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub codebook_path: PathBuf,
    pub input_model_path: PathBuf,
    pub output_model_path: PathBuf,
    /// Optional lossy transform for `zh` input (for example to pinyin).
    pub zh_transform_path: Option<PathBuf>,
    pub options: PipelineOptions,
}

const CONFIG_KEYS: [&str; 12] = [
    "codebook",
    "input_model",
    "output_model",
    "zh_transform",
    "model_stage",
    "model_command",
    "decode_mode",
    "confidence_threshold",
    "max_concurrency",
    "low_resource",
    // Read by the command-line front end.
    "seed",
    "log_level",
];

impl PipelineConfig {
    /// Relative paths are resolved against `base_dir`.
    pub fn from_config(cfg: &KvConfig, base_dir: &Path) -> Result<Self, PipelineError> {
        cfg.deny_unknown(&CONFIG_KEYS)?;
        let path = |k: &str| -> Result<PathBuf, ConfigError> { Ok(base_dir.join(cfg.require(k)?)) };
        let model_stage = match cfg.get("model_stage").unwrap_or("identity") {
            "identity" => ModelStage::Identity,
            "external" => ModelStage::External {
                command: cfg.require("model_command")?.to_string(),
            },
            other => {
                return Err(cfg
                    .invalid("model_stage", format!("{other:?} is not identity or external"))
                    .into())
            }
        };
        let mut options = PipelineOptions {
            model_stage,
            ..PipelineOptions::default()
        };
        if let Some(m) = cfg.parse_opt("decode_mode")? {
            options.decode_mode = m;
        }
        if let Some(t) = cfg.parse_opt::<f64>("confidence_threshold")? {
            if !(0.0..=1.0).contains(&t) {
                return Err(cfg.invalid("confidence_threshold", "must lie in [0, 1]").into());
            }
            options.confidence_threshold = t;
        }
        if let Some(n) = cfg.parse_opt::<usize>("max_concurrency")? {
            if n == 0 {
                return Err(cfg.invalid("max_concurrency", "must be at least 1").into());
            }
            options.max_concurrency = n;
        }
        if let Some(v) = cfg.get("low_resource") {
            options.low_resource = split_list(v).map(String::from).collect();
        }
        Ok(PipelineConfig {
            codebook_path: path("codebook")?,
            input_model_path: path("input_model")?,
            output_model_path: path("output_model")?,
            zh_transform_path: cfg.get("zh_transform").map(|p| base_dir.join(p)),
            options,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let cfg = KvConfig::load(path)?;
        Self::from_config(&cfg, path.parent().unwrap_or(Path::new(".")))
    }
}

/// The decisions taken for one text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineTrace {
    pub input_label: String,
    pub input_confidence: f64,
    pub encoded: bool,
    /// False when a lossy transform was applied.
    pub restorable: bool,
    pub stage_input: String,
    pub model_stage_output: String,
    pub output_label: String,
    pub output_confidence: f64,
    pub restored: bool,
    pub labels_disagree: bool,
    pub warnings: Vec<String>,
    pub output: String,
}

pub struct Pipeline {
    codebook: Codebook,
    input_model: LangIdModel,
    output_model: LangIdModel,
    zh_transform: Option<CharTransform>,
    options: PipelineOptions,
    pool: rayon::ThreadPool,
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Pipeline {
    pub fn new(
        codebook: Codebook,
        input_model: LangIdModel,
        output_model: LangIdModel,
        zh_transform: Option<CharTransform>,
        options: PipelineOptions,
    ) -> Result<Self, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.max_concurrency.max(1))
            .build()
            .map_err(|e| PipelineError::Stage {
                message: format!("cannot start worker pool: {e}"),
                stderr: String::new(),
            })?;
        Ok(Pipeline {
            codebook,
            input_model,
            output_model,
            zh_transform,
            options,
            pool,
        })
    }

    pub fn load(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let codebook =
            Codebook::load(&config.codebook_path).map_err(|e| load_err(&config.codebook_path, e))?;
        let input_model = LangIdModel::load(&config.input_model_path)
            .map_err(|e| load_err(&config.input_model_path, e))?;
        let output_model = LangIdModel::load(&config.output_model_path)
            .map_err(|e| load_err(&config.output_model_path, e))?;
        let zh_transform = match &config.zh_transform_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| load_err(p, e))?;
                Some(CharTransform::parse(&text).map_err(|e| load_err(p, e))?)
            }
            None => None,
        };
        Self::new(codebook, input_model, output_model, zh_transform, config.options.clone())
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    fn is_low_resource(&self, label: &str) -> bool {
        self.options.low_resource.iter().any(|l| l == label)
    }

    fn apply_zh_transform(&self, text: &str) -> String {
        let t = self.zh_transform.as_ref().expect("caller checked");
        let mut out = String::with_capacity(text.len() * 2);
        for c in text.chars() {
            match t.get(c) {
                Some(r) => out.push_str(r),
                None => out.push(c),
            }
        }
        out
    }

    pub fn process(&self, text: &str) -> Result<PipelineTrace, PipelineError> {
        let threshold = self.options.confidence_threshold;
        let input = self.input_model.predict(text);
        let confident = input.confidence >= threshold;
        let mut warnings = Vec::new();
        let (encoded, restorable, stage_input) = if confident && self.is_low_resource(&input.label) {
            (true, true, to_latin(text, &self.codebook).into_string())
        } else if confident && input.label == "zh" && self.zh_transform.is_some() {
            (true, false, self.apply_zh_transform(text))
        } else {
            if !confident {
                warnings.push(format!(
                    "input confidence {:.3} below threshold {threshold}; passed through",
                    input.confidence
                ));
            }
            (false, true, text.to_string())
        };
        let stage_output = self.options.model_stage.run(&stage_input)?;
        let output = self.output_model.predict(&stage_output);
        let restore = self.is_low_resource(&output.label);
        let final_text = if restore {
            let d = from_latin(&stage_output, &self.codebook, self.options.decode_mode)?;
            warnings.extend(
                d.warnings
                    .iter()
                    .map(|w| format!("unknown code segment {:?} at byte {}", w.segment, w.offset)),
            );
            d.text
        } else {
            stage_output.clone()
        };
        let labels_disagree = input.label != output.label;
        if labels_disagree && encoded {
            warnings.push(format!(
                "input classified {} but output classified {}; routed by output",
                input.label, output.label
            ));
        }
        Ok(PipelineTrace {
            input_label: input.label,
            input_confidence: input.confidence,
            encoded,
            restorable,
            stage_input,
            model_stage_output: stage_output,
            output_label: output.label,
            output_confidence: output.confidence,
            restored: restore,
            labels_disagree,
            warnings,
            output: final_text,
        })
    }

    /// Recomputes the output of `text` from the decisions and stage output
    /// recorded in `trace`, without running the classifiers or the stage.
    pub fn replay(&self, text: &str, trace: &PipelineTrace) -> Result<String, PipelineError> {
        let stage_input = match (trace.encoded, trace.restorable) {
            (false, _) => text.to_string(),
            (true, true) => to_latin(text, &self.codebook).into_string(),
            (true, false) => {
                if self.zh_transform.is_none() {
                    return Err(PipelineError::Replay("trace used a transform that is not loaded".into()));
                }
                self.apply_zh_transform(text)
            }
        };
        if stage_input != trace.stage_input {
            return Err(PipelineError::Replay("stage input differs from the trace".into()));
        }
        if trace.restored {
            Ok(from_latin(&trace.model_stage_output, &self.codebook, self.options.decode_mode)?.text)
        } else {
            Ok(trace.model_stage_output.clone())
        }
    }

    /// Processes lines in parallel; results keep input order and one failing
    /// line does not affect the others.
    pub fn batch(&self, lines: &[String]) -> Vec<Result<PipelineTrace, PipelineError>> {
        self.pool
            .install(|| lines.par_iter().map(|l| self.process(l)).collect())
    }

    /// Streams `reader` line by line to `writer`. A line that fails is copied
    /// through unchanged and counted as an error. With `trace`, one JSON
    /// record per line is written there.
    pub fn run_stream<R: BufRead, W: Write>(
        &self,
        mut reader: R,
        mut writer: W,
        mut trace: Option<&mut dyn Write>,
    ) -> Result<BatchSummary, PipelineError> {
        const CHUNK: usize = 1024;
        let mut summary = BatchSummary::default();
        let mut lines = Vec::with_capacity(CHUNK);
        let mut endings = Vec::with_capacity(CHUNK);
        loop {
            lines.clear();
            endings.clear();
            while lines.len() < CHUNK {
                let mut buf = String::new();
                if reader.read_line(&mut buf)? == 0 {
                    break;
                }
                let had_newline = buf.ends_with('\n');
                if had_newline {
                    buf.pop();
                }
                lines.push(buf);
                endings.push(had_newline);
            }
            if lines.is_empty() {
                break;
            }
            let results = self.batch(&lines);
            for ((line, result), newline) in lines.iter().zip(results).zip(&endings) {
                summary.lines += 1;
                let record = match result {
                    Ok(t) => {
                        summary.record(&t);
                        writer.write_all(t.output.as_bytes())?;
                        TraceRecord { line: summary.lines, trace: Some(t), error: None }
                    }
                    Err(e) => {
                        summary.errors += 1;
                        writer.write_all(line.as_bytes())?;
                        TraceRecord { line: summary.lines, trace: None, error: Some(e.to_string()) }
                    }
                };
                if *newline {
                    writer.write_all(b"\n")?;
                }
                if let Some(t) = trace.as_deref_mut() {
                    serde_json::to_writer(&mut *t, &record).map_err(io::Error::other)?;
                    t.write_all(b"\n")?;
                }
            }
        }
        writer.flush()?;
        Ok(summary)
    }
}

#[derive(Debug, Serialize)]
struct TraceRecord {
    line: u64,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    trace: Option<PipelineTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub lines: u64,
    pub errors: u64,
    pub encoded: u64,
    pub restored: u64,
    pub by_input_label: BTreeMap<String, u64>,
}

impl BatchSummary {
    pub fn record(&mut self, t: &PipelineTrace) {
        self.encoded += u64::from(t.encoded);
        self.restored += u64::from(t.restored);
        *self.by_input_label.entry(t.input_label.clone()).or_insert(0) += 1;
    }
}
