//! Reversible script-to-Latin encoding for low-resource scripts, with the
//! tooling around it: frequency analysis, codebook construction, a small BPE
//! tokenizer, compression metrics, language identification and a
//! classify/encode/restore pipeline.
//!
//! ```
//! use scriptcode::codebook::build_basic;
//! use scriptcode::codespace::CodeSpaceProfile;
//! use scriptcode::translit::{from_latin, to_latin, DecodeMode};
//!
//! let chars: Vec<char> = "ཀཁག".chars().collect();
//! let cb = build_basic(&chars, &CodeSpaceProfile::compact()).unwrap();
//! let enc = to_latin("ཀཁ ok", &cb);
//! assert_eq!(enc.as_str(), "BC @ok@");
//! assert_eq!(from_latin(enc.as_str(), &cb, DecodeMode::Strict).unwrap().text, "ཀཁ ok");
//! ```

pub mod bpe;
pub mod codebook;
pub mod codespace;
pub mod config;
pub mod freq;
pub mod langid;
pub mod metrics;
pub mod pipeline;
pub mod translit;

pub use bpe::BpeModel;
pub use codebook::{Codebook, Strategy};
pub use codespace::{CodeSpaceProfile, CodeString};
pub use freq::FrequencyTable;
pub use langid::LangIdModel;
pub use translit::{from_latin, to_latin, DecodeMode, EncodedText};

/// Version of the on-disk formats (frequency TSV, codebook TSV, BPE files,
/// language model file, trace records).
pub const FORMAT_VERSION: u32 = 1;
