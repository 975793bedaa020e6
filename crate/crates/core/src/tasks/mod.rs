//! Synthetic token-manipulation tasks.
//!
//! Six task families probe distinct skills: in-context recall (plain, fuzzy,
//! noisy), selective copying, compression and memorization. Every generator
//! is a pure function of `(TaskConfig, seed, split)`; samples are produced from
//! per-sample random streams (see [`crate::rng`]) so generation order does not
//! affect the output.
//!
//! Token layout: ids `0..V` are content tokens (first half keys, second half
//! values for tasks that divide the vocabulary), followed by an optional noise
//! range, followed by the five special tokens in the fixed order
//! pad, blank, insert, compress, separator.

mod compression;
mod copy;
pub mod format;
mod grid;
mod memorization;
mod recall;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compression::gen_compression;
pub use copy::gen_selective_copy;
pub use grid::{desk_config, desk_grid, difficulty_grid};
pub use memorization::{fact_dictionary, gen_memorization};
pub use recall::gen_recall;

/// Offset added to the base seed to obtain the evaluation split's seed.
pub const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Default number of evaluation samples per task setting.
pub const DEFAULT_EVAL_SAMPLES: u32 = 1280;

/// Size of the dedicated noise vocabulary used by noisy recall.
pub const NOISE_VOCAB: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Recall,
    FuzzyRecall,
    NoisyRecall,
    SelectiveCopy,
    Compression,
    Memorization,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Recall,
        TaskKind::FuzzyRecall,
        TaskKind::NoisyRecall,
        TaskKind::SelectiveCopy,
        TaskKind::Compression,
        TaskKind::Memorization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Recall => "recall",
            TaskKind::FuzzyRecall => "fuzzy_recall",
            TaskKind::NoisyRecall => "noisy_recall",
            TaskKind::SelectiveCopy => "selective_copy",
            TaskKind::Compression => "compression",
            TaskKind::Memorization => "memorization",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            TaskKind::Recall => 0,
            TaskKind::FuzzyRecall => 1,
            TaskKind::NoisyRecall => 2,
            TaskKind::SelectiveCopy => 3,
            TaskKind::Compression => 4,
            TaskKind::Memorization => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn is_recall_family(self) -> bool {
        matches!(self, TaskKind::Recall | TaskKind::FuzzyRecall | TaskKind::NoisyRecall)
    }

    /// Whether the content vocabulary is split into key and value halves.
    pub fn divides_vocab(self) -> bool {
        self.is_recall_family() || self == TaskKind::Memorization
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialRole {
    Pad,
    Blank,
    Insert,
    Compress,
    Separator,
}

impl SpecialRole {
    pub const ORDER: [SpecialRole; 5] = [
        SpecialRole::Pad,
        SpecialRole::Blank,
        SpecialRole::Insert,
        SpecialRole::Compress,
        SpecialRole::Separator,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ORDER.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    /// Content vocabulary size `V` (special and noise tokens are extra ids).
    pub total_size: u32,
    pub key_tokens: Range<u32>,
    pub value_tokens: Range<u32>,
    pub noise_tokens: Option<Range<u32>>,
    pub special_tokens: BTreeMap<SpecialRole, u32>,
}

impl VocabSpec {
    pub fn new(content: u32, divided: bool, noise: u32) -> Self {
        let (key_tokens, value_tokens) = if divided {
            (0..content / 2, content / 2..content)
        } else {
            (0..content, content..content)
        };
        let noise_tokens = (noise > 0).then(|| content..content + noise);
        let base = content + noise;
        let special_tokens = SpecialRole::ORDER
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, base + i as u32))
            .collect();
        VocabSpec { total_size: content, key_tokens, value_tokens, noise_tokens, special_tokens }
    }

    pub fn special(&self, role: SpecialRole) -> u32 {
        self.special_tokens[&role]
    }

    pub fn noise_size(&self) -> u32 {
        self.noise_tokens.as_ref().map_or(0, |r| r.end - r.start)
    }

    /// Number of distinct token ids a model must embed.
    pub fn model_vocab_size(&self) -> u32 {
        let max_special = self.special_tokens.values().copied().max().unwrap_or(0);
        (self.total_size + self.noise_size()).max(max_special + 1)
    }

    pub fn content(&self) -> Range<u32> {
        0..self.total_size
    }

    pub fn validate(&self) -> Result<()> {
        let mut ranges: Vec<(&str, Range<u32>)> = vec![
            ("keys", self.key_tokens.clone()),
            ("values", self.value_tokens.clone()),
        ];
        if let Some(n) = &self.noise_tokens {
            ranges.push(("noise", n.clone()));
        }
        for (&role, &id) in &self.special_tokens {
            ranges.push((role_name(role), id..id + 1));
        }
        for (i, (na, a)) in ranges.iter().enumerate() {
            for (nb, b) in &ranges[i + 1..] {
                if a.start < b.end && b.start < a.end && !a.is_empty() && !b.is_empty() {
                    return Err(Error::config(format!("token ranges `{na}` and `{nb}` overlap")));
                }
            }
        }
        if !self.value_tokens.is_empty() && self.key_tokens.len() != self.value_tokens.len() {
            return Err(Error::config("key and value ranges differ in size"));
        }
        let limit = self.total_size + self.noise_size() + self.special_tokens.len() as u32;
        if ranges.iter().any(|(_, r)| r.end > limit) {
            return Err(Error::config("token id outside the vocabulary"));
        }
        if self.model_vocab_size() > u16::MAX as u32 + 1 {
            return Err(Error::config("vocabulary exceeds the 16-bit token encoding"));
        }
        Ok(())
    }
}

fn role_name(r: SpecialRole) -> &'static str {
    match r {
        SpecialRole::Pad => "pad",
        SpecialRole::Blank => "blank",
        SpecialRole::Insert => "insert",
        SpecialRole::Compress => "compress",
        SpecialRole::Separator => "separator",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub seq_len: u32,
    pub vocab: VocabSpec,
    pub train_samples: u32,
    pub eval_samples: u32,
    /// Share of noise tokens in the input (noisy recall only).
    pub noise_share: f64,
    /// Number of tokens to copy (selective copy only).
    pub copy_count: u32,
    /// Longest key/value length in tokens (fuzzy recall only).
    pub max_kv_len: u32,
}

impl TaskConfig {
    /// The baseline difficulty setting of each task.
    pub fn baseline(kind: TaskKind) -> Self {
        let (seq_len, vocab, train) = match kind {
            TaskKind::Recall | TaskKind::FuzzyRecall | TaskKind::NoisyRecall => (128, 16, 12_800),
            TaskKind::SelectiveCopy => (256, 16, 12_800),
            TaskKind::Compression => (32, 16, 12_800),
            TaskKind::Memorization => (32, 256, 256),
        };
        let mut cfg = TaskConfig {
            kind,
            seq_len,
            vocab: VocabSpec::new(vocab, kind.divides_vocab(), 0),
            train_samples: train,
            eval_samples: DEFAULT_EVAL_SAMPLES,
            noise_share: 0.0,
            copy_count: 0,
            max_kv_len: 1,
        };
        match kind {
            TaskKind::NoisyRecall => cfg.noise_share = 0.2,
            TaskKind::FuzzyRecall => cfg.max_kv_len = 3,
            TaskKind::SelectiveCopy => cfg.copy_count = 16,
            _ => {}
        }
        cfg.vocab = cfg.vocab_for(vocab);
        cfg
    }

    fn vocab_for(&self, content: u32) -> VocabSpec {
        let noise = if self.kind == TaskKind::NoisyRecall { NOISE_VOCAB } else { 0 };
        VocabSpec::new(content, self.kind.divides_vocab(), noise)
    }

    pub fn with_vocab(mut self, content: u32) -> Self {
        self.vocab = self.vocab_for(content);
        self
    }

    pub fn with_seq_len(mut self, seq_len: u32) -> Self {
        self.seq_len = seq_len;
        self
    }

    pub fn with_train_samples(mut self, n: u32) -> Self {
        self.train_samples = n;
        self
    }

    pub fn with_eval_samples(mut self, n: u32) -> Self {
        self.eval_samples = n;
        self
    }

    pub fn with_noise_share(mut self, share: f64) -> Self {
        self.noise_share = share;
        self
    }

    pub fn with_copy_count(mut self, n: u32) -> Self {
        self.copy_count = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.train_samples == 0 || self.vocab.total_size == 0 {
            return Err(Error::config("seq_len, train_samples and vocabulary size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_share) {
            return Err(Error::config(format!("noise share {} outside [0, 1]", self.noise_share)));
        }
        if self.noise_share > 0.0 && self.kind != TaskKind::NoisyRecall {
            return Err(Error::config(format!("noise share set for non-noisy task `{}`", self.kind)));
        }
        if self.copy_count >= self.seq_len {
            return Err(Error::config("copy_count must be smaller than seq_len"));
        }
        if self.max_kv_len == 0 {
            return Err(Error::config("max_kv_len must be positive"));
        }
        self.vocab.validate()
    }

    /// Stable identifier of the setting: SHA-256 of its canonical JSON.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("task config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    /// Short human-readable label, e.g. `recall/L128/V16/N12800`.
    pub fn label(&self) -> String {
        let mut s = format!(
            "{}/L{}/V{}/N{}",
            self.kind, self.seq_len, self.vocab.total_size, self.train_samples
        );
        if self.kind == TaskKind::NoisyRecall {
            s.push_str(&format!("/noise{}", self.noise_share));
        }
        if self.kind == TaskKind::SelectiveCopy {
            s.push_str(&format!("/copy{}", self.copy_count));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<u32>,
    /// `target[t]` is the token the model must produce at position `t`.
    pub target: Vec<u32>,
    /// `true` where the position is scored.
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Eval => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Eval),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: TaskConfig,
    pub split: Split,
    pub samples: Vec<Sample>,
    /// Base seed; the evaluation split draws its samples from
    /// `seed + EVAL_SEED_OFFSET`.
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub(crate) fn split_seed(seed: u64, split: Split) -> u64 {
    match split {
        Split::Train => seed,
        Split::Eval => seed.wrapping_add(EVAL_SEED_OFFSET),
    }
}

pub(crate) fn sample_count(config: &TaskConfig, split: Split) -> u32 {
    match split {
        Split::Train => config.train_samples,
        Split::Eval => config.eval_samples,
    }
}

/// Builds `count` samples in parallel from a per-index generator.
pub(crate) fn build_samples<F>(count: u32, f: F) -> Result<Vec<Sample>>
where
    F: Fn(u64) -> Result<Sample> + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

/// Generates one split of the task described by `config`.
pub fn generate(config: &TaskConfig, seed: u64, split: Split) -> Result<Dataset> {
    match config.kind {
        TaskKind::Recall | TaskKind::FuzzyRecall | TaskKind::NoisyRecall => {
            recall::generate(config, seed, split)
        }
        TaskKind::SelectiveCopy => copy::generate(config, seed, split),
        TaskKind::Compression => compression::generate(config, seed, split),
        TaskKind::Memorization => memorization::generate(config, seed, split),
    }
}

/// Generates the paired train and evaluation splits.
pub fn generate_pair(config: &TaskConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    Ok((generate(config, seed, Split::Train)?, generate(config, seed, Split::Eval)?))
}
