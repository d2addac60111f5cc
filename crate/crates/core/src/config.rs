//! Declarative run configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, Error, Result};
use crate::simdrift::{ReduceMode, NUM_BINS};
use crate::store::sha256_hex;
use crate::types::{ApcMode, DatasetId, PromptMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub id: DatasetId,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorySource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub tag: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    #[default]
    Http,
    /// Offline bag-of-words hashing; useful for smoke runs.
    Hashing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub kind: EmbeddingKind,
    #[serde(default)]
    pub base_url: Option<String>,
    pub model_id: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub llm_id: String,
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub requests_per_minute: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingConfig {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default = "short_tokens")]
    pub max_tokens: u32,
    #[serde(default = "long_tokens")]
    pub max_tokens_long: u32,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: short_tokens(),
            max_tokens_long: long_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerbatimConfig {
    /// Corpus tags to index; all corpora when empty.
    #[serde(default)]
    pub corpora: Vec<String>,
    #[serde(default = "default_max_blob")]
    pub max_blob_bytes: u64,
    #[serde(default)]
    pub raw_exact: bool,
}

impl Default for VerbatimConfig {
    fn default() -> Self {
        Self {
            corpora: Vec::new(),
            max_blob_bytes: default_max_blob(),
            raw_exact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanConfig {
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default = "default_per_bin")]
    pub per_bin: usize,
}

impl Default for HumanConfig {
    fn default() -> Self {
        Self {
            annotations: None,
            per_bin: default_per_bin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetSource>,
    #[serde(default)]
    pub histories: Vec<HistorySource>,
    #[serde(default)]
    pub corpora: Vec<CorpusSource>,
    /// Corpus whose similarities drive the bins; the first corpus if unset.
    #[serde(default)]
    pub analysis_corpus: Option<String>,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub llms: Vec<LlmConfig>,
    /// With-context modes to evaluate. Question-only probes always run.
    #[serde(default = "default_modes")]
    pub modes: Vec<PromptMode>,
    #[serde(default)]
    pub apc_mode: ApcMode,
    #[serde(default)]
    pub multihop_reduce: ReduceMode,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default = "default_threshold")]
    pub semantic_threshold: f64,
    #[serde(default = "default_descend_floor")]
    pub descend_floor: f64,
    #[serde(default = "default_min_bin_n")]
    pub min_bin_n: usize,
    #[serde(default)]
    pub weighted_fit: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Endpoint failures tolerated per stage before the run aborts.
    #[serde(default)]
    pub failure_budget: usize,
    #[serde(default)]
    pub verbatim: VerbatimConfig,
    #[serde(default)]
    pub human: HumanConfig,
}

fn default_dims() -> usize {
    256
}
fn default_batch_size() -> usize {
    32
}
fn default_timeout() -> u64 {
    60
}
fn one() -> f64 {
    1.0
}
fn short_tokens() -> u32 {
    256
}
fn long_tokens() -> u32 {
    512
}
fn default_max_blob() -> u64 {
    u64::from(u32::MAX - 1)
}
fn default_per_bin() -> usize {
    5
}
fn default_modes() -> Vec<PromptMode> {
    vec![PromptMode::WithContext]
}
fn default_bins() -> usize {
    NUM_BINS
}
fn default_z() -> f64 {
    1.96
}
fn default_threshold() -> f64 {
    0.6
}
fn default_descend_floor() -> f64 {
    0.5
}
fn default_min_bin_n() -> usize {
    10
}
fn default_in_flight() -> usize {
    4
}

impl RunConfig {
    /// Parses, resolves paths against the config file's directory and
    /// validates. All problems are reported together.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = Self::parse(&text)?;
        config.resolve_paths(base);
        let issues = config.validate();
        if issues.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = match e.span() {
                Some(span) => key_at(text, span.start),
                None => "<root>".to_string(),
            };
            Error::config(key, message)
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        self.datasets.iter_mut().for_each(|d| join(&mut d.path));
        self.histories.iter_mut().for_each(|h| join(&mut h.path));
        self.corpora.iter_mut().for_each(|c| join(&mut c.path));
        if let Some(a) = &mut self.human.annotations {
            join(a);
        }
    }

    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut issue = |key: String, message: &str| issues.push(ConfigIssue { key, message: message.into() });

        if !(self.semantic_threshold > 0.0 && self.semantic_threshold < 1.0) {
            issue("semantic_threshold".into(), "must lie strictly between 0 and 1");
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            issue("z".into(), "must be positive");
        }
        if self.bins != NUM_BINS {
            issue("bins".into(), "is fixed at 10");
        }
        if !(self.descend_floor > 0.0 && self.descend_floor < 1.0) {
            issue("descend_floor".into(), "must lie strictly between 0 and 1");
        }
        if self.datasets.is_empty() {
            issue("datasets".into(), "at least one dataset is required");
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if !d.path.exists() {
                issue(format!("datasets[{i}].path"), "file does not exist");
            }
        }
        for (i, h) in self.histories.iter().enumerate() {
            if !h.path.exists() {
                issue(format!("histories[{i}].path"), "file does not exist");
            }
        }
        let mut tags = BTreeSet::new();
        for (i, c) in self.corpora.iter().enumerate() {
            if !c.path.exists() {
                issue(format!("corpora[{i}].path"), "file does not exist");
            }
            if c.tag.is_empty() || !tags.insert(c.tag.as_str()) {
                issue(format!("corpora[{i}].tag"), "must be nonempty and unique");
            }
        }
        if let Some(tag) = &self.analysis_corpus {
            if !tags.contains(tag.as_str()) {
                issue("analysis_corpus".into(), "names no configured corpus");
            }
        }
        for (i, tag) in self.verbatim.corpora.iter().enumerate() {
            if !tags.contains(tag.as_str()) {
                issue(format!("verbatim.corpora[{i}]"), "names no configured corpus");
            }
        }
        if self.embedding.kind == EmbeddingKind::Http && self.embedding.base_url.is_none() {
            issue("embedding.base_url".into(), "required for http embeddings");
        }
        if self.embedding.dims == 0 {
            issue("embedding.dims".into(), "must be positive");
        }
        if self.embedding.batch_size == 0 {
            issue("embedding.batch_size".into(), "must be positive");
        }
        let mut ids = BTreeSet::new();
        for (i, l) in self.llms.iter().enumerate() {
            if l.llm_id.is_empty() || !ids.insert(l.llm_id.as_str()) {
                issue(format!("llms[{i}].llm_id"), "must be nonempty and unique");
            }
        }
        if self.modes.contains(&PromptMode::QuestionOnly) {
            issue("modes".into(), "QUESTION_ONLY probes always run; list only with-context modes");
        }
        if !(0.0..=1.0).contains(&self.decoding.top_p) {
            issue("decoding.top_p".into(), "must lie in [0, 1]");
        }
        if self.decoding.temperature < 0.0 {
            issue("decoding.temperature".into(), "must be nonnegative");
        }
        if self.max_in_flight == 0 {
            issue("max_in_flight".into(), "must be positive");
        }
        if self.human.per_bin == 0 {
            issue("human.per_bin".into(), "must be positive");
        }
        if let Some(a) = &self.human.annotations {
            if !a.exists() {
                issue("human.annotations".into(), "file does not exist");
            }
        }
        issues
    }

    /// Digest of the canonical serialized configuration. Credentials are
    /// referenced by variable name only, so none enter the digest.
    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn analysis_corpus_tag(&self) -> Option<&str> {
        self.analysis_corpus
            .as_deref()
            .or_else(|| self.corpora.first().map(|c| c.tag.as_str()))
    }
}

/// Dotted key path of the TOML entry enclosing byte `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let mut table = String::new();
    let mut key = String::new();
    for line in before.lines() {
        let line = line.trim();
        if line.starts_with('[') {
            table = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = line.split_once('=') {
            key = k.trim().to_string();
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<root>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}
