//! Stage orchestration: `ingest → evolve → similarity → verbatim → infer →
//! score → analyze → report`.
//!
//! Every stage writes its outputs under the run's output directory and
//! finishes with a `stage.json` manifest recording the digests of its
//! inputs and outputs. A stage whose inputs, configuration and outputs are
//! unchanged is skipped.

mod stages;

pub use stages::variant_passage;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::{EmbeddingKind, RunConfig};
use crate::endpoint::api_key_from_env;
use crate::error::{Error, Result};
use crate::harness::{ChatModel, HttpChat, LlmClient};
use crate::simdrift::{BatchOptions, Embedder, EmbeddingService, HashingEmbedder, HttpEmbedder};
use crate::store::{file_digest, write_atomic, ContentStore};
use crate::types::DatasetId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Evolve,
    Similarity,
    Verbatim,
    Infer,
    Score,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Evolve,
        Stage::Similarity,
        Stage::Verbatim,
        Stage::Infer,
        Stage::Score,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Evolve => "evolve",
            Stage::Similarity => "similarity",
            Stage::Verbatim => "verbatim",
            Stage::Infer => "infer",
            Stage::Score => "score",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Evolve => &[Stage::Ingest],
            Stage::Similarity => &[Stage::Ingest, Stage::Evolve],
            Stage::Verbatim => &[Stage::Evolve],
            Stage::Infer => &[Stage::Ingest, Stage::Evolve, Stage::Similarity],
            Stage::Score => &[Stage::Ingest, Stage::Infer],
            Stage::Analyze => &[Stage::Ingest, Stage::Evolve, Stage::Similarity, Stage::Score],
            Stage::Report => &[Stage::Verbatim, Stage::Analyze],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    /// Upstream outputs (relative to the output directory) and external
    /// source files, each with its SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Outputs relative to the output directory, with SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// Model endpoints used by a run. Tests inject mocks here.
#[derive(Clone)]
pub struct Endpoints {
    pub embedder: Arc<dyn Embedder>,
    pub llms: BTreeMap<String, Arc<dyn ChatModel>>,
}

impl Endpoints {
    pub fn from_config(config: &RunConfig) -> Self {
        let e = &config.embedding;
        let embedder: Arc<dyn Embedder> = match e.kind {
            EmbeddingKind::Hashing => Arc::new(HashingEmbedder::new(e.dims)),
            EmbeddingKind::Http => Arc::new(HttpEmbedder::new(
                e.base_url.as_deref().unwrap_or_default(),
                &e.model_id,
                api_key_from_env(e.api_key_env.as_deref()),
                Duration::from_secs(e.timeout_secs),
            )),
        };
        let llms = config
            .llms
            .iter()
            .map(|l| {
                let chat = HttpChat::new(
                    &l.base_url,
                    &l.model,
                    api_key_from_env(l.api_key_env.as_deref()),
                    Duration::from_secs(l.timeout_secs),
                )
                .with_rate_limit(l.requests_per_minute);
                (l.llm_id.clone(), Arc::new(chat) as Arc<dyn ChatModel>)
            })
            .collect();
        Self { embedder, llms }
    }
}

/// Exclusive ownership of an output directory for the life of the guard.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(output_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
        let path = output_dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked { path }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub struct Pipeline {
    config: RunConfig,
    endpoints: Endpoints,
    force: bool,
    embeddings: OnceLock<Arc<EmbeddingService>>,
    llm_client: OnceLock<Arc<LlmClient>>,
}

impl Pipeline {
    pub fn new(config: RunConfig, endpoints: Endpoints) -> Self {
        Self {
            config,
            endpoints,
            force: false,
            embeddings: OnceLock::new(),
            llm_client: OnceLock::new(),
        }
    }

    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    /// Narrows the run to one model and/or dataset.
    pub fn restrict(mut self, llm: Option<&str>, dataset: Option<DatasetId>) -> Result<Self> {
        if let Some(llm) = llm {
            if !self.config.llms.iter().any(|l| l.llm_id == llm) {
                return Err(Error::config("llms", format!("no model with llm_id `{llm}`")));
            }
            self.config.llms.retain(|l| l.llm_id == llm);
        }
        if let Some(dataset) = dataset {
            if !self.config.datasets.iter().any(|d| d.id == dataset) {
                return Err(Error::config("datasets", format!("dataset {dataset} is not configured")));
            }
            self.config.datasets.retain(|d| d.id == dataset);
        }
        Ok(self)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    /// Embedding requests issued by this pipeline so far.
    pub fn embedding_calls(&self) -> usize {
        self.embeddings.get().map_or(0, |s| s.endpoint_calls())
    }

    /// Chat requests issued by this pipeline so far.
    pub fn llm_calls(&self) -> usize {
        self.llm_client.get().map_or(0, |c| c.endpoint_calls())
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageStatus> {
        let _lock = RunLock::acquire(self.output_dir())?;
        self.execute(stage)
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        let _lock = RunLock::acquire(self.output_dir())?;
        Stage::ALL
            .into_iter()
            .map(|stage| Ok((stage, self.execute(stage)?)))
            .collect()
    }

    fn stage_dir(&self, stage: Stage) -> String {
        format!("stages/{}", stage.name())
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.output_dir().join(self.stage_dir(stage)).join("stage.json")
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        let path = self.manifest_path(stage);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn external_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let c = &self.config;
        match stage {
            Stage::Ingest => c
                .datasets
                .iter()
                .map(|d| d.path.clone())
                .chain(c.histories.iter().map(|h| h.path.clone()))
                .collect(),
            Stage::Similarity | Stage::Verbatim => c.corpora.iter().map(|x| x.path.clone()).collect(),
            Stage::Analyze => c.human.annotations.iter().cloned().collect(),
            _ => Vec::new(),
        }
    }

    fn current_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for &up in stage.upstream() {
            let manifest = self.read_manifest(up)?.ok_or_else(|| Error::MissingUpstream {
                stage: up.name().into(),
                path: self.manifest_path(up),
            })?;
            for (rel, digest) in manifest.outputs {
                let path = self.output_dir().join(&rel);
                if !path.exists() {
                    return Err(Error::MissingUpstream {
                        stage: up.name().into(),
                        path,
                    });
                }
                if file_digest(&path)? != digest {
                    return Err(Error::StaleInput { path });
                }
                inputs.insert(rel, digest);
            }
        }
        for path in self.external_inputs(stage) {
            let digest = file_digest(&path)?;
            inputs.insert(path.display().to_string(), digest);
        }
        Ok(inputs)
    }

    /// Whether the recorded outputs are all present and intact. A present
    /// but altered output is an error rather than a silent rebuild.
    fn outputs_intact(&self, manifest: &StageManifest) -> Result<bool> {
        for (rel, digest) in &manifest.outputs {
            let path = self.output_dir().join(rel);
            if !path.exists() {
                return Ok(false);
            }
            if file_digest(&path)? != *digest {
                return Err(Error::StaleInput { path });
            }
        }
        Ok(true)
    }

    fn execute(&self, stage: Stage) -> Result<StageStatus> {
        let inputs = self.current_inputs(stage)?;
        let config_hash = self.config.config_hash();
        if !self.force {
            if let Some(previous) = self.read_manifest(stage)? {
                if previous.config_hash == config_hash
                    && previous.inputs == inputs
                    && self.outputs_intact(&previous)?
                {
                    log::info!("{stage}: up to date, skipped");
                    return Ok(StageStatus::Skipped);
                }
            }
        }
        log::info!("{stage}: running");
        let mut outputs = Outputs::new(self.output_dir().to_path_buf(), self.stage_dir(stage));
        stages::run(self, stage, &mut outputs)?;
        let manifest = StageManifest {
            stage: stage.name().into(),
            config_hash,
            inputs,
            outputs: outputs.digests,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.manifest_path(stage), &bytes)?;
        Ok(StageStatus::Ran)
    }

    fn embedding_service(&self) -> Result<Arc<EmbeddingService>> {
        if let Some(s) = self.embeddings.get() {
            return Ok(Arc::clone(s));
        }
        let store = ContentStore::open(self.output_dir().join("cache/embeddings"))?;
        let service = EmbeddingService::new(
            Arc::clone(&self.endpoints.embedder),
            Some(store),
            BatchOptions {
                batch_size: self.config.embedding.batch_size,
                max_in_flight: self.config.max_in_flight,
            },
        );
        Ok(Arc::clone(self.embeddings.get_or_init(|| Arc::new(service))))
    }

    fn llm(&self) -> Result<Arc<LlmClient>> {
        if let Some(c) = self.llm_client.get() {
            return Ok(Arc::clone(c));
        }
        let store = ContentStore::open(self.output_dir().join("cache/llm"))?;
        let mut models = BTreeMap::new();
        for l in &self.config.llms {
            let model = self
                .endpoints
                .llms
                .get(&l.llm_id)
                .ok_or_else(|| Error::config("llms", format!("no endpoint for `{}`", l.llm_id)))?;
            models.insert(l.llm_id.clone(), Arc::clone(model));
        }
        let client = LlmClient::new(models, Some(store));
        Ok(Arc::clone(self.llm_client.get_or_init(|| Arc::new(client))))
    }
}

/// Collects a stage's outputs, writing each atomically as it is produced.
struct Outputs {
    root: PathBuf,
    dir: String,
    digests: BTreeMap<String, String>,
}

impl Outputs {
    fn new(root: PathBuf, dir: String) -> Self {
        Self {
            root,
            dir,
            digests: BTreeMap::new(),
        }
    }

    /// Writes `name` inside the stage directory.
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let rel = format!("{}/{name}", self.dir);
        self.write_rel(rel, bytes)
    }

    fn write_rel(&mut self, rel: String, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(&rel), bytes)?;
        self.digests.insert(rel, crate::store::sha256_hex(bytes));
        Ok(())
    }

    fn record_existing(&mut self, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(&self.root)
            .map_err(|_| Error::Domain(format!("{} is outside the output directory", path.display())))?
            .to_string_lossy()
            .replace('\\', "/");
        self.digests.insert(rel, file_digest(path)?);
        Ok(())
    }
}

fn is_endpoint_failure(e: &Error) -> bool {
    matches!(e, Error::Endpoint(_) | Error::Timeout(_))
}
