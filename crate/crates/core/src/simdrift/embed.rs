//! Embedding clients and the caching, batching service in front of them.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock, RwLock};
use std::time::Duration;

use serde_json::{json, Value};

use crate::endpoint::{bounded_map, AttemptError, JsonEndpoint, RetryPolicy};
use crate::error::{Error, Result};
use crate::store::{digest_fields, ContentStore};

/// A model that maps texts to vectors. One `embed_batch` call is one
/// endpoint request.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Arc<Vec<f64>>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

/// Dot product; equals cosine similarity for unit vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder {
    endpoint: JsonEndpoint,
    model: String,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let url = format!("{}/embeddings", base_url.trim_end_matches('/'));
        Self {
            endpoint: JsonEndpoint::new(url, api_key, timeout),
            model: model.to_string(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = json!({ "model": self.model, "input": texts });
        let (vectors, _) = self.retry.run(self.endpoint.url(), |_| {
            let response = self.endpoint.post(&body)?;
            parse_embedding_response(&response, texts.len()).map_err(AttemptError::Fatal)
        })?;
        Ok(vectors)
    }
}

/// Reads `{"data":[{"embedding":[...], "index": i}, ...]}`, honoring
/// `index` when present.
pub fn parse_embedding_response(response: &Value, expected: usize) -> std::result::Result<Vec<Vec<f32>>, String> {
    let data = response
        .get("data")
        .and_then(Value::as_array)
        .ok_or("response lacks a `data` array")?;
    if data.len() != expected {
        return Err(format!("expected {expected} embeddings, got {}", data.len()));
    }
    let mut out: Vec<Option<Vec<f32>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .map_or(pos, |i| i as usize);
        let vector = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or("item lacks an `embedding` array")?
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32).ok_or("non-numeric embedding value"))
            .collect::<std::result::Result<Vec<f32>, _>>()?;
        let slot = out.get_mut(index).ok_or("embedding index out of range")?;
        *slot = Some(vector);
    }
    out.into_iter()
        .map(|v| v.ok_or_else(|| "missing embedding index".to_string()))
        .collect()
}

/// Deterministic bag-of-words feature hashing. Needs no endpoint; useful
/// for offline smoke runs.
pub struct HashingEmbedder {
    model_id: String,
    dims: usize,
}

impl HashingEmbedder {
    pub fn new(dims: usize) -> Self {
        Self {
            model_id: format!("hashing-{dims}"),
            dims: dims.max(1),
        }
    }
}

impl Embedder for HashingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut v = vec![0f32; self.dims];
                for word in crate::text::words(text) {
                    let digest = digest_fields(&[word.as_bytes()]);
                    let bucket = u64::from_str_radix(&digest[..15], 16).unwrap_or(0) as usize % self.dims;
                    v[bucket] += 1.0;
                }
                if v.iter().all(|x| *x == 0.0) {
                    v[0] = 1.0;
                }
                v
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_in_flight: 4,
        }
    }
}

/// Batches, caches and normalizes embedding requests.
///
/// Vectors are cached by a digest of `(model_id, text)`, in memory and
/// optionally on disk, so a warm cache answers without endpoint calls.
pub struct EmbeddingService {
    embedder: Arc<dyn Embedder>,
    disk: Option<ContentStore>,
    memory: RwLock<HashMap<String, Arc<Vec<f64>>>>,
    options: BatchOptions,
    dimension: OnceLock<usize>,
    calls: AtomicUsize,
}

impl EmbeddingService {
    pub fn new(embedder: Arc<dyn Embedder>, disk: Option<ContentStore>, options: BatchOptions) -> Self {
        Self {
            embedder,
            disk,
            memory: RwLock::new(HashMap::new()),
            options,
            dimension: OnceLock::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn model_id(&self) -> &str {
        self.embedder.model_id()
    }

    /// Number of `embed_batch` requests issued so far.
    pub fn endpoint_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn key(&self, text: &str) -> String {
        digest_fields(&["embedding", self.model_id(), text])
    }

    fn lookup(&self, key: &str) -> Result<Option<Arc<Vec<f64>>>> {
        if let Some(v) = self.memory.read().unwrap_or_else(|p| p.into_inner()).get(key) {
            return Ok(Some(Arc::clone(v)));
        }
        let Some(disk) = &self.disk else { return Ok(None) };
        let Some(bytes) = disk.get(key)? else { return Ok(None) };
        if bytes.len() % 8 != 0 {
            return Ok(None);
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let values = Arc::new(values);
        self.memory
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key.to_string(), Arc::clone(&values));
        Ok(Some(values))
    }

    fn check_dimension(&self, got: usize) -> Result<()> {
        let expected = *self.dimension.get_or_init(|| got);
        if expected != got {
            return Err(Error::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    /// One unit vector per input, in input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut found: HashMap<&str, Arc<Vec<f64>>> = HashMap::new();
        let mut missing: Vec<(&str, &String)> = Vec::new();
        let mut queued: HashSet<&str> = HashSet::new();
        for (key, text) in keys.iter().zip(texts) {
            if found.contains_key(key.as_str()) || queued.contains(key.as_str()) {
                continue;
            }
            match self.lookup(key)? {
                Some(v) => {
                    found.insert(key, v);
                }
                None => {
                    queued.insert(key);
                    missing.push((key, text));
                }
            }
        }

        if !missing.is_empty() {
            let batches: Vec<&[(&str, &String)]> =
                missing.chunks(self.options.batch_size.max(1)).collect();
            let results = bounded_map(&batches, self.options.max_in_flight, |batch| {
                let inputs: Vec<String> = batch.iter().map(|(_, t)| (*t).clone()).collect();
                self.calls.fetch_add(1, Ordering::SeqCst);
                self.embedder.embed_batch(&inputs)
            });
            for (batch, result) in batches.iter().zip(results) {
                let vectors = result?;
                if vectors.len() != batch.len() {
                    return Err(Error::Endpoint(format!(
                        "expected {} embeddings, got {}",
                        batch.len(),
                        vectors.len()
                    )));
                }
                for ((key, _), raw) in batch.iter().zip(vectors) {
                    self.check_dimension(raw.len())?;
                    let unit = Arc::new(normalize(&raw)?);
                    if let Some(disk) = &self.disk {
                        let bytes: Vec<u8> = unit.iter().flat_map(|x| x.to_le_bytes()).collect();
                        disk.put(key, &bytes)?;
                    }
                    self.memory
                        .write()
                        .unwrap_or_else(|p| p.into_inner())
                        .insert(key.to_string(), Arc::clone(&unit));
                    found.insert(key, unit);
                }
            }
        }

        keys.iter()
            .map(|k| {
                let values = Arc::clone(&found[k.as_str()]);
                self.check_dimension(values.len())?;
                Ok(EmbeddingVector {
                    values,
                    model_id: self.model_id().to_string(),
                })
            })
            .collect()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}

fn normalize(raw: &[f32]) -> Result<Vec<f64>> {
    let norm = raw.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Domain("embedding has zero or non-finite norm".into()));
    }
    Ok(raw.iter().map(|&x| f64::from(x) / norm).collect())
}
