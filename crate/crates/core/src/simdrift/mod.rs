//! Semantic drift of edited passages relative to same-title training-corpus
//! content, reduced to one maximum-similarity score per variant and binned.

mod embed;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use embed::{
    cosine, parse_embedding_response, BatchOptions, Embedder, EmbeddingService, EmbeddingVector,
    HashingEmbedder, HttpEmbedder,
};

use crate::error::{Error, Result};
use crate::evolve::EditedVariant;
use crate::ingest::{CorpusDoc, QaInstance};
use crate::text::join_paragraphs;
use crate::types::TaskKind;

pub const NUM_BINS: usize = 10;
pub const CHUNK_TOKENS: usize = 256;
pub const CHUNK_STRIDE: usize = 128;

/// Lower edges of bins 1..=9. Bins are left-closed; the last is closed on
/// both sides.
const BIN_EDGES: [f64; NUM_BINS - 1] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn assign_bin(score: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Domain(format!("similarity {score} outside [0, 1]")));
    }
    Ok(BIN_EDGES.iter().take_while(|&&edge| score >= edge).count())
}

pub fn bin_range(bin: usize) -> (f64, f64) {
    let lo = if bin == 0 { 0.0 } else { BIN_EDGES[bin - 1] };
    let hi = BIN_EDGES.get(bin).copied().unwrap_or(1.0);
    (lo, hi)
}

pub fn bin_midpoint(bin: usize) -> f64 {
    let (lo, hi) = bin_range(bin);
    (lo + hi) / 2.0
}

pub fn clamp_similarity(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

/// Splits text into windows of [`CHUNK_TOKENS`] whitespace tokens advancing
/// by [`CHUNK_STRIDE`]. Text that fits in one window is returned unchanged.
pub fn chunk_document(text: &str) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= CHUNK_TOKENS {
        return vec![text.to_string()];
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + CHUNK_TOKENS).min(tokens.len());
        chunks.push(tokens[start..end].join(" "));
        if end == tokens.len() {
            break;
        }
        start += CHUNK_STRIDE;
    }
    chunks
}

/// Corpus documents grouped by canonical title. Documents of unknown title
/// are left out.
#[derive(Debug, Default, Clone)]
pub struct CorpusTitleIndex {
    by_title: BTreeMap<String, Vec<CorpusDoc>>,
}

impl CorpusTitleIndex {
    pub fn from_docs(docs: impl IntoIterator<Item = CorpusDoc>) -> Self {
        let mut by_title: BTreeMap<String, Vec<CorpusDoc>> = BTreeMap::new();
        for doc in docs {
            if let Some(title) = doc.title.clone() {
                by_title.entry(title).or_default().push(doc);
            }
        }
        Self { by_title }
    }

    pub fn docs(&self, title: &str) -> &[CorpusDoc] {
        self.by_title.get(title).map_or(&[], Vec::as_slice)
    }

    pub fn push(&mut self, title: &str, doc: CorpusDoc) {
        self.by_title.entry(title.to_string()).or_default().push(doc);
    }

    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.by_title.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TitleMatch {
    pub similarity: f64,
    pub doc_id: String,
}

/// Highest clamped cosine between `text` and any chunk of any corpus
/// document titled `title`; `None` when the corpus has no such title.
pub fn max_title_similarity(
    text: &str,
    title: &str,
    corpus: &CorpusTitleIndex,
    service: &EmbeddingService,
) -> Result<Option<TitleMatch>> {
    let docs = corpus.docs(title);
    if docs.is_empty() {
        return Ok(None);
    }
    let query = service.embed_one(text)?;
    let mut best: Option<TitleMatch> = None;
    for doc in docs {
        let chunks = chunk_document(&doc.text);
        let vectors = service.embed(&chunks)?;
        let score = vectors
            .iter()
            .map(|v| clamp_similarity(query.cosine(v)))
            .fold(0.0, f64::max);
        if best.as_ref().map_or(true, |b| score > b.similarity) {
            best = Some(TitleMatch {
                similarity: score,
                doc_id: doc.doc_id.clone(),
            });
        }
    }
    Ok(best)
}

/// Embeds every text that [`similarity_record`] will need for `variants`
/// in one batched pass, so later lookups hit the cache.
pub fn prefetch(
    variants: &[&EditedVariant],
    instances: &BTreeMap<String, QaInstance>,
    corpus: &CorpusTitleIndex,
    service: &EmbeddingService,
) -> Result<()> {
    let mut texts = Vec::new();
    let mut titles = std::collections::BTreeSet::new();
    for variant in variants {
        texts.push(variant.edited_paragraph.clone());
        titles.insert(variant.title.clone());
        if let Some(instance) = instances.get(&variant.instance_id) {
            if instance.task_kind() == TaskKind::MultiHop {
                for gold in &instance.gold_titles {
                    titles.insert(gold.clone());
                    if gold != &variant.title {
                        texts.push(gold_passage(instance, gold));
                    }
                }
            }
        }
    }
    for title in &titles {
        for doc in corpus.docs(title) {
            texts.extend(chunk_document(&doc.text));
        }
    }
    texts.sort();
    texts.dedup();
    service.embed(&texts)?;
    Ok(())
}

fn gold_passage(instance: &QaInstance, title: &str) -> String {
    join_paragraphs(instance.paragraphs.get(title).map_or(&[][..], Vec::as_slice))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceMode {
    #[default]
    Mean,
    Min,
    Max,
}

/// Combines per-gold-title scores of a multi-hop item.
pub fn multihop_reduce(per_title: &BTreeMap<String, f64>, mode: ReduceMode) -> Result<f64> {
    if per_title.is_empty() {
        return Err(Error::NoScorableTitle);
    }
    let scores = per_title.values().copied();
    Ok(match mode {
        ReduceMode::Mean => scores.sum::<f64>() / per_title.len() as f64,
        ReduceMode::Min => scores.fold(f64::INFINITY, f64::min),
        ReduceMode::Max => scores.fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub variant_id: String,
    pub corpus_tag: String,
    pub embed_model_id: String,
    pub max_similarity: f64,
    pub matched_doc_id: String,
    pub bin_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_title_scores: Option<BTreeMap<String, f64>>,
}

/// Similarity of one kept variant to the corpus. `None` means no
/// same-title content exists, and the variant stays out of the bins.
pub fn similarity_record(
    variant: &EditedVariant,
    instance: &QaInstance,
    corpus: &CorpusTitleIndex,
    corpus_tag: &str,
    service: &EmbeddingService,
    reduce: ReduceMode,
) -> Result<Option<SimilarityRecord>> {
    let (score, doc_id, per_title) = if instance.task_kind() == TaskKind::MultiHop {
        let mut per_title = BTreeMap::new();
        let mut docs: BTreeMap<String, String> = BTreeMap::new();
        for gold in &instance.gold_titles {
            let text = if gold == &variant.title {
                edited_gold_passage(instance, variant)
            } else {
                gold_passage(instance, gold)
            };
            if let Some(m) = max_title_similarity(&text, gold, corpus, service)? {
                per_title.insert(gold.clone(), m.similarity);
                docs.insert(gold.clone(), m.doc_id);
            }
        }
        let score = match multihop_reduce(&per_title, reduce) {
            Ok(s) => s,
            Err(Error::NoScorableTitle) => return Ok(None),
            Err(e) => return Err(e),
        };
        let doc_id = docs.get(&variant.title).cloned().unwrap_or_else(|| {
            let best = per_title
                .iter()
                .fold(None::<(&String, f64)>, |acc, (t, &s)| match acc {
                    Some((_, b)) if b >= s => acc,
                    _ => Some((t, s)),
                })
                .map(|(t, _)| t.clone())
                .unwrap_or_default();
            docs[&best].clone()
        });
        (score, doc_id, Some(per_title))
    } else {
        match max_title_similarity(&variant.edited_paragraph, &variant.title, corpus, service)? {
            Some(m) => (m.similarity, m.doc_id, None),
            None => return Ok(None),
        }
    };
    let score = clamp_similarity(score);
    Ok(Some(SimilarityRecord {
        variant_id: variant.variant_id.clone(),
        corpus_tag: corpus_tag.to_string(),
        embed_model_id: service.model_id().to_string(),
        max_similarity: score,
        matched_doc_id: doc_id,
        bin_index: assign_bin(score)?,
        per_title_scores: per_title,
    }))
}

/// The gold title's passage with the variant's edit applied.
fn edited_gold_passage(instance: &QaInstance, variant: &EditedVariant) -> String {
    let paragraphs: Vec<&str> = instance
        .paragraphs
        .get(&variant.title)
        .into_iter()
        .flatten()
        .map(|p| {
            if *p == variant.original_paragraph {
                variant.edited_paragraph.as_str()
            } else {
                p.as_str()
            }
        })
        .collect();
    join_paragraphs(&paragraphs)
}
