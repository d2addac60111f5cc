//! Prompting, model queries, scoring and the parametric-knowledge filter.

mod llm;
mod prompt;
mod score;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use llm::{chat_response, response_text, ChatModel, DecodingParams, HttpChat, LlmClient};
pub use prompt::{
    assemble_context, build_prompt, template, template_id, ParagraphEdit, PromptSpec, Template,
    COT_SUFFIX, TEMPLATES,
};
pub use score::{
    final_answer, score_inclusion_match, score_semantic, Scorer, ANSWER_MARKER,
    DEFAULT_SEMANTIC_THRESHOLD,
};

use crate::error::{Error, Result};
use crate::ingest::QaInstance;
use crate::simdrift::EmbeddingService;
use crate::types::{DatasetId, PromptMode};

/// Model output before scoring. `error` is set when the endpoint failed
/// after retries; such records are never scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_id: Option<String>,
    pub instance_id: String,
    pub dataset_id: DatasetId,
    pub llm_id: String,
    pub mode: PromptMode,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_id: Option<String>,
    pub instance_id: String,
    pub dataset_id: DatasetId,
    pub llm_id: String,
    pub mode: PromptMode,
    pub raw_output: String,
    pub correct: u8,
    pub scorer: Scorer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_detail: Option<f64>,
}

/// Labels one successful prediction. Chain-of-thought outputs are judged on
/// their final answer.
pub fn score_prediction(
    raw: &RawPrediction,
    instance: &QaInstance,
    semantic: Option<&EmbeddingService>,
    threshold: f64,
) -> Result<PredictionRecord> {
    let answer = if raw.mode == PromptMode::WithContextCot {
        final_answer(&raw.raw_output)
    } else {
        raw.raw_output.as_str()
    };
    let task = instance.task_kind();
    let scorer = Scorer::for_task(task);
    let (correct, score_detail) = match scorer {
        Scorer::InclusionMatch => (score_inclusion_match(answer, &instance.gold_answers, task), None),
        Scorer::SemanticThreshold => {
            let service = semantic
                .ok_or_else(|| Error::Endpoint("semantic scoring needs an embedding endpoint".into()))?;
            let (label, sim) = score_semantic(answer, &instance.gold_answers, service, threshold)?;
            (label, Some(sim))
        }
    };
    Ok(PredictionRecord {
        variant_id: raw.variant_id.clone(),
        instance_id: raw.instance_id.clone(),
        dataset_id: raw.dataset_id,
        llm_id: raw.llm_id.clone(),
        mode: raw.mode,
        raw_output: raw.raw_output.clone(),
        correct,
        scorer,
        score_detail,
    })
}

/// Share of instances a model answers without the passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRate {
    pub dataset_id: DatasetId,
    pub llm_id: String,
    pub instances: usize,
    pub excluded: usize,
    pub filtered_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    /// `(llm_id, variant_id)` pairs that remain in the analysis.
    pub kept: BTreeSet<(String, String)>,
    /// `(llm_id, instance_id)` pairs answered correctly without context.
    pub excluded_instances: BTreeSet<(String, String)>,
    pub rates: Vec<FilterRate>,
}

impl FilterOutcome {
    pub fn is_kept(&self, llm_id: &str, variant_id: &str) -> bool {
        self.kept.contains(&(llm_id.to_string(), variant_id.to_string()))
    }
}

/// Drops, per model, every variant whose instance that model answers
/// correctly from the question alone. Rates are over the instances that
/// have with-context records.
pub fn parametric_filter(records: &[PredictionRecord]) -> Result<FilterOutcome> {
    let mut probes: BTreeMap<(&str, &str), bool> = BTreeMap::new();
    for r in records.iter().filter(|r| r.mode == PromptMode::QuestionOnly) {
        let e = probes.entry((&r.llm_id, &r.instance_id)).or_insert(false);
        *e |= r.correct == 1;
    }

    let mut outcome = FilterOutcome::default();
    let mut instances: BTreeMap<(DatasetId, &str), BTreeSet<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.mode != PromptMode::QuestionOnly) {
        let known = probes.get(&(r.llm_id.as_str(), r.instance_id.as_str())).ok_or_else(|| {
            Error::MissingProbe {
                llm_id: r.llm_id.clone(),
                instance_id: r.instance_id.clone(),
            }
        })?;
        instances
            .entry((r.dataset_id, &r.llm_id))
            .or_default()
            .insert(&r.instance_id);
        if *known {
            outcome
                .excluded_instances
                .insert((r.llm_id.clone(), r.instance_id.clone()));
        } else if let Some(v) = &r.variant_id {
            outcome.kept.insert((r.llm_id.clone(), v.clone()));
        }
    }
    for ((dataset_id, llm_id), ids) in instances {
        let excluded = ids
            .iter()
            .filter(|id| probes[&(llm_id, **id)])
            .count();
        outcome.rates.push(FilterRate {
            dataset_id,
            llm_id: llm_id.to_string(),
            instances: ids.len(),
            excluded,
            filtered_percent: 100.0 * excluded as f64 / ids.len() as f64,
        });
    }
    Ok(outcome)
}
