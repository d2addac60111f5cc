//! Correctness labels for model outputs.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::simdrift::EmbeddingService;
use crate::text::{fold, words};
use crate::types::TaskKind;

pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.6;
pub const ANSWER_MARKER: &str = "Answer:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scorer {
    InclusionMatch,
    SemanticThreshold,
}

impl Scorer {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::FreeForm => Scorer::SemanticThreshold,
            _ => Scorer::InclusionMatch,
        }
    }
}

/// Text after the last `Answer:` marker, or the whole output without one.
pub fn final_answer(raw_output: &str) -> &str {
    match raw_output.rfind(ANSWER_MARKER) {
        Some(i) => raw_output[i + ANSWER_MARKER.len()..].trim(),
        None => raw_output,
    }
}

/// Inclusion Match: 1 when the folded output contains any folded gold
/// answer. Yes/no items also need the opposite label to be absent as a word.
pub fn score_inclusion_match(raw_output: &str, gold_answers: &[String], task: TaskKind) -> u8 {
    if task == TaskKind::YesNo {
        return score_yes_no(raw_output, gold_answers);
    }
    let output = fold(raw_output);
    let hit = gold_answers
        .iter()
        .map(|g| fold(g))
        .any(|g| !g.is_empty() && output.contains(&g));
    u8::from(hit)
}

fn score_yes_no(raw_output: &str, gold_answers: &[String]) -> u8 {
    let tokens: Vec<String> = words(raw_output).collect();
    let has = |label: &str| tokens.iter().any(|t| t == label);
    let hit = gold_answers.iter().any(|gold| {
        let gold = fold(gold);
        let opposite = match gold.as_str() {
            "true" => "false",
            "false" => "true",
            _ => return !gold.is_empty() && fold(raw_output).contains(&gold),
        };
        has(&gold) && !has(opposite)
    });
    u8::from(hit)
}

/// 1 when the output's cosine similarity to some gold answer is strictly
/// above `threshold`. Returns the label and the best similarity.
pub fn score_semantic(
    raw_output: &str,
    gold_answers: &[String],
    service: &EmbeddingService,
    threshold: f64,
) -> Result<(u8, f64)> {
    let golds: Vec<&String> = gold_answers.iter().filter(|g| !g.trim().is_empty()).collect();
    if golds.is_empty() || raw_output.trim().is_empty() {
        return Ok((0, 0.0));
    }
    let mut texts = vec![raw_output.to_string()];
    texts.extend(golds.into_iter().cloned());
    let vectors = service.embed(&texts)?;
    let best = vectors[1..]
        .iter()
        .map(|g| vectors[0].cosine(g))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((u8::from(best > threshold), best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdrift::{BatchOptions, Embedder};
    use std::sync::Arc;

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn inclusion_match_basics() {
        let g = golds(&["Paris"]);
        assert_eq!(score_inclusion_match("Paris is the capital", &g, TaskKind::Extractive), 1);
        assert_eq!(score_inclusion_match("Paris", &g, TaskKind::Extractive), 1);
        assert_eq!(score_inclusion_match("  PARIS\n", &g, TaskKind::MultiHop), 1);
        assert_eq!(score_inclusion_match("Lyon", &g, TaskKind::Extractive), 0);
        assert_eq!(score_inclusion_match("anything", &golds(&[""]), TaskKind::Extractive), 0);
        assert_eq!(
            score_inclusion_match("Unanswerable.", &golds(&["unanswerable"]), TaskKind::Extractive),
            1
        );
    }

    #[test]
    fn yes_no_contradiction_rule() {
        let t = golds(&["TRUE"]);
        assert_eq!(score_inclusion_match("TRUE", &t, TaskKind::YesNo), 1);
        assert_eq!(score_inclusion_match("true, though some say false", &t, TaskKind::YesNo), 0);
        assert_eq!(score_inclusion_match("FALSE", &t, TaskKind::YesNo), 0);
        assert_eq!(score_inclusion_match("untrue", &t, TaskKind::YesNo), 0);
        assert_eq!(score_inclusion_match("False.", &golds(&["FALSE"]), TaskKind::YesNo), 1);
    }

    #[test]
    fn final_answer_takes_last_marker() {
        assert_eq!(final_answer("reasoning\nAnswer: x\nAnswer: Paris"), "Paris");
        assert_eq!(final_answer("no marker"), "no marker");
    }

    struct Axis;

    impl Embedder for Axis {
        fn model_id(&self) -> &str {
            "axis"
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
            Ok(texts
                .iter()
                .map(|t| match t.as_str() {
                    "a" => vec![1.0, 0.0],
                    "b" => vec![0.6, 0.8],
                    _ => vec![0.0, 1.0],
                })
                .collect())
        }
    }

    #[test]
    fn semantic_threshold_is_strict() {
        let service = EmbeddingService::new(Arc::new(Axis), None, BatchOptions::default());
        let (label, sim) = score_semantic("a", &golds(&["a"]), &service, 0.6).unwrap();
        assert_eq!(label, 1);
        assert!((sim - 1.0).abs() < 1e-6);
        // 0.6 in f32 components is not exactly 0.6 in f64; compare against
        // the similarity the service actually reports.
        let (_, boundary) = score_semantic("a", &golds(&["b"]), &service, 0.6).unwrap();
        let (label, _) = score_semantic("a", &golds(&["b"]), &service, boundary).unwrap();
        assert_eq!(label, 0);
        let (label, _) = score_semantic("a", &golds(&["c", "a"]), &service, 0.6).unwrap();
        assert_eq!(label, 1);
    }
}
