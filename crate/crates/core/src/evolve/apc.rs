//! Answer-preservation checking for edited passages.

use crate::ingest::QaInstance;
use crate::text::char_len;
use crate::types::{ApcMode, ApcStatus, TaskKind};

/// Yes/no passages shorter than this many characters are dropped.
pub const MIN_YESNO_CHARS: usize = 56;

/// Checks whether `edited` (replacing `original` under `title`) still
/// supports answering `instance`.
pub fn apc_check(
    instance: &QaInstance,
    title: &str,
    original: &str,
    edited: &str,
    mode: ApcMode,
) -> ApcStatus {
    match instance.task_kind() {
        TaskKind::YesNo => {
            if char_len(edited) >= MIN_YESNO_CHARS {
                ApcStatus::Kept
            } else {
                ApcStatus::DroppedTooShort
            }
        }
        TaskKind::FreeForm => ApcStatus::Kept,
        TaskKind::Extractive => {
            if instance.is_unanswerable() {
                return ApcStatus::Kept;
            }
            verdict(answers_found(&instance.gold_answers, edited, mode))
        }
        TaskKind::MultiHop => multihop_check(instance, title, original, edited, mode),
    }
}

fn verdict(preserved: bool) -> ApcStatus {
    if preserved {
        ApcStatus::Kept
    } else {
        ApcStatus::DroppedAnswerLost
    }
}

fn answers_found(golds: &[String], passage: &str, mode: ApcMode) -> bool {
    let mut hits = golds.iter().map(|g| passage.contains(g.as_str()));
    match mode {
        ApcMode::Any => hits.any(|h| h),
        ApcMode::All => hits.all(|h| h),
    }
}

/// Multi-hop answers may live in any gold paragraph, so only the answers
/// that occurred in the original context are required to survive in the
/// context with the edit applied. Comparison questions answered yes/no have
/// no span to preserve.
fn multihop_check(
    instance: &QaInstance,
    title: &str,
    original: &str,
    edited: &str,
    mode: ApcMode,
) -> ApcStatus {
    let is_yes_no = instance
        .gold_answers
        .iter()
        .all(|g| g.eq_ignore_ascii_case("yes") || g.eq_ignore_ascii_case("no"));
    if is_yes_no {
        return ApcStatus::Kept;
    }
    let context_before = full_context(instance, None);
    let spans: Vec<String> = instance
        .gold_answers
        .iter()
        .filter(|g| context_before.contains(g.as_str()))
        .cloned()
        .collect();
    if spans.is_empty() {
        return ApcStatus::Kept;
    }
    let context_after = full_context(instance, Some((title, original, edited)));
    verdict(answers_found(&spans, &context_after, mode))
}

fn full_context(instance: &QaInstance, edit: Option<(&str, &str, &str)>) -> String {
    let mut parts = Vec::new();
    for t in &instance.titles {
        for p in instance.paragraphs.get(t).into_iter().flatten() {
            match edit {
                Some((title, original, edited)) if title == t && p == original => {
                    parts.push(edited)
                }
                _ => parts.push(p.as_str()),
            }
        }
    }
    parts.join("\n\n")
}
