//! Mining naturally evolved, human-edited versions of benchmark paragraphs
//! from article revision chains.
//!
//! Every maximal run of revisions that contains an original paragraph
//! verbatim is an occurrence; the paragraph that replaces it in the next
//! revision is its edited successor. All successors are kept, one per
//! occurrence, and then screened by answer-preservation checking.

mod apc;
mod matching;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use apc::{apc_check, MIN_YESNO_CHARS};
pub use matching::{
    diff_ratio, extract_successor, match_occurrences, OccurrenceSpan, SegmentedChain,
    SegmentedRevision, Successor,
};

use crate::ingest::{QaInstance, RevisionRecord};
use crate::store::digest_fields;
use crate::types::{ApcMode, ApcStatus, DatasetId};

/// Default character-diff ratio a paragraph needs to count as the edited
/// descendant of the original.
pub const DEFAULT_DESCEND_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditedVariant {
    pub variant_id: String,
    pub instance_id: String,
    pub dataset_id: DatasetId,
    pub title: String,
    pub original_paragraph: String,
    pub edited_paragraph: String,
    /// Last revision in which the original appeared.
    pub first_seen_rev: u64,
    pub edited_rev: u64,
    pub timestamp: String,
    pub apc_status: ApcStatus,
    pub occurrence_index: usize,
}

impl EditedVariant {
    pub fn is_kept(&self) -> bool {
        self.apc_status == ApcStatus::Kept
    }
}

/// Why an instance (or one of its titles) produced no variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub instance_id: String,
    pub title: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub apc_mode: ApcMode,
    pub descend_floor: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            apc_mode: ApcMode::Any,
            descend_floor: DEFAULT_DESCEND_FLOOR,
        }
    }
}

#[derive(Debug, Default)]
pub struct EvolveOutput {
    pub variants: Vec<EditedVariant>,
    pub skips: Vec<SkipRecord>,
}

pub fn variant_id(instance_id: &str, title: &str, original: &str, edited: &str) -> String {
    let digest = digest_fields(&[instance_id, title, original, edited]);
    format!("v{}", &digest[..16])
}

/// Extracts every edited successor of every editable paragraph, collapses
/// identical edits, and applies answer-preservation checking. For multi-hop
/// items only gold titles are mined. Output order is canonical regardless of
/// parallelism.
pub fn build_variants(
    instances: &[QaInstance],
    histories: &BTreeMap<String, Vec<RevisionRecord>>,
    options: EvolveOptions,
) -> EvolveOutput {
    let needed: HashSet<&str> = instances
        .iter()
        .flat_map(|i| i.editable_titles().iter().map(String::as_str))
        .collect();
    let segmented: BTreeMap<&str, SegmentedChain> = histories
        .par_iter()
        .filter(|(title, _)| needed.contains(title.as_str()))
        .map(|(title, chain)| (title.as_str(), SegmentedChain::new(chain)))
        .collect();

    let per_instance: Vec<EvolveOutput> = instances
        .par_iter()
        .map(|instance| variants_for_instance(instance, &segmented, options))
        .collect();

    let mut out = EvolveOutput::default();
    for part in per_instance {
        out.variants.extend(part.variants);
        out.skips.extend(part.skips);
    }
    out.variants.sort_by(|a, b| {
        (&a.instance_id, a.occurrence_index, a.edited_rev, &a.variant_id).cmp(&(
            &b.instance_id,
            b.occurrence_index,
            b.edited_rev,
            &b.variant_id,
        ))
    });
    out.skips
        .sort_by(|a, b| (&a.instance_id, &a.title).cmp(&(&b.instance_id, &b.title)));
    out
}

fn variants_for_instance(
    instance: &QaInstance,
    chains: &BTreeMap<&str, SegmentedChain>,
    options: EvolveOptions,
) -> EvolveOutput {
    let mut out = EvolveOutput::default();
    let mut seen = HashSet::new();
    for title in instance.editable_titles() {
        let Some(chain) = chains.get(title.as_str()) else {
            log::info!("instance {}: no revision history for `{title}`", instance.instance_id);
            out.skips.push(SkipRecord {
                instance_id: instance.instance_id.clone(),
                title: title.clone(),
                reason: "missing history".into(),
            });
            continue;
        };
        for original in instance.paragraphs.get(title).into_iter().flatten() {
            for span in match_occurrences(original, chain) {
                let Some(successor) =
                    extract_successor(&span, chain, original, options.descend_floor)
                else {
                    continue;
                };
                let key = (original.clone(), successor.paragraph.clone());
                if !seen.insert(key) {
                    continue;
                }
                let apc_status =
                    apc_check(instance, title, original, &successor.paragraph, options.apc_mode);
                out.variants.push(EditedVariant {
                    variant_id: variant_id(
                        &instance.instance_id,
                        title,
                        original,
                        &successor.paragraph,
                    ),
                    instance_id: instance.instance_id.clone(),
                    dataset_id: instance.dataset_id,
                    title: title.clone(),
                    original_paragraph: original.clone(),
                    edited_paragraph: successor.paragraph,
                    first_seen_rev: span.last_rev,
                    edited_rev: successor.rev_id,
                    timestamp: successor.timestamp,
                    apc_status,
                    occurrence_index: span.occurrence_index,
                });
            }
        }
    }
    out
}
