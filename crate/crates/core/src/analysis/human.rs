//! Equal-per-bin sampling for human annotation and adjudicated results.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simdrift::NUM_BINS;

pub const ADJUDICATOR: &str = "adjudicator";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StratifiedSample {
    /// `(bin_index, variant_id)`, ordered by bin then id.
    pub items: Vec<(usize, String)>,
    /// Bins that had fewer than `per_bin` items and contributed all of them.
    pub short_bins: Vec<usize>,
}

/// Up to `per_bin` distinct items per bin, chosen reproducibly from `seed`.
pub fn stratified_sample(records: &[(usize, String)], per_bin: usize, seed: u64) -> StratifiedSample {
    let mut by_bin: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for (bin, id) in records {
        by_bin.entry(*bin).or_default().insert(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = StratifiedSample::default();
    for (bin, ids) in by_bin {
        let mut ids: Vec<&str> = ids.into_iter().collect();
        if ids.len() < per_bin {
            sample.short_bins.push(bin);
        }
        ids.shuffle(&mut rng);
        ids.truncate(per_bin);
        ids.sort_unstable();
        sample.items.extend(ids.into_iter().map(|id| (bin, id.to_string())));
    }
    sample
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBinResult {
    pub bin_index: usize,
    pub n_annotated: usize,
    pub k_correct: usize,
    pub accuracy_percent: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    variant_id: String,
    bin_index: usize,
    annotator_id: String,
    label: String,
}

#[derive(Default)]
struct Item {
    bin: usize,
    labels: Vec<bool>,
    adjudication: Option<bool>,
}

/// Reads `variant_id,bin_index,annotator_id,label` rows. An item's verdict
/// is the label its two annotators agree on, otherwise the adjudicator's.
pub fn human_bin_accuracy(path: &Path) -> Result<Vec<HumanBinResult>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut items: BTreeMap<String, Item> = BTreeMap::new();
    for (i, row) in reader.deserialize::<AnnotationRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let label = match row.label.trim().to_ascii_lowercase().as_str() {
            "correct" => true,
            "incorrect" => false,
            other => {
                return Err(Error::ParseLine {
                    line,
                    message: format!("label must be correct or incorrect, got `{other}`"),
                })
            }
        };
        if row.bin_index >= NUM_BINS {
            return Err(Error::ParseLine {
                line,
                message: format!("bin_index {} out of range", row.bin_index),
            });
        }
        let item = items.entry(row.variant_id.clone()).or_insert_with(|| Item {
            bin: row.bin_index,
            ..Item::default()
        });
        if item.bin != row.bin_index {
            return Err(Error::ParseLine {
                line,
                message: format!("conflicting bin_index for `{}`", row.variant_id),
            });
        }
        if row.annotator_id == ADJUDICATOR {
            item.adjudication = Some(label);
        } else {
            item.labels.push(label);
        }
    }

    let mut counts = [(0usize, 0usize); NUM_BINS];
    for (id, item) in &items {
        let verdict = match item.labels.as_slice() {
            [a, b] if a == b => *a,
            [_, _] => item.adjudication.ok_or_else(|| Error::MissingAdjudication(id.clone()))?,
            labels => {
                return Err(Error::Domain(format!(
                    "item `{id}` has {} annotator labels, expected 2",
                    labels.len()
                )))
            }
        };
        counts[item.bin].0 += 1;
        counts[item.bin].1 += usize::from(verdict);
    }
    Ok(counts
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| *n > 0)
        .map(|(bin_index, &(n, k))| HumanBinResult {
            bin_index,
            n_annotated: n,
            k_correct: k,
            accuracy_percent: Some(100.0 * k as f64 / n as f64),
        })
        .collect())
}
