//! Locating an original paragraph inside a revision chain and pairing it
//! with its edited successor.

use similar::{capture_diff_slices, Algorithm};

use crate::ingest::RevisionRecord;
use crate::text::segment_paragraphs;

/// A revision chain with each revision already split into paragraphs.
#[derive(Debug, Clone)]
pub struct SegmentedChain {
    pub revisions: Vec<SegmentedRevision>,
}

#[derive(Debug, Clone)]
pub struct SegmentedRevision {
    pub rev_id: u64,
    pub timestamp: String,
    pub paragraphs: Vec<String>,
}

impl SegmentedChain {
    pub fn new(chain: &[RevisionRecord]) -> Self {
        Self {
            revisions: chain
                .iter()
                .map(|r| SegmentedRevision {
                    rev_id: r.rev_id,
                    timestamp: r.timestamp.clone(),
                    paragraphs: segment_paragraphs(&r.text),
                })
                .collect(),
        }
    }
}

/// A maximal run of consecutive revisions (chain positions `start..=end`)
/// that contain the original paragraph verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccurrenceSpan {
    pub occurrence_index: usize,
    pub start: usize,
    pub end: usize,
    pub first_rev: u64,
    pub last_rev: u64,
}

/// Edited descendant of an original paragraph.
#[derive(Debug, Clone, PartialEq)]
pub struct Successor {
    pub paragraph: String,
    pub rev_id: u64,
    pub timestamp: String,
    pub similarity: f64,
}

pub fn match_occurrences(original: &str, chain: &SegmentedChain) -> Vec<OccurrenceSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    let present: Vec<bool> = chain
        .revisions
        .iter()
        .map(|r| r.paragraphs.iter().any(|p| p == original))
        .collect();
    for (i, &here) in present.iter().chain(std::iter::once(&false)).enumerate() {
        match (open, here) {
            (None, true) => open = Some(i),
            (Some(start), false) => {
                let end = i - 1;
                spans.push(OccurrenceSpan {
                    occurrence_index: spans.len(),
                    start,
                    end,
                    first_rev: chain.revisions[start].rev_id,
                    last_rev: chain.revisions[end].rev_id,
                });
                open = None;
            }
            _ => {}
        }
    }
    spans
}

/// Picks, in the revision right after `span`, the paragraph most similar to
/// the original by character diff ratio. Returns `None` when the span runs
/// to the end of the chain or no paragraph reaches `descend_floor`.
pub fn extract_successor(
    span: &OccurrenceSpan,
    chain: &SegmentedChain,
    original: &str,
    descend_floor: f64,
) -> Option<Successor> {
    let next = chain.revisions.get(span.end + 1)?;
    let original_chars: Vec<char> = original.chars().collect();
    let original_counts = char_counts(&original_chars);

    let mut best: Option<(f64, &String)> = None;
    for candidate in &next.paragraphs {
        if candidate == original {
            continue;
        }
        let candidate_chars: Vec<char> = candidate.chars().collect();
        let total = (original_chars.len() + candidate_chars.len()) as f64;
        let bar = best.map_or(descend_floor, |(s, _)| s.max(descend_floor));
        let length_bound = 2.0 * original_chars.len().min(candidate_chars.len()) as f64 / total;
        if length_bound < bar {
            continue;
        }
        if multiset_bound(&original_counts, &candidate_chars) / total < bar {
            continue;
        }
        let ratio = diff_ratio_chars(&original_chars, &candidate_chars);
        let improves = match best {
            Some((s, _)) => ratio > s,
            None => ratio >= descend_floor,
        };
        if improves {
            best = Some((ratio, candidate));
        }
    }
    best.map(|(similarity, paragraph)| Successor {
        paragraph: paragraph.clone(),
        rev_id: next.rev_id,
        timestamp: next.timestamp.clone(),
        similarity,
    })
}

/// `2 * matched / (len_a + len_b)` over a character-level diff; 1.0 for two
/// empty strings.
pub fn diff_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    diff_ratio_chars(&a, &b)
}

fn diff_ratio_chars(a: &[char], b: &[char]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let matched: usize = capture_diff_slices(Algorithm::Myers, a, b)
        .iter()
        .map(|op| match op {
            similar::DiffOp::Equal { len, .. } => *len,
            _ => 0,
        })
        .sum();
    2.0 * matched as f64 / (a.len() + b.len()) as f64
}

fn char_counts(chars: &[char]) -> std::collections::HashMap<char, usize> {
    let mut counts = std::collections::HashMap::new();
    for &c in chars {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}

/// Upper bound on `2 * matched`: shared characters counted as a multiset.
fn multiset_bound(original: &std::collections::HashMap<char, usize>, candidate: &[char]) -> f64 {
    let mut remaining = original.clone();
    let mut shared = 0usize;
    for c in candidate {
        if let Some(n) = remaining.get_mut(c) {
            if *n > 0 {
                *n -= 1;
                shared += 1;
            }
        }
    }
    2.0 * shared as f64
}
