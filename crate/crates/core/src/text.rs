//! Text canonicalization shared by every stage that compares strings.

use unicode_normalization::UnicodeNormalization;

/// Canonical form used for all matching: NFC, LF line endings, runs of
/// spaces/tabs collapsed, each line trimmed, and no leading or trailing
/// blank lines. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let unified = composed.replace("\r\n", "\n").replace('\r', "\n");

    let mut out = String::with_capacity(unified.len());
    for (i, line) in unified.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        push_collapsed(&mut out, line.trim());
    }
    out.trim_matches('\n').to_string()
}

fn push_collapsed(out: &mut String, line: &str) {
    let mut in_run = false;
    for c in line.chars() {
        if c == ' ' || c == '\t' {
            if !in_run {
                out.push(' ');
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
}

/// Splits normalized text into paragraphs at blank lines. Never yields an
/// empty paragraph.
pub fn segment_paragraphs(article_text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in article_text.split('\n') {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n"));
    }
    paragraphs
}

/// Inverse of [`segment_paragraphs`] up to normalization.
pub fn join_paragraphs<S: AsRef<str>>(paragraphs: &[S]) -> String {
    paragraphs
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Length in Unicode scalar values.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Normalized and lowercased, for case-insensitive containment tests.
pub fn fold(text: &str) -> String {
    normalize_text(text).to_lowercase()
}

/// Canonical article title: underscores read as spaces, whitespace
/// collapsed, first letter upper-cased (MediaWiki treats it as such).
pub fn canonical_title(title: &str) -> String {
    let spaced: String = title.nfc().map(|c| if c == '_' { ' ' } else { c }).collect();
    let collapsed = spaced.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Splits into lowercase alphanumeric words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}
