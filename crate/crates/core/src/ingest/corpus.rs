//! Training-corpus snapshot reader (one JSON document per line).

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde_json::Value;

use super::{open_maybe_compressed, CorpusDoc};
use crate::error::{Error, Result};
use crate::text::{canonical_title, normalize_text};

const MAX_TITLE_CHARS: usize = 120;

pub fn load_corpus_snapshot(path: &Path, source_tag: &str) -> Result<CorpusReader> {
    Ok(CorpusReader::new(open_maybe_compressed(path)?, source_tag))
}

/// Title for a document that did not declare one: its first line, when that
/// line is short and does not read like running prose.
pub fn resolve_title(text: &str) -> Option<String> {
    let first = text.lines().next()?.trim();
    if first.is_empty() || first.chars().count() >= MAX_TITLE_CHARS {
        return None;
    }
    let bytes = first.as_bytes();
    let continues_after_period = bytes.iter().enumerate().any(|(i, &b)| {
        b == b'.' && bytes.get(i + 1) == Some(&b' ') && bytes[i + 1..].iter().any(|c| !c.is_ascii_whitespace())
    });
    if continues_after_period {
        return None;
    }
    Some(canonical_title(first))
}

/// Streaming iterator of [`CorpusDoc`]s.
pub struct CorpusReader {
    reader: Box<dyn BufRead + Send>,
    source_tag: String,
    line_no: usize,
    seen_ids: HashSet<String>,
    line: String,
}

impl CorpusReader {
    pub fn new(reader: impl BufRead + Send + 'static, source_tag: &str) -> Self {
        Self {
            reader: Box::new(reader),
            source_tag: source_tag.to_string(),
            line_no: 0,
            seen_ids: HashSet::new(),
            line: String::new(),
        }
    }

    fn parse_line(&mut self) -> Result<Option<CorpusDoc>> {
        let line_no = self.line_no;
        let err = |message: String| Error::ParseLine {
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(&self.line).map_err(|e| err(e.to_string()))?;
        let doc_id = match value.get("doc_id").or_else(|| value.get("id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(err("missing field `doc_id`".into())),
        };
        let text = value
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing field `text`".into()))?;
        let text = normalize_text(text);
        if text.is_empty() {
            log::warn!("corpus line {line_no}: document `{doc_id}` has empty text, skipped");
            return Ok(None);
        }
        if !self.seen_ids.insert(doc_id.clone()) {
            return Err(err(format!("duplicate doc_id `{doc_id}`")));
        }
        let title = match value.get("title").and_then(Value::as_str).map(canonical_title) {
            Some(t) if !t.is_empty() => Some(t),
            _ => resolve_title(&text),
        };
        Ok(Some(CorpusDoc {
            doc_id,
            title,
            text,
            source_tag: self.source_tag.clone(),
        }))
    }
}

impl Iterator for CorpusReader {
    type Item = Result<CorpusDoc>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    return Some(Err(Error::ParseLine {
                        line: self.line_no + 1,
                        message: e.to_string(),
                    }))
                }
            }
            self.line_no += 1;
            if self.line.trim().is_empty() {
                continue;
            }
            match self.parse_line() {
                Ok(Some(doc)) => return Some(Ok(doc)),
                Ok(None) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}
