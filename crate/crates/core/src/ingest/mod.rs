//! Parsing of benchmark files, revision histories and corpus snapshots into
//! canonical records.

mod benchmark;
mod corpus;
mod revisions;
pub mod wikitext;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use benchmark::{load_benchmark, load_canonical_instances};
pub use corpus::{load_corpus_snapshot, resolve_title, CorpusReader};
pub use revisions::{
    load_revision_histories, load_revision_history, HistoryLoad, MalformedRecord, PageHistory, RevisionStream,
};

use crate::error::{Error, Result};
use crate::types::{DatasetId, TaskKind};

/// One benchmark question with its original passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub instance_id: String,
    pub dataset_id: DatasetId,
    pub question: String,
    pub titles: Vec<String>,
    /// Title to its paragraphs, in reading order.
    pub paragraphs: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub gold_titles: Vec<String>,
    pub gold_answers: Vec<String>,
}

impl QaInstance {
    pub fn task_kind(&self) -> TaskKind {
        self.dataset_id.task_kind()
    }

    /// SQuAD 2.0 items without an answer span.
    pub fn is_unanswerable(&self) -> bool {
        self.gold_answers.len() == 1 && self.gold_answers[0].eq_ignore_ascii_case("unanswerable")
    }

    /// Titles whose paragraphs are eligible for edit mining: the gold titles
    /// for multi-hop items, the single title otherwise.
    pub fn editable_titles(&self) -> &[String] {
        match self.task_kind() {
            TaskKind::MultiHop => &self.gold_titles,
            _ => &self.titles,
        }
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let schema = |field: &str| Error::Schema {
            index,
            field: field.to_string(),
        };
        if self.instance_id.is_empty() {
            return Err(schema("instance_id"));
        }
        if self.titles.is_empty() {
            return Err(schema("titles"));
        }
        if self.gold_answers.is_empty() {
            return Err(schema("gold_answers"));
        }
        if self.gold_titles.iter().any(|g| !self.titles.contains(g)) {
            return Err(schema("gold_titles"));
        }
        if self.task_kind() == TaskKind::MultiHop && self.gold_titles.is_empty() {
            return Err(schema("gold_titles"));
        }
        if self.titles.iter().any(|t| !self.paragraphs.contains_key(t)) {
            return Err(schema("paragraphs"));
        }
        if self.task_kind() == TaskKind::YesNo
            && self.gold_answers != ["TRUE"]
            && self.gold_answers != ["FALSE"]
        {
            return Err(schema("gold_answers"));
        }
        Ok(())
    }
}

/// One stored version of an article, markup already stripped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub title: String,
    pub rev_id: u64,
    pub timestamp: String,
    pub text: String,
}

/// A document from a training-corpus snapshot. `title` is `None` when it
/// could not be determined; such documents are skipped by title matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub title: Option<String>,
    pub text: String,
    pub source_tag: String,
}

/// Opens a file, transparently decompressing gzip or bzip2 by magic bytes.
pub(crate) fn open_maybe_compressed(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 3];
    let mut got = 0;
    while got < magic.len() {
        match file.read(&mut magic[got..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            n => got += n,
        }
    }
    let head = std::io::Cursor::new(magic[..got].to_vec());
    let chained = head.chain(file);
    let reader: Box<dyn BufRead + Send> = if got >= 2 && magic[..2] == [0x1f, 0x8b] {
        Box::new(BufReader::new(flate2::read::MultiGzDecoder::new(chained)))
    } else if got == 3 && &magic == b"BZh" {
        Box::new(BufReader::new(bzip2::read::MultiBzDecoder::new(chained)))
    } else {
        Box::new(BufReader::with_capacity(1 << 16, chained))
    };
    Ok(reader)
}
