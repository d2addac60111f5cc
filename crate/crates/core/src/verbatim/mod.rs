//! Verbatim containment of edited passages in a corpus snapshot.
//!
//! Documents are concatenated into one byte blob separated by `0xFF`, a byte
//! that never occurs in UTF-8, and indexed with a suffix array. A needle is
//! valid UTF-8, so no match can straddle two documents.

mod sais;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use sais::suffix_array;

use crate::error::{Error, Result};
use crate::evolve::EditedVariant;
use crate::ingest::CorpusDoc;
use crate::text::normalize_text;

pub const SENTINEL: u8 = 0xFF;
const MAGIC: &[u8; 4] = b"DEVI";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    blob: Vec<u8>,
    suffixes: Vec<u32>,
    /// `(start offset, doc_id)` sorted by offset.
    doc_offsets: Vec<(u64, String)>,
}

#[derive(Debug, Clone, Copy)]
pub struct IndexOptions {
    pub max_blob_bytes: u64,
    /// Normalize document text before indexing (the default); `false`
    /// indexes raw text byte-for-byte.
    pub normalize: bool,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            max_blob_bytes: u64::from(u32::MAX - 1),
            normalize: true,
        }
    }
}

impl CorpusIndex {
    pub fn build(docs: impl IntoIterator<Item = Result<CorpusDoc>>, options: IndexOptions) -> Result<Self> {
        let max = options.max_blob_bytes.min(u64::from(u32::MAX - 1));
        let mut blob = Vec::new();
        let mut doc_offsets = Vec::new();
        for doc in docs {
            let doc = doc?;
            let text = if options.normalize {
                normalize_text(&doc.text)
            } else {
                doc.text
            };
            let len = (blob.len() + text.len() + 1) as u64;
            if len > max {
                return Err(Error::Capacity { len, max });
            }
            doc_offsets.push((blob.len() as u64, doc.doc_id));
            blob.extend_from_slice(text.as_bytes());
            blob.push(SENTINEL);
        }
        let suffixes = suffix_array(&blob);
        Ok(Self {
            blob,
            suffixes,
            doc_offsets,
        })
    }

    pub fn blob_len(&self) -> usize {
        self.blob.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_offsets.len()
    }

    pub fn suffixes(&self) -> &[u32] {
        &self.suffixes
    }

    pub fn blob(&self) -> &[u8] {
        &self.blob
    }

    fn suffix(&self, rank: usize) -> &[u8] {
        &self.blob[self.suffixes[rank] as usize..]
    }

    /// Range of suffix-array ranks whose suffixes start with `needle`.
    fn match_range(&self, needle: &[u8]) -> std::ops::Range<usize> {
        let prefix = |rank: usize| {
            let s = self.suffix(rank);
            &s[..s.len().min(needle.len())]
        };
        let lo = partition_point(self.suffixes.len(), |r| prefix(r) < needle);
        let hi = lo + partition_point(self.suffixes.len() - lo, |r| prefix(lo + r) <= needle);
        lo..hi
    }

    pub fn count(&self, needle: &str) -> Result<usize> {
        if needle.is_empty() {
            return Err(Error::EmptyNeedle);
        }
        Ok(self.match_range(needle.as_bytes()).len())
    }

    /// A document containing `needle`, if any. Among several, the one whose
    /// match sorts first is returned.
    pub fn contains(&self, needle: &str) -> Result<Option<&str>> {
        if needle.is_empty() {
            return Err(Error::EmptyNeedle);
        }
        let range = self.match_range(needle.as_bytes());
        if range.is_empty() {
            return Ok(None);
        }
        let position = u64::from(self.suffixes[range.start]);
        Ok(Some(self.doc_at(position)))
    }

    fn doc_at(&self, position: u64) -> &str {
        let i = self.doc_offsets.partition_point(|(start, _)| *start <= position) - 1;
        &self.doc_offsets[i].1
    }

    /// Writes the index: magic `DEVI`, a version byte, then little-endian
    /// u64 lengths followed by the blob, the suffix array (u64 entries) and
    /// the doc table (offset, id length, id bytes).
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&[FORMAT_VERSION])?;
        write(&(self.blob.len() as u64).to_le_bytes())?;
        write(&self.blob)?;
        write(&(self.suffixes.len() as u64).to_le_bytes())?;
        for &s in &self.suffixes {
            write(&u64::from(s).to_le_bytes())?;
        }
        write(&(self.doc_offsets.len() as u64).to_le_bytes())?;
        for (offset, id) in &self.doc_offsets {
            write(&offset.to_le_bytes())?;
            write(&(id.len() as u64).to_le_bytes())?;
            write(id.as_bytes())?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut r = BufReader::new(file);
        let mut read_exact = |buf: &mut [u8]| {
            r.read_exact(buf)
                .map_err(|_| Error::IndexFormat("truncated index file".into()))
        };
        let mut magic = [0u8; 5];
        read_exact(&mut magic)?;
        if &magic[..4] != MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        if magic[4] != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {}", magic[4])));
        }
        let read_u64 = |read_exact: &mut dyn FnMut(&mut [u8]) -> Result<()>| -> Result<u64> {
            let mut b = [0u8; 8];
            read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let checked_len = |n: u64| -> Result<usize> {
            if n > file_len {
                return Err(Error::IndexFormat(format!("length {n} exceeds file size")));
            }
            Ok(n as usize)
        };

        let blob_len = checked_len(read_u64(&mut read_exact)?)?;
        let mut blob = vec![0u8; blob_len];
        read_exact(&mut blob)?;
        let sa_len = checked_len(read_u64(&mut read_exact)?)?;
        if sa_len != blob_len {
            return Err(Error::IndexFormat("suffix array length differs from blob".into()));
        }
        let mut suffixes = Vec::with_capacity(sa_len);
        for _ in 0..sa_len {
            let s = read_u64(&mut read_exact)?;
            if s >= blob_len as u64 {
                return Err(Error::IndexFormat("suffix offset out of range".into()));
            }
            suffixes.push(s as u32);
        }
        let docs = checked_len(read_u64(&mut read_exact)?)?;
        let mut doc_offsets = Vec::with_capacity(docs);
        for _ in 0..docs {
            let offset = read_u64(&mut read_exact)?;
            let id_len = checked_len(read_u64(&mut read_exact)?)?;
            let mut id = vec![0u8; id_len];
            read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| Error::IndexFormat("doc id is not UTF-8".into()))?;
            doc_offsets.push((offset, id));
        }
        if doc_offsets.windows(2).any(|w| w[0].0 >= w[1].0)
            || doc_offsets.first().is_some_and(|(o, _)| *o != 0)
        {
            return Err(Error::IndexFormat("doc offsets not increasing from 0".into()));
        }
        Ok(Self {
            blob,
            suffixes,
            doc_offsets,
        })
    }
}

fn partition_point(len: usize, mut pred: impl FnMut(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Leakage of one dataset's edited passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageSummary {
    /// `None` when no passages were queried.
    pub rate_percent: Option<f64>,
    pub n: usize,
    pub hits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageVerdict {
    pub variant_id: String,
    pub dataset_id: String,
    pub matched_doc_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeakageReport {
    pub by_dataset: BTreeMap<String, LeakageSummary>,
    pub verdicts: Vec<LeakageVerdict>,
}

/// Percentage of kept edited passages found verbatim in the index, per
/// dataset. Independent of input order.
pub fn leakage_rate(variants: &[EditedVariant], index: &CorpusIndex) -> Result<LeakageReport> {
    let mut kept: Vec<&EditedVariant> = variants.iter().filter(|v| v.is_kept()).collect();
    kept.sort_by(|a, b| a.variant_id.cmp(&b.variant_id));
    kept.dedup_by(|a, b| a.variant_id == b.variant_id);

    let mut report = LeakageReport::default();
    let mut hits: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for variant in kept {
        let dataset = variant.dataset_id.as_str().to_string();
        let needle = normalize_text(&variant.edited_paragraph);
        let matched = if needle.is_empty() {
            None
        } else {
            index.contains(&needle)?.map(str::to_string)
        };
        *counts.entry(dataset.clone()).or_default() += 1;
        let entry = hits.entry(dataset.clone()).or_default();
        if matched.is_some() {
            entry.insert(variant.variant_id.clone());
        }
        report.verdicts.push(LeakageVerdict {
            variant_id: variant.variant_id.clone(),
            dataset_id: dataset,
            matched_doc_id: matched,
        });
    }
    for (dataset, n) in counts {
        let dataset_hits: Vec<String> = hits.remove(&dataset).unwrap_or_default().into_iter().collect();
        report.by_dataset.insert(
            dataset,
            LeakageSummary {
                rate_percent: Some(100.0 * dataset_hits.len() as f64 / n as f64),
                n,
                hits: dataset_hits,
            },
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Result<CorpusDoc>> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Ok(CorpusDoc {
                    doc_id: format!("d{i}"),
                    title: None,
                    text: t.to_string(),
                    source_tag: "t".into(),
                })
            })
            .collect()
    }

    #[test]
    fn finds_substrings_within_documents() {
        let index = CorpusIndex::build(docs(&["abc", "bcd"]), IndexOptions::default()).unwrap();
        assert_eq!(index.count("bc").unwrap(), 2);
        assert!(index.contains("bc").unwrap().is_some());
        assert_eq!(index.contains("abc").unwrap(), Some("d0"));
        assert_eq!(index.contains("bcd").unwrap(), Some("d1"));
        assert_eq!(index.contains("cb").unwrap(), None);
    }

    #[test]
    fn empty_index_and_empty_needle() {
        let index = CorpusIndex::build(docs(&[]), IndexOptions::default()).unwrap();
        assert_eq!(index.blob_len(), 0);
        assert_eq!(index.contains("a").unwrap(), None);
        assert!(matches!(index.contains(""), Err(Error::EmptyNeedle)));
    }

    #[test]
    fn matches_never_cross_document_boundaries() {
        let a = "The first document ends here";
        let b = "Second document begins there";
        let index = CorpusIndex::build(docs(&[a, b]), IndexOptions::default()).unwrap();
        let straddle = format!("{}{}", &a[a.len() - 10..], &b[..10]);
        assert_eq!(index.contains(&straddle).unwrap(), None);
        let straddle_nl = format!("{}\n{}", &a[a.len() - 10..], &b[..10]);
        assert_eq!(index.contains(&straddle_nl).unwrap(), None);
    }

    #[test]
    fn capacity_limit_is_enforced() {
        let options = IndexOptions {
            max_blob_bytes: 5,
            normalize: true,
        };
        assert!(matches!(
            CorpusIndex::build(docs(&["abcdef"]), options),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.devi");
        let index = CorpusIndex::build(docs(&["héllo wörld", "second doc"]), IndexOptions::default()).unwrap();
        index.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DEVI");
        assert_eq!(bytes[4], 1);
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), index.blob_len() as u64);
        assert_eq!(CorpusIndex::load(&path).unwrap(), index);

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(CorpusIndex::load(&path), Err(Error::IndexFormat(_))));
        std::fs::write(&path, b"NOPE\x01").unwrap();
        assert!(matches!(CorpusIndex::load(&path), Err(Error::IndexFormat(_))));
    }
}
