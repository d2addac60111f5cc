//! Revision-history loading.
//!
//! Histories arrive either as a MediaWiki `pages-meta-history` XML dump
//! (plain, gzip or bzip2) or as revision JSON lines. Both are read as a
//! stream of pages so memory is bounded by the largest single page.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::wikitext::strip_wikitext;
use super::{open_maybe_compressed, RevisionRecord};
use crate::error::{Error, Result};
use crate::text::{canonical_title, normalize_text};

/// A record that was skipped because required data was missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedRecord {
    pub title: String,
    pub rev_id: Option<u64>,
    pub reason: String,
    /// Byte offset (XML) or 1-based line number (JSONL) of the record.
    pub location: String,
}

/// All revisions of one article, sorted by `rev_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct PageHistory {
    pub title: String,
    pub revisions: Vec<RevisionRecord>,
    pub malformed: Vec<MalformedRecord>,
}

#[derive(Debug, Default)]
pub struct HistoryLoad {
    pub chains: BTreeMap<String, Vec<RevisionRecord>>,
    pub malformed: Vec<MalformedRecord>,
}

impl HistoryLoad {
    pub fn revision_count(&self) -> usize {
        self.chains.values().map(Vec::len).sum()
    }
}

/// Loads every chain in `path` into memory.
pub fn load_revision_history(path: &Path) -> Result<HistoryLoad> {
    load_revision_histories(&[path], None)
}

/// Loads and merges chains from several sources, keeping only `titles`
/// when given.
pub fn load_revision_histories(paths: &[&Path], titles: Option<&HashSet<String>>) -> Result<HistoryLoad> {
    let mut load = HistoryLoad::default();
    for path in paths {
        let mut stream = RevisionStream::open(path)?;
        if let Some(titles) = titles {
            stream = stream.with_title_filter(titles.clone());
        }
        for page in stream {
            let page = page?;
            load.malformed.extend(page.malformed);
            load.chains.entry(page.title.clone()).or_default().extend(page.revisions);
        }
    }
    for (title, chain) in load.chains.iter_mut() {
        order_chain(title, chain)?;
    }
    Ok(load)
}

/// Sorts by `rev_id`, drops exact duplicates, and rejects conflicting
/// duplicates or timestamps that run backwards.
pub(crate) fn order_chain(title: &str, chain: &mut Vec<RevisionRecord>) -> Result<()> {
    chain.sort_by_key(|r| r.rev_id);
    let mut ordered: Vec<RevisionRecord> = Vec::with_capacity(chain.len());
    for rev in chain.drain(..) {
        if let Some(prev) = ordered.last() {
            if prev.rev_id == rev.rev_id {
                if *prev == rev {
                    continue;
                }
                return Err(Error::Ordering {
                    title: title.to_string(),
                    message: format!("conflicting records for revision {}", rev.rev_id),
                });
            }
            if rev.timestamp < prev.timestamp {
                return Err(Error::Ordering {
                    title: title.to_string(),
                    message: format!(
                        "revision {} ({}) is older than revision {} ({})",
                        rev.rev_id, rev.timestamp, prev.rev_id, prev.timestamp
                    ),
                });
            }
        }
        ordered.push(rev);
    }
    *chain = ordered;
    Ok(())
}

/// Iterator over pages of a revision source.
pub struct RevisionStream {
    inner: Source,
    title_filter: Option<HashSet<String>>,
}

enum Source {
    Xml(XmlPages),
    Jsonl(JsonlPages),
}

impl RevisionStream {
    pub fn open(path: &Path) -> Result<Self> {
        let mut reader = open_maybe_compressed(path)?;
        let first = loop {
            let buf = reader.fill_buf().map_err(|e| Error::io(path, e))?;
            match buf.iter().position(|b| !b.is_ascii_whitespace()) {
                Some(i) => break Some(buf[i]),
                None if buf.is_empty() => break None,
                None => {
                    let n = buf.len();
                    reader.consume(n);
                }
            }
        };
        Ok(match first {
            Some(b'<') => Self::from_xml(reader),
            _ => Self::from_jsonl(reader),
        })
    }

    pub fn from_xml(reader: impl BufRead + Send + 'static) -> Self {
        let mut xml = Reader::from_reader(Box::new(reader) as Box<dyn BufRead + Send>);
        xml.config_mut().trim_text(false);
        Self {
            inner: Source::Xml(XmlPages {
                reader: xml,
                buf: Vec::new(),
                done: false,
            }),
            title_filter: None,
        }
    }

    pub fn from_jsonl(reader: impl BufRead + Send + 'static) -> Self {
        Self {
            inner: Source::Jsonl(JsonlPages {
                reader: Box::new(reader),
                line_no: 0,
                offset: 0,
                pending: None,
                done: false,
            }),
            title_filter: None,
        }
    }

    /// Only pages whose canonical title is in `titles` are materialized;
    /// others are skipped without stripping their text.
    pub fn with_title_filter(mut self, titles: HashSet<String>) -> Self {
        self.title_filter = Some(titles);
        self
    }
}

impl Iterator for RevisionStream {
    type Item = Result<PageHistory>;

    fn next(&mut self) -> Option<Self::Item> {
        let filter = self.title_filter.as_ref();
        let page = match &mut self.inner {
            Source::Xml(x) => x.next_page(filter),
            Source::Jsonl(j) => j.next_page(filter),
        };
        match page {
            Ok(Some(mut page)) => Some(order_chain(&page.title, &mut page.revisions).map(|_| page)),
            Ok(None) => None,
            Err(e) => Some(Err(e)),
        }
    }
}

struct XmlPages {
    reader: Reader<Box<dyn BufRead + Send>>,
    buf: Vec<u8>,
    done: bool,
}

#[derive(Default)]
struct PageState {
    title: String,
    ns: Option<String>,
    skip: bool,
    revisions: Vec<RevisionRecord>,
    malformed: Vec<MalformedRecord>,
}

#[derive(Default)]
struct RevState {
    offset: u64,
    id: Option<u64>,
    timestamp: Option<String>,
    text: Option<String>,
    deleted: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Title,
    Ns,
    Id,
    Timestamp,
    Text,
}

impl XmlPages {
    fn parse_error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.reader.buffer_position() as u64,
            message: message.into(),
        }
    }

    fn next_page(&mut self, filter: Option<&HashSet<String>>) -> Result<Option<PageHistory>> {
        if self.done {
            return Ok(None);
        }
        let mut page: Option<PageState> = None;
        let mut rev: Option<RevState> = None;
        let mut capture: Option<Field> = None;
        let mut captured = String::new();
        let mut in_contributor = false;

        loop {
            self.buf.clear();
            let event = match self.reader.read_event_into(&mut self.buf) {
                Ok(ev) => ev.into_owned(),
                Err(e) => {
                    self.done = true;
                    return Err(self.parse_error(e.to_string()));
                }
            };
            match event {
                Event::Start(start) => {
                    let name = local_name(&start);
                    match name.as_str() {
                        "page" => page = Some(PageState::default()),
                        "revision" if page.is_some() => {
                            rev = Some(RevState {
                                offset: self.reader.buffer_position() as u64,
                                ..RevState::default()
                            })
                        }
                        "contributor" => in_contributor = true,
                        _ => {
                            capture = match name.as_str() {
                                "title" if rev.is_none() => Some(Field::Title),
                                "ns" if rev.is_none() => Some(Field::Ns),
                                "id" if rev.is_some() && !in_contributor => Some(Field::Id),
                                "timestamp" if rev.is_some() => Some(Field::Timestamp),
                                "text" if rev.is_some() => Some(Field::Text),
                                _ => None,
                            };
                            if capture == Some(Field::Text) && page.as_ref().is_some_and(|p| p.skip)
                            {
                                capture = None;
                            }
                            captured.clear();
                        }
                    }
                }
                Event::Empty(empty) => {
                    if local_name(&empty) == "text" {
                        if let Some(r) = rev.as_mut() {
                            r.deleted = true;
                        }
                    }
                }
                Event::Text(text) => {
                    if capture.is_some() {
                        let unescaped = text
                            .unescape()
                            .map_err(|e| self.parse_error(e.to_string()))?;
                        captured.push_str(&unescaped);
                    }
                }
                Event::CData(data) => {
                    if capture.is_some() {
                        captured.push_str(&String::from_utf8_lossy(&data));
                    }
                }
                Event::End(end) => {
                    let name = String::from_utf8_lossy(end.local_name().as_ref()).into_owned();
                    match (name.as_str(), capture.take()) {
                        ("title", Some(Field::Title)) => {
                            if let Some(p) = page.as_mut() {
                                p.title = canonical_title(&captured);
                                p.skip = filter.is_some_and(|f| !f.contains(&p.title));
                            }
                        }
                        ("ns", Some(Field::Ns)) => {
                            if let Some(p) = page.as_mut() {
                                p.ns = Some(captured.trim().to_string());
                            }
                        }
                        ("id", Some(Field::Id)) => {
                            if let Some(r) = rev.as_mut() {
                                if r.id.is_none() {
                                    r.id = captured.trim().parse().ok();
                                }
                            }
                        }
                        ("timestamp", Some(Field::Timestamp)) => {
                            if let Some(r) = rev.as_mut() {
                                r.timestamp = Some(captured.trim().to_string());
                            }
                        }
                        ("text", Some(Field::Text)) => {
                            if let Some(r) = rev.as_mut() {
                                r.text = Some(std::mem::take(&mut captured));
                            }
                        }
                        ("contributor", _) => in_contributor = false,
                        ("revision", _) => {
                            if let (Some(p), Some(r)) = (page.as_mut(), rev.take()) {
                                if !p.skip {
                                    finish_revision(p, r);
                                }
                            }
                        }
                        ("page", _) => {
                            let Some(p) = page.take() else { continue };
                            let main_namespace = p.ns.as_deref().map_or(true, |ns| ns == "0");
                            if !p.skip && main_namespace && !p.title.is_empty() {
                                return Ok(Some(PageHistory {
                                    title: p.title,
                                    revisions: p.revisions,
                                    malformed: p.malformed,
                                }));
                            }
                        }
                        _ => {}
                    }
                    captured.clear();
                }
                Event::Eof => {
                    self.done = true;
                    if page.is_some() {
                        return Err(self.parse_error("unexpected end of input inside <page>"));
                    }
                    return Ok(None);
                }
                _ => {}
            }
        }
    }
}

fn local_name(start: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(start.local_name().as_ref()).into_owned()
}

fn finish_revision(page: &mut PageState, rev: RevState) {
    let malformed = |reason: &str| MalformedRecord {
        title: page.title.clone(),
        rev_id: rev.id,
        reason: reason.to_string(),
        location: format!("byte {}", rev.offset),
    };
    let problem = match (&rev.id, &rev.timestamp, &rev.text) {
        (None, _, _) => Some("missing revision id"),
        (_, None, _) => Some("missing timestamp"),
        (_, _, None) if rev.deleted => Some("revision text deleted"),
        (_, _, None) => Some("missing text"),
        _ => None,
    };
    if let Some(reason) = problem {
        let record = malformed(reason);
        page.malformed.push(record);
        return;
    }
    page.revisions.push(RevisionRecord {
        title: page.title.clone(),
        rev_id: rev.id.unwrap_or_default(),
        timestamp: rev.timestamp.unwrap_or_default(),
        text: strip_wikitext(rev.text.as_deref().unwrap_or_default()),
    });
}

struct JsonlPages {
    reader: Box<dyn BufRead + Send>,
    line_no: usize,
    offset: u64,
    pending: Option<RevisionRecord>,
    done: bool,
}

impl JsonlPages {
    /// Reads the next record, or a malformed-record report.
    fn read_record(&mut self) -> Result<Option<std::result::Result<RevisionRecord, MalformedRecord>>> {
        let mut line = String::new();
        loop {
            line.clear();
            let start = self.offset;
            let n = self
                .reader
                .read_line(&mut line)
                .map_err(|e| Error::Parse {
                    offset: start,
                    message: e.to_string(),
                })?;
            if n == 0 {
                return Ok(None);
            }
            self.offset += n as u64;
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
                offset: start,
                message: format!("line {}: {e}", self.line_no),
            })?;
            let title = value
                .get("title")
                .and_then(Value::as_str)
                .map(canonical_title)
                .unwrap_or_default();
            let rev_id = value.get("rev_id").and_then(Value::as_u64);
            let timestamp = value.get("timestamp").and_then(Value::as_str);
            let text = value.get("text").and_then(Value::as_str);
            let reason = if title.is_empty() {
                Some("missing title")
            } else if rev_id.is_none() {
                Some("missing rev_id")
            } else if timestamp.is_none() {
                Some("missing timestamp")
            } else if text.is_none() {
                Some("missing text")
            } else {
                None
            };
            return Ok(Some(match reason {
                Some(reason) => Err(MalformedRecord {
                    title,
                    rev_id,
                    reason: reason.to_string(),
                    location: format!("line {}", self.line_no),
                }),
                None => Ok(RevisionRecord {
                    title,
                    rev_id: rev_id.unwrap_or_default(),
                    timestamp: timestamp.unwrap_or_default().to_string(),
                    text: normalize_text(text.unwrap_or_default()),
                }),
            }));
        }
    }

    /// Groups consecutive lines with the same title into one page.
    fn next_page(&mut self, filter: Option<&HashSet<String>>) -> Result<Option<PageHistory>> {
        loop {
            if self.done && self.pending.is_none() {
                return Ok(None);
            }
            let mut page = match self.pending.take() {
                Some(first) => PageHistory {
                    title: first.title.clone(),
                    revisions: vec![first],
                    malformed: Vec::new(),
                },
                None => match self.read_record()? {
                    None => {
                        self.done = true;
                        return Ok(None);
                    }
                    Some(Ok(first)) => PageHistory {
                        title: first.title.clone(),
                        revisions: vec![first],
                        malformed: Vec::new(),
                    },
                    Some(Err(bad)) => PageHistory {
                        title: bad.title.clone(),
                        revisions: Vec::new(),
                        malformed: vec![bad],
                    },
                },
            };
            loop {
                match self.read_record()? {
                    None => {
                        self.done = true;
                        break;
                    }
                    Some(Ok(rec)) if rec.title == page.title => page.revisions.push(rec),
                    Some(Ok(rec)) => {
                        self.pending = Some(rec);
                        break;
                    }
                    Some(Err(bad)) => page.malformed.push(bad),
                }
            }
            if filter.map_or(true, |f| f.contains(&page.title)) {
                return Ok(Some(page));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn rev(id: u64, ts: &str) -> RevisionRecord {
        RevisionRecord {
            title: "T".into(),
            rev_id: id,
            timestamp: ts.into(),
            text: format!("text {id}"),
        }
    }

    #[test]
    fn ordering_sorts_and_rejects_conflicts() {
        let mut chain = vec![rev(3, "2020-03"), rev(1, "2020-01"), rev(2, "2020-02"), rev(1, "2020-01")];
        order_chain("T", &mut chain).unwrap();
        assert_eq!(chain.iter().map(|r| r.rev_id).collect::<Vec<_>>(), vec![1, 2, 3]);

        let mut conflicting = vec![rev(1, "2020-01"), RevisionRecord { text: "other".into(), ..rev(1, "2020-01") }];
        assert!(matches!(order_chain("T", &mut conflicting), Err(Error::Ordering { .. })));

        let mut backwards = vec![rev(1, "2020-05"), rev(2, "2020-01")];
        assert!(matches!(order_chain("T", &mut backwards), Err(Error::Ordering { .. })));
    }

    #[test]
    fn jsonl_malformed_lines_are_reported_not_fatal() {
        let input = "{\"title\":\"A\",\"rev_id\":1,\"timestamp\":\"t1\",\"text\":\"x\"}\n{\"title\":\"A\",\"timestamp\":\"t2\",\"text\":\"y\"}\n{\"title\":\"B\",\"rev_id\":5,\"timestamp\":\"t\",\"text\":\"z\"}\n";
        let pages: Vec<_> = RevisionStream::from_jsonl(Cursor::new(input.to_string()))
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(pages.len(), 2);
        assert_eq!(pages[0].revisions.len(), 1);
        assert_eq!(pages[0].malformed.len(), 1);
        assert_eq!(pages[0].malformed[0].location, "line 2");
    }

    #[test]
    fn jsonl_syntax_error_carries_byte_offset() {
        let input = "{\"title\":\"A\",\"rev_id\":1,\"timestamp\":\"t\",\"text\":\"x\"}\n{broken\n";
        let err = RevisionStream::from_jsonl(Cursor::new(input.to_string()))
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, input.find("{broken").unwrap() as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn xml_truncated_inside_page_is_a_parse_error() {
        let input = "<mediawiki><page><title>A</title><ns>0</ns><revision><id>1</id>";
        let err = RevisionStream::from_xml(Cursor::new(input.to_string()))
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn xml_skips_other_namespaces_and_filtered_titles() {
        let input = r#"<mediawiki>
<page><title>Talk:A</title><ns>1</ns><revision><id>1</id><timestamp>t</timestamp><text>x</text></revision></page>
<page><title>B</title><ns>0</ns><revision><id>2</id><timestamp>t</timestamp><text>y</text></revision></page>
<page><title>C</title><ns>0</ns><revision><id>3</id><timestamp>t</timestamp><text>z</text></revision></page>
</mediawiki>"#;
        let pages: Vec<_> = RevisionStream::from_xml(Cursor::new(input.to_string()))
            .with_title_filter(HashSet::from(["C".to_string()]))
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(pages.len(), 1);
        assert_eq!(pages[0].title, "C");
        assert_eq!(pages[0].revisions[0].text, "z");
    }
}
