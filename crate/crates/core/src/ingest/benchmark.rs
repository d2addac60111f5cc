//! Benchmark adapters. Each dataset's native release format is mapped onto
//! [`QaInstance`]; files already in the canonical JSONL layout are read as is.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use super::QaInstance;
use crate::error::{Error, Result};
use crate::text::{canonical_title, normalize_text, segment_paragraphs};
use crate::types::DatasetId;

pub fn load_benchmark(path: &Path, dataset_id: DatasetId) -> Result<Vec<QaInstance>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(&raw)?;

    let canonical = records
        .first()
        .is_some_and(|r| r.get("instance_id").is_some());
    let instances = if canonical {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| canonical_record(r, i, dataset_id))
            .collect::<Result<Vec<_>>>()?
    } else {
        match dataset_id {
            DatasetId::Squad11 | DatasetId::Squad20 | DatasetId::AdvQaDRoberta => {
                squad_records(&records, dataset_id)?
            }
            DatasetId::BoolQ => records
                .iter()
                .enumerate()
                .map(|(i, r)| boolq_record(r, i))
                .collect::<Result<_>>()?,
            DatasetId::WikiWhy => records
                .iter()
                .enumerate()
                .map(|(i, r)| wikiwhy_record(r, i))
                .collect::<Result<_>>()?,
            DatasetId::HotpotQa => records
                .iter()
                .enumerate()
                .map(|(i, r)| hotpot_record(r, i))
                .collect::<Result<_>>()?,
        }
    };

    for (i, instance) in instances.iter().enumerate() {
        instance.validate(i)?;
    }
    Ok(instances)
}

/// Reads instances previously written by the ingest stage.
pub fn load_canonical_instances(path: &Path) -> Result<Vec<QaInstance>> {
    let instances: Vec<QaInstance> = crate::store::read_jsonl(path)?;
    for (i, instance) in instances.iter().enumerate() {
        instance.validate(i)?;
    }
    Ok(instances)
}

/// Accepts a JSON document (object or array) or JSON lines.
fn parse_records(raw: &str) -> Result<Vec<Value>> {
    let trimmed = raw.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if let Ok(doc) = serde_json::from_str::<Value>(raw) {
        return Ok(match doc {
            Value::Array(items) => items,
            other => vec![other],
        });
    }
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::ParseLine {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn field<'a>(record: &'a Value, name: &str, index: usize) -> Result<&'a Value> {
    record
        .get(name)
        .filter(|v| !v.is_null())
        .ok_or_else(|| schema(index, name))
}

fn schema(index: usize, name: &str) -> Error {
    Error::Schema {
        index,
        field: name.to_string(),
    }
}

fn string_field(record: &Value, name: &str, index: usize) -> Result<String> {
    match field(record, name, index)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(schema(index, name)),
    }
}

fn first_string(record: &Value, names: &[&str], index: usize) -> Result<String> {
    names
        .iter()
        .find_map(|n| string_field(record, n, index).ok())
        .ok_or_else(|| schema(index, names[0]))
}

fn string_list(value: &Value, index: usize, name: &str) -> Result<Vec<String>> {
    value
        .as_array()
        .ok_or_else(|| schema(index, name))?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| schema(index, name)))
        .collect()
}

fn passage(text: &str) -> Vec<String> {
    segment_paragraphs(&normalize_text(text))
}

fn dedup_answers(answers: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for a in answers {
        let a = normalize_text(&a);
        if !a.is_empty() && !out.contains(&a) {
            out.push(a);
        }
    }
    out
}

fn canonical_record(record: &Value, index: usize, dataset_id: DatasetId) -> Result<QaInstance> {
    let declared: DatasetId = string_field(record, "dataset_id", index)?.parse()?;
    if declared != dataset_id {
        return Err(schema(index, "dataset_id"));
    }
    let titles: Vec<String> = string_list(field(record, "titles", index)?, index, "titles")?
        .iter()
        .map(|t| canonical_title(t))
        .collect();
    let mut paragraphs = BTreeMap::new();
    let map = field(record, "paragraphs", index)?
        .as_object()
        .ok_or_else(|| schema(index, "paragraphs"))?;
    for (title, paras) in map {
        let joined = string_list(paras, index, "paragraphs")?.join("\n\n");
        paragraphs.insert(canonical_title(title), passage(&joined));
    }
    let gold_titles = match record.get("gold_titles") {
        Some(v) if !v.is_null() => string_list(v, index, "gold_titles")?
            .iter()
            .map(|t| canonical_title(t))
            .collect(),
        _ => Vec::new(),
    };
    let gold_answers = string_list(field(record, "gold_answers", index)?, index, "gold_answers")?;
    let gold_answers = if dataset_id == DatasetId::BoolQ {
        gold_answers.iter().map(|a| a.trim().to_ascii_uppercase()).collect()
    } else {
        dedup_answers(gold_answers)
    };
    Ok(QaInstance {
        instance_id: string_field(record, "instance_id", index)?,
        dataset_id,
        question: normalize_text(&string_field(record, "question", index)?),
        titles,
        paragraphs,
        gold_titles,
        gold_answers,
    })
}

/// SQuAD 1.1 / 2.0 and AdversarialQA share the nested `data/paragraphs/qas`
/// layout.
fn squad_records(records: &[Value], dataset_id: DatasetId) -> Result<Vec<QaInstance>> {
    let mut out = Vec::new();
    let articles: Vec<&Value> = records
        .iter()
        .flat_map(|r| match r.get("data").and_then(Value::as_array) {
            Some(data) => data.iter().collect::<Vec<_>>(),
            None => vec![r],
        })
        .collect();
    for article in articles {
        let index = out.len();
        let title = canonical_title(&string_field(article, "title", index)?);
        let paras = field(article, "paragraphs", index)?
            .as_array()
            .ok_or_else(|| schema(index, "paragraphs"))?;
        for para in paras {
            let index = out.len();
            let context = passage(&string_field(para, "context", index)?);
            let qas = field(para, "qas", index)?
                .as_array()
                .ok_or_else(|| schema(index, "qas"))?;
            for qa in qas {
                let index = out.len();
                let answers = qa
                    .get("answers")
                    .and_then(Value::as_array)
                    .map(|list| {
                        list.iter()
                            .filter_map(|a| a.get("text").and_then(Value::as_str))
                            .map(str::to_string)
                            .collect::<Vec<_>>()
                    })
                    .unwrap_or_default();
                let impossible = qa
                    .get("is_impossible")
                    .and_then(Value::as_bool)
                    .unwrap_or(false);
                let mut gold = dedup_answers(answers);
                if dataset_id == DatasetId::Squad20 && (impossible || gold.is_empty()) {
                    gold = vec!["unanswerable".to_string()];
                }
                if gold.is_empty() {
                    return Err(schema(index, "answers"));
                }
                out.push(QaInstance {
                    instance_id: string_field(qa, "id", index)?,
                    dataset_id,
                    question: normalize_text(&string_field(qa, "question", index)?),
                    titles: vec![title.clone()],
                    paragraphs: BTreeMap::from([(title.clone(), context.clone())]),
                    gold_titles: Vec::new(),
                    gold_answers: gold,
                });
            }
        }
    }
    Ok(out)
}

fn boolq_record(record: &Value, index: usize) -> Result<QaInstance> {
    let title = canonical_title(&string_field(record, "title", index)?);
    let answer = match field(record, "answer", index)? {
        Value::Bool(b) => *b,
        Value::String(s) if s.eq_ignore_ascii_case("true") => true,
        Value::String(s) if s.eq_ignore_ascii_case("false") => false,
        _ => return Err(schema(index, "answer")),
    };
    let instance_id = first_string(record, &["id", "idx"], index)
        .unwrap_or_else(|_| format!("boolq-{index}"));
    Ok(QaInstance {
        instance_id,
        dataset_id: DatasetId::BoolQ,
        question: normalize_text(&string_field(record, "question", index)?),
        titles: vec![title.clone()],
        paragraphs: BTreeMap::from([(title, passage(&string_field(record, "passage", index)?))]),
        gold_titles: Vec::new(),
        gold_answers: vec![if answer { "TRUE" } else { "FALSE" }.to_string()],
    })
}

fn wikiwhy_record(record: &Value, index: usize) -> Result<QaInstance> {
    let title = canonical_title(&string_field(record, "title", index)?);
    let context = first_string(record, &["passage", "ctx", "context"], index)?;
    let answers = match record.get("answers") {
        Some(Value::Array(_)) => string_list(&record["answers"], index, "answers")?,
        _ => vec![first_string(record, &["answer", "cause"], index)?],
    };
    let instance_id = first_string(record, &["id", "why_id"], index)
        .unwrap_or_else(|_| format!("wikiwhy-{index}"));
    let gold = dedup_answers(answers);
    if gold.is_empty() {
        return Err(schema(index, "answer"));
    }
    Ok(QaInstance {
        instance_id,
        dataset_id: DatasetId::WikiWhy,
        question: normalize_text(&string_field(record, "question", index)?),
        titles: vec![title.clone()],
        paragraphs: BTreeMap::from([(title, passage(&context))]),
        gold_titles: Vec::new(),
        gold_answers: gold,
    })
}

/// HotpotQA distractor setting: `context` is a list of `[title, sentences]`
/// and `supporting_facts` a list of `[title, sentence_index]`.
fn hotpot_record(record: &Value, index: usize) -> Result<QaInstance> {
    let mut titles = Vec::new();
    let mut paragraphs = BTreeMap::new();
    let context = field(record, "context", index)?
        .as_array()
        .ok_or_else(|| schema(index, "context"))?;
    for entry in context {
        let pair = entry.as_array().filter(|p| p.len() == 2);
        let pair = pair.ok_or_else(|| schema(index, "context"))?;
        let title = canonical_title(pair[0].as_str().ok_or_else(|| schema(index, "context"))?);
        let sentences = string_list(&pair[1], index, "context")?;
        paragraphs.insert(title.clone(), passage(&sentences.concat()));
        titles.push(title);
    }

    let facts = field(record, "supporting_facts", index)?
        .as_array()
        .ok_or_else(|| schema(index, "supporting_facts"))?;
    let mut gold_titles = Vec::new();
    for fact in facts {
        let title = fact
            .as_array()
            .and_then(|f| f.first())
            .and_then(Value::as_str)
            .ok_or_else(|| schema(index, "supporting_facts"))?;
        let title = canonical_title(title);
        if !titles.contains(&title) {
            return Err(schema(index, "supporting_facts"));
        }
        if !gold_titles.contains(&title) {
            gold_titles.push(title);
        }
    }
    gold_titles.sort_by_key(|g| titles.iter().position(|t| t == g));

    Ok(QaInstance {
        instance_id: first_string(record, &["_id", "id"], index)?,
        dataset_id: DatasetId::HotpotQa,
        question: normalize_text(&string_field(record, "question", index)?),
        titles,
        paragraphs,
        gold_titles,
        gold_answers: dedup_answers(vec![string_field(record, "answer", index)?]),
    })
}
