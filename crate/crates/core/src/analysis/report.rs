//! Plot-ready report files and their manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::FilterRate;
use crate::store::{sha256_hex, write_atomic};
use crate::types::{DatasetId, PromptMode};
use crate::verbatim::LeakageSummary;

use super::human::HumanBinResult;
use super::stats::{BinSummary, TrendAggregate, TrendSummary};

/// Results of one (dataset, model, prompt mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub dataset_id: DatasetId,
    pub llm_id: String,
    pub mode: PromptMode,
    pub bins: Vec<BinSummary>,
    /// `None` when fewer than two bins are populated.
    pub trend: Option<TrendSummary>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<GroupReport>,
    pub filter_rates: Vec<FilterRate>,
    /// Corpus tag to dataset to leakage.
    pub leakage: BTreeMap<String, BTreeMap<String, LeakageSummary>>,
    /// Keyed by `dataset:<id>` or `llm:<id>`.
    pub aggregates: BTreeMap<String, TrendAggregate>,
    pub human: Vec<HumanBinResult>,
    pub config_hash: String,
    /// Input name to SHA-256.
    pub input_digests: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct TrendFile<'a> {
    x_coordinate: &'static str,
    y_coordinate: &'static str,
    populated_bins: usize,
    trend: Option<&'a TrendSummary>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    std_kind: &'static str,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Path component for an identifier that may contain separators.
pub fn path_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| crate::error::Error::io("<csv buffer>", e))?;
    Ok(w.into_inner().expect("flushed in-memory writer"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes every report file under `out_dir` plus `manifest.json`. Output
/// is a pure function of `report`. Returns the written paths.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();

    for g in &report.groups {
        let dir = format!("{}/{}/{}", g.dataset_id, path_safe(&g.llm_id), g.mode);
        let rows = g
            .bins
            .iter()
            .filter(|b| b.n > 0)
            .map(|b| {
                vec![
                    b.bin_lo.to_string(),
                    b.bin_hi.to_string(),
                    b.n.to_string(),
                    b.k.to_string(),
                    opt(b.accuracy_percent),
                    opt(b.wilson_low),
                    opt(b.wilson_high),
                    b.low_support.to_string(),
                ]
            })
            .collect();
        files.insert(
            format!("{dir}/bins.csv"),
            csv_bytes(
                &["bin_lo", "bin_hi", "n", "k", "accuracy_percent", "wilson_low", "wilson_high", "low_support"],
                rows,
            )?,
        );
        files.insert(
            format!("{dir}/trend.json"),
            json_bytes(&TrendFile {
                x_coordinate: "bin_midpoint",
                y_coordinate: "accuracy_percent",
                populated_bins: g.bins.iter().filter(|b| b.n > 0).count(),
                trend: g.trend.as_ref(),
            })?,
        );
        let rates = report
            .filter_rates
            .iter()
            .filter(|r| r.dataset_id == g.dataset_id && r.llm_id == g.llm_id)
            .map(|r| {
                vec![
                    r.dataset_id.to_string(),
                    r.llm_id.clone(),
                    r.instances.to_string(),
                    r.excluded.to_string(),
                    r.filtered_percent.to_string(),
                ]
            })
            .collect();
        files.insert(
            format!("{dir}/filter_rates.csv"),
            csv_bytes(&["dataset_id", "llm_id", "instances", "excluded", "filtered_percent"], rates)?,
        );
        let leakage: BTreeMap<&str, BTreeMap<&str, &LeakageSummary>> = report
            .leakage
            .iter()
            .filter_map(|(tag, by_dataset)| {
                by_dataset
                    .get(g.dataset_id.as_str())
                    .map(|l| (tag.as_str(), BTreeMap::from([(g.dataset_id.as_str(), l)])))
            })
            .collect();
        files.insert(format!("{dir}/leakage.json"), json_bytes(&leakage)?);
    }

    if !report.aggregates.is_empty() {
        files.insert("aggregates.json".into(), json_bytes(&report.aggregates)?);
    }
    if !report.human.is_empty() {
        let rows = report
            .human
            .iter()
            .map(|h| {
                vec![
                    h.bin_index.to_string(),
                    h.n_annotated.to_string(),
                    h.k_correct.to_string(),
                    opt(h.accuracy_percent),
                ]
            })
            .collect();
        files.insert(
            "human_bins.csv".into(),
            csv_bytes(&["bin_index", "n_annotated", "k_correct", "accuracy_percent"], rows)?,
        );
    }

    let outputs = files.iter().map(|(p, b)| (p.clone(), sha256_hex(b))).collect();
    let manifest = Manifest {
        config_hash: &report.config_hash,
        std_kind: "population",
        inputs: &report.input_digests,
        outputs,
    };
    files.insert("manifest.json".into(), json_bytes(&manifest)?);

    let mut written = Vec::new();
    for (rel, bytes) in files {
        let path = out_dir.join(&rel);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
