//! Bodies of the individual pipeline stages.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use super::{is_endpoint_failure, Outputs, Pipeline, Stage};
use crate::analysis::{
    aggregate_trends, bin_accuracy, emit_report, fit_trend, fit_weighted, human_bin_accuracy,
    stratified_sample, trend_points, GroupReport, Report, TrendSummary,
};
use crate::endpoint::bounded_map;
use crate::error::{Error, Result};
use crate::evolve::{build_variants, EditedVariant, EvolveOptions, SkipRecord};
use crate::harness::{
    assemble_context, build_prompt, parametric_filter, score_prediction, DecodingParams,
    ParagraphEdit, PredictionRecord, PromptSpec, RawPrediction,
};
use crate::ingest::{
    load_benchmark, load_corpus_snapshot, load_revision_histories, MalformedRecord, QaInstance,
    RevisionRecord,
};
use crate::simdrift::{prefetch, similarity_record, CorpusTitleIndex, SimilarityRecord};
use crate::store::{read_jsonl, to_jsonl};
use crate::types::{DatasetId, PromptMode, TaskKind};
use crate::verbatim::{leakage_rate, CorpusIndex, IndexOptions, LeakageSummary, LeakageVerdict};

const INSTANCES: &str = "stages/ingest/instances.jsonl";
const HISTORIES: &str = "stages/ingest/histories.jsonl";
const VARIANTS: &str = "stages/evolve/variants.jsonl";
const SIMILARITY: &str = "stages/similarity/similarity.jsonl";
const LEAKAGE: &str = "stages/verbatim/leakage.json";
const RAW_PREDICTIONS: &str = "stages/infer/raw_predictions.jsonl";
const PREDICTIONS: &str = "stages/score/predictions.jsonl";
const ANALYSIS: &str = "stages/analyze/analysis.json";

pub(super) fn run(p: &Pipeline, stage: Stage, out: &mut Outputs) -> Result<()> {
    match stage {
        Stage::Ingest => ingest(p, out),
        Stage::Evolve => evolve(p, out),
        Stage::Similarity => similarity(p, out),
        Stage::Verbatim => verbatim(p, out),
        Stage::Infer => infer(p, out),
        Stage::Score => score(p, out),
        Stage::Analyze => analyze(p, out),
        Stage::Report => report(p, out),
    }
}

fn read<T: serde::de::DeserializeOwned>(p: &Pipeline, rel: &str) -> Result<Vec<T>> {
    read_jsonl(&p.output_dir().join(rel))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Pipeline, rel: &str) -> Result<T> {
    let path = p.output_dir().join(rel);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn json_bytes<T: serde::Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn instance_map(p: &Pipeline) -> Result<BTreeMap<String, QaInstance>> {
    Ok(read::<QaInstance>(p, INSTANCES)?
        .into_iter()
        .map(|i| (i.instance_id.clone(), i))
        .collect())
}

fn check_budget(p: &Pipeline, failures: usize) -> Result<()> {
    let budget = p.config().failure_budget;
    if failures > budget {
        return Err(Error::FailureBudget { failures, budget });
    }
    Ok(())
}

fn ingest(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for source in &p.config().datasets {
        for instance in load_benchmark(&source.path, source.id)? {
            if !ids.insert(instance.instance_id.clone()) {
                return Err(Error::Domain(format!("duplicate instance_id `{}`", instance.instance_id)));
            }
            instances.push(instance);
        }
    }
    for (i, instance) in instances.iter().enumerate() {
        instance.validate(i)?;
    }
    let titles: HashSet<String> = instances
        .iter()
        .flat_map(|i| i.editable_titles().iter().cloned())
        .collect();
    let paths: Vec<&Path> = p.config().histories.iter().map(|h| h.path.as_path()).collect();
    let load = load_revision_histories(&paths, Some(&titles))?;
    log::info!(
        "ingest: {} instances, {} chains, {} revisions, {} malformed records",
        instances.len(),
        load.chains.len(),
        load.revision_count(),
        load.malformed.len()
    );
    let revisions: Vec<&RevisionRecord> = load.chains.values().flatten().collect();
    out.write("instances.jsonl", &to_jsonl(&instances)?)?;
    out.write("histories.jsonl", &to_jsonl(&revisions)?)?;
    out.write("malformed.jsonl", &to_jsonl::<MalformedRecord>(&load.malformed)?)
}

fn evolve(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let instances: Vec<QaInstance> = read(p, INSTANCES)?;
    let mut chains: BTreeMap<String, Vec<RevisionRecord>> = BTreeMap::new();
    for rev in read::<RevisionRecord>(p, HISTORIES)? {
        chains.entry(rev.title.clone()).or_default().push(rev);
    }
    let options = EvolveOptions {
        apc_mode: p.config().apc_mode,
        descend_floor: p.config().descend_floor,
    };
    let result = build_variants(&instances, &chains, options);
    log::info!(
        "evolve: {} variants ({} kept), {} skips",
        result.variants.len(),
        result.variants.iter().filter(|v| v.is_kept()).count(),
        result.skips.len()
    );
    out.write("variants.jsonl", &to_jsonl(&result.variants)?)?;
    out.write("skips.jsonl", &to_jsonl::<SkipRecord>(&result.skips)?)
}

fn kept_variants(p: &Pipeline) -> Result<Vec<EditedVariant>> {
    Ok(read::<EditedVariant>(p, VARIANTS)?
        .into_iter()
        .filter(EditedVariant::is_kept)
        .collect())
}

fn similarity(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let instances = instance_map(p)?;
    let variants = kept_variants(p)?;
    let mut needed: HashSet<&str> = HashSet::new();
    for v in &variants {
        needed.insert(&v.title);
        if let Some(i) = instances.get(&v.instance_id) {
            needed.extend(i.gold_titles.iter().map(String::as_str));
        }
    }
    let service = p.embedding_service()?;
    let reduce = p.config().multihop_reduce;
    let mut records: Vec<SimilarityRecord> = Vec::new();
    let mut failures = 0;
    for corpus in &p.config().corpora {
        let mut index = CorpusTitleIndex::default();
        for doc in load_corpus_snapshot(&corpus.path, &corpus.tag)? {
            let doc = doc?;
            if let Some(title) = doc.title.clone().filter(|t| needed.contains(t.as_str())) {
                index.push(&title, doc);
            }
        }
        let refs: Vec<&EditedVariant> = variants.iter().collect();
        if let Err(e) = prefetch(&refs, &instances, &index, &service) {
            if !is_endpoint_failure(&e) {
                return Err(e);
            }
            log::warn!("similarity: batched prefetch failed, continuing per variant: {e}");
        }
        let mut unscored = 0;
        for v in &variants {
            let instance = instances
                .get(&v.instance_id)
                .ok_or_else(|| Error::Domain(format!("variant {} has no instance", v.variant_id)))?;
            match similarity_record(v, instance, &index, &corpus.tag, &service, reduce) {
                Ok(Some(r)) => records.push(r),
                Ok(None) => unscored += 1,
                Err(e) if is_endpoint_failure(&e) => {
                    log::warn!("similarity: {}: {e}", v.variant_id);
                    failures += 1;
                }
                Err(e) => return Err(e),
            }
        }
        log::info!("similarity[{}]: {} variants without same-title content", corpus.tag, unscored);
    }
    check_budget(p, failures)?;
    records.sort_by(|a, b| (&a.corpus_tag, &a.variant_id).cmp(&(&b.corpus_tag, &b.variant_id)));
    out.write("similarity.jsonl", &to_jsonl(&records)?)
}

fn verbatim(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let variants = kept_variants(p)?;
    let config = &p.config().verbatim;
    let options = IndexOptions {
        max_blob_bytes: config.max_blob_bytes,
        normalize: !config.raw_exact,
    };
    let mut leakage: BTreeMap<String, BTreeMap<String, LeakageSummary>> = BTreeMap::new();
    let mut verdicts: Vec<(String, LeakageVerdict)> = Vec::new();
    for corpus in &p.config().corpora {
        if !config.corpora.is_empty() && !config.corpora.contains(&corpus.tag) {
            continue;
        }
        let index = CorpusIndex::build(load_corpus_snapshot(&corpus.path, &corpus.tag)?, options)?;
        let report = leakage_rate(&variants, &index)?;
        leakage.insert(corpus.tag.clone(), report.by_dataset);
        verdicts.extend(report.verdicts.into_iter().map(|v| (corpus.tag.clone(), v)));
    }
    #[derive(serde::Serialize)]
    struct Row<'a> {
        corpus_tag: &'a str,
        #[serde(flatten)]
        verdict: &'a LeakageVerdict,
    }
    let rows: Vec<Row> = verdicts
        .iter()
        .map(|(tag, verdict)| Row { corpus_tag: tag, verdict })
        .collect();
    out.write("leakage.json", &json_bytes(&leakage)?)?;
    out.write("verdicts.jsonl", &to_jsonl(&rows)?)
}

fn decoding(p: &Pipeline, task: TaskKind, mode: PromptMode) -> DecodingParams {
    let d = &p.config().decoding;
    let mut params = DecodingParams::for_prompt(task, mode);
    params.temperature = d.temperature;
    params.top_p = d.top_p;
    params.max_tokens = if params.max_tokens == DecodingParams::LONG_MAX_TOKENS {
        d.max_tokens_long
    } else {
        d.max_tokens
    };
    params
}

/// The passage a variant is read with: the edited paragraph, or for
/// multi-hop items the full context with the edit applied.
pub fn variant_passage(instance: &QaInstance, variant: &EditedVariant) -> Result<String> {
    if instance.task_kind() != TaskKind::MultiHop {
        return Ok(variant.edited_paragraph.clone());
    }
    let edits = BTreeMap::from([(
        variant.title.clone(),
        ParagraphEdit {
            original: variant.original_paragraph.clone(),
            edited: variant.edited_paragraph.clone(),
        },
    )]);
    assemble_context(instance, &edits)
}

struct Job {
    prompt: PromptSpec,
    llm_id: String,
    params: DecodingParams,
    variant_id: Option<String>,
    instance_id: String,
    dataset_id: DatasetId,
}

fn analysis_similarity(p: &Pipeline) -> Result<BTreeMap<String, SimilarityRecord>> {
    let tag = p.config().analysis_corpus_tag().map(str::to_string);
    Ok(read::<SimilarityRecord>(p, SIMILARITY)?
        .into_iter()
        .filter(|r| Some(&r.corpus_tag) == tag.as_ref())
        .map(|r| (r.variant_id.clone(), r))
        .collect())
}

fn infer(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let instances = instance_map(p)?;
    let scored = analysis_similarity(p)?;
    let variants: Vec<EditedVariant> = kept_variants(p)?
        .into_iter()
        .filter(|v| scored.contains_key(&v.variant_id))
        .collect();
    let probed: BTreeSet<&str> = variants.iter().map(|v| v.instance_id.as_str()).collect();

    let mut jobs = Vec::new();
    for llm in &p.config().llms {
        for id in &probed {
            let instance = &instances[*id];
            jobs.push(Job {
                prompt: build_prompt(instance, None, PromptMode::QuestionOnly)?,
                llm_id: llm.llm_id.clone(),
                params: decoding(p, instance.task_kind(), PromptMode::QuestionOnly),
                variant_id: None,
                instance_id: instance.instance_id.clone(),
                dataset_id: instance.dataset_id,
            });
        }
        for v in &variants {
            let instance = &instances[&v.instance_id];
            let passage = variant_passage(instance, v)?;
            for &mode in &p.config().modes {
                jobs.push(Job {
                    prompt: build_prompt(instance, Some(&passage), mode)?,
                    llm_id: llm.llm_id.clone(),
                    params: decoding(p, instance.task_kind(), mode),
                    variant_id: Some(v.variant_id.clone()),
                    instance_id: instance.instance_id.clone(),
                    dataset_id: instance.dataset_id,
                });
            }
        }
    }

    let client = p.llm()?;
    let results = bounded_map(&jobs, p.config().max_in_flight, |job| {
        client.query(&job.prompt, &job.llm_id, &job.params)
    });
    let mut records = Vec::with_capacity(jobs.len());
    let mut failures = 0;
    for (job, result) in jobs.into_iter().zip(results) {
        let (raw_output, error) = match result {
            Ok(text) => (text, None),
            Err(e) if is_endpoint_failure(&e) => {
                failures += 1;
                log::warn!("infer: {} {}: {e}", job.llm_id, job.instance_id);
                (String::new(), Some(e.to_string()))
            }
            Err(e) => return Err(e),
        };
        records.push(RawPrediction {
            variant_id: job.variant_id,
            instance_id: job.instance_id,
            dataset_id: job.dataset_id,
            llm_id: job.llm_id,
            mode: job.prompt.mode,
            raw_output,
            error,
        });
    }
    check_budget(p, failures)?;
    records.sort_by(|a, b| record_key(a).cmp(&record_key(b)));
    out.write("raw_predictions.jsonl", &to_jsonl(&records)?)
}

fn record_key(r: &RawPrediction) -> (&str, &str, PromptMode, &str) {
    (
        r.variant_id.as_deref().unwrap_or(""),
        r.llm_id.as_str(),
        r.mode,
        r.instance_id.as_str(),
    )
}

fn score(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let instances = instance_map(p)?;
    let raw: Vec<RawPrediction> = read(p, RAW_PREDICTIONS)?;
    let needs_semantic = raw
        .iter()
        .any(|r| instances.get(&r.instance_id).is_some_and(|i| i.task_kind() == TaskKind::FreeForm));
    let service = if needs_semantic {
        Some(p.embedding_service()?)
    } else {
        None
    };
    let mut records: Vec<PredictionRecord> = Vec::new();
    let mut failures = 0;
    for r in raw.iter().filter(|r| r.error.is_none()) {
        let instance = instances
            .get(&r.instance_id)
            .ok_or_else(|| Error::Domain(format!("prediction for unknown instance {}", r.instance_id)))?;
        match score_prediction(r, instance, service.as_deref(), p.config().semantic_threshold) {
            Ok(record) => records.push(record),
            Err(e) if is_endpoint_failure(&e) => {
                failures += 1;
                log::warn!("score: {}: {e}", r.instance_id);
            }
            Err(e) => return Err(e),
        }
    }
    check_budget(p, failures)?;
    out.write("predictions.jsonl", &to_jsonl(&records)?)
}

fn analyze(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let config = p.config();
    let similarity = analysis_similarity(p)?;
    let predictions: Vec<PredictionRecord> = read(p, PREDICTIONS)?;

    let mut by_llm: BTreeMap<&str, Vec<PredictionRecord>> = BTreeMap::new();
    for r in &predictions {
        by_llm.entry(&r.llm_id).or_default().push(r.clone());
    }
    let mut report = Report::default();
    let mut cells: BTreeMap<(DatasetId, String, PromptMode), Vec<(usize, u8)>> = BTreeMap::new();
    for (llm_id, records) in by_llm {
        let probed: HashSet<&str> = records
            .iter()
            .filter(|r| r.mode == PromptMode::QuestionOnly)
            .map(|r| r.instance_id.as_str())
            .collect();
        let usable: Vec<PredictionRecord> = records
            .iter()
            .filter(|r| {
                let ok = r.mode == PromptMode::QuestionOnly || probed.contains(r.instance_id.as_str());
                if !ok {
                    log::warn!("analyze: {llm_id}: no probe for {}, excluded", r.instance_id);
                }
                ok
            })
            .cloned()
            .collect();
        let filter = parametric_filter(&usable)?;
        report.filter_rates.extend(filter.rates.iter().cloned());
        for r in usable.iter().filter(|r| r.mode != PromptMode::QuestionOnly) {
            let Some(variant_id) = &r.variant_id else { continue };
            if !filter.is_kept(llm_id, variant_id) {
                continue;
            }
            let Some(sim) = similarity.get(variant_id) else { continue };
            cells
                .entry((r.dataset_id, llm_id.to_string(), r.mode))
                .or_default()
                .push((sim.bin_index, r.correct));
        }
    }

    for ((dataset_id, llm_id, mode), records) in cells {
        let bins = bin_accuracy(&records, config.z, config.min_bin_n)?;
        let points = trend_points(&bins);
        let fit = if config.weighted_fit {
            fit_weighted(&points)
        } else {
            fit_trend(&points.iter().map(|&(x, y, _)| (x, y)).collect::<Vec<_>>())
        };
        let trend = match fit {
            Ok(t) => Some(t),
            Err(Error::InsufficientPoints(_)) => None,
            Err(e) => return Err(e),
        };
        report.groups.push(GroupReport {
            dataset_id,
            llm_id,
            mode,
            bins,
            trend,
        });
    }

    let mut groups: BTreeMap<String, Vec<&TrendSummary>> = BTreeMap::new();
    for g in &report.groups {
        if let Some(t) = &g.trend {
            groups.entry(format!("dataset:{}", g.dataset_id)).or_default().push(t);
            groups.entry(format!("llm:{}", g.llm_id)).or_default().push(t);
        }
    }
    for (name, trends) in groups {
        report.aggregates.insert(name.clone(), aggregate_trends(&name, &trends)?);
    }

    if let Some(path) = &config.human.annotations {
        report.human = human_bin_accuracy(path)?;
    }
    let pool: Vec<(usize, String)> = similarity
        .values()
        .map(|s| (s.bin_index, s.variant_id.clone()))
        .collect();
    let sample = stratified_sample(&pool, config.human.per_bin, config.seed);
    let mut csv = String::from("variant_id,bin_index,short_bin\n");
    for (bin, id) in &sample.items {
        csv.push_str(&format!("{id},{bin},{}\n", sample.short_bins.contains(bin)));
    }

    out.write("analysis.json", &json_bytes(&report)?)?;
    out.write("human_sample.csv", csv.as_bytes())
}

fn report(p: &Pipeline, out: &mut Outputs) -> Result<()> {
    let mut report: Report = read_json(p, ANALYSIS)?;
    report.leakage = read_json(p, LEAKAGE)?;
    report.config_hash = p.config().config_hash();
    for stage in [Stage::Ingest, Stage::Similarity, Stage::Verbatim, Stage::Analyze] {
        if let Some(m) = p.read_manifest(stage)? {
            report.input_digests.extend(m.inputs.into_iter().filter(|(k, _)| !k.starts_with("stages/")));
        }
    }
    if let Some(m) = p.read_manifest(Stage::Analyze)? {
        report.input_digests.extend(m.outputs);
    }
    let dir = p.output_dir().join("report");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for path in emit_report(&report, &dir)? {
        out.record_existing(&path)?;
    }
    Ok(())
}
