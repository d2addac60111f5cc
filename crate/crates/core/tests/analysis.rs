use std::path::Path;

use drift_eval::analysis::{
    aggregate_trends, bin_accuracy, emit_report, fit_trend, human_bin_accuracy, stratified_sample, wilson_interval,
    wilson_unclamped, GroupReport, Report, TrendSummary, DEFAULT_Z, MIN_BIN_N,
};
use drift_eval::types::PromptMode;
use drift_eval::{DatasetId, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn wilson_reference_points() {
    let (lo, hi) = wilson_interval(0, 1, DEFAULT_Z).unwrap();
    assert!(close(lo, 0.0, 1e-3) && close(hi, 0.7935, 1e-3), "({lo}, {hi})");
    assert_eq!(wilson_interval(12, 12, DEFAULT_Z).unwrap().1, 1.0);
    let (lo, hi) = wilson_interval(5, 10, DEFAULT_Z).unwrap();
    assert!(close(0.5 - lo, hi - 0.5, 1e-12));
    assert!(matches!(wilson_interval(0, 0, DEFAULT_Z), Err(Error::Domain(_))));
    assert!(matches!(wilson_interval(4, 3, DEFAULT_Z), Err(Error::Domain(_))));
}

#[test]
fn wilson_brackets_and_narrows() {
    for n in 1..=1000 {
        for k in [0, n / 3, n / 2, n] {
            let (lo, hi) = wilson_unclamped(k, n, DEFAULT_Z).unwrap();
            let p = k as f64 / n as f64;
            assert!(lo <= p + 1e-12 && p <= hi + 1e-12, "k={k} n={n}");
        }
    }
    let mut last = f64::INFINITY;
    for n in (10..=1000).step_by(10) {
        let (lo, hi) = wilson_unclamped(3 * n / 10, n, DEFAULT_Z).unwrap();
        assert!(hi - lo < last, "width grew at n={n}");
        last = hi - lo;
    }
}

#[test]
fn bin_accuracy_counts() {
    let mut records: Vec<(usize, u8)> = (0..10).map(|i| (4, u8::from(i < 7))).collect();
    records.extend([(7, 1), (7, 0), (7, 1)]);
    let bins = bin_accuracy(&records, DEFAULT_Z, MIN_BIN_N).unwrap();
    assert_eq!(bins.len(), 10);
    assert_eq!((bins[4].n, bins[4].k, bins[4].accuracy_percent), (10, 7, Some(70.0)));
    assert!(!bins[4].low_support);
    assert_eq!((bins[7].n, bins[7].k), (3, 2));
    assert!(bins[7].low_support);
    assert_eq!((bins[0].n, bins[0].accuracy_percent, bins[0].wilson_low), (0, None, None));
    assert!(bin_accuracy(&[(10, 1)], DEFAULT_Z, MIN_BIN_N).is_err());
    assert!(bin_accuracy(&[(3, 2)], DEFAULT_Z, MIN_BIN_N).is_err());
}

#[test]
fn trend_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let points: Vec<(f64, f64)> = (0..rng.gen_range(3..=10))
            .map(|b| (0.05 + 0.1 * b as f64, rng.gen_range(0.0..100.0)))
            .collect();
        let base = fit_trend(&points).unwrap();
        let c = rng.gen_range(-50.0..50.0);
        let shifted = fit_trend(&points.iter().map(|&(x, y)| (x, y + c)).collect::<Vec<_>>()).unwrap();
        assert!(close(shifted.slope, base.slope, 1e-9));
        assert!(close(shifted.intercept, base.intercept + c, 1e-9));
        assert!(close(shifted.pearson_r.unwrap(), base.pearson_r.unwrap(), 1e-9));
        let s = rng.gen_range(0.1..5.0) * if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        let scaled = fit_trend(&points.iter().map(|&(x, y)| (x, y * s)).collect::<Vec<_>>()).unwrap();
        assert!(close(scaled.slope, base.slope * s, 1e-9));
        assert!(close(scaled.pearson_r.unwrap().abs(), base.pearson_r.unwrap().abs(), 1e-9));
    }
    let exact = fit_trend(&[(0.05, 5.0), (0.55, 55.0), (0.95, 95.0)]).unwrap();
    assert!(close(exact.slope, 100.0, 1e-9) && close(exact.intercept, 0.0, 1e-9));
    assert!(matches!(fit_trend(&[(0.5, 1.0)]), Err(Error::InsufficientPoints(_))));
    assert!(matches!(fit_trend(&[(0.5, 1.0), (0.5, 2.0)]), Err(Error::InsufficientPoints(_))));
}

fn trend(slope: f64, r: Option<f64>) -> TrendSummary {
    TrendSummary {
        slope,
        intercept: 0.0,
        pearson_r: r,
        n_points: 5,
        weighted: false,
    }
}

#[test]
fn aggregate_six_trends() {
    let trends = [
        trend(10.0, Some(0.5)),
        trend(20.0, Some(0.7)),
        trend(30.0, None),
        trend(40.0, Some(0.9)),
        trend(50.0, Some(-0.1)),
        trend(90.0, Some(0.6)),
    ];
    let refs: Vec<&TrendSummary> = trends.iter().collect();
    let agg = aggregate_trends("llm:x", &refs).unwrap();
    // Slopes: mean 240/6 = 40, squared deviations sum to 4000.
    assert_eq!(agg.n_trends, 6);
    assert!(close(agg.slope_mean, 40.0, 1e-12));
    assert!(close(agg.slope_std, (4000.0f64 / 6.0).sqrt(), 1e-12));
    // r: five defined values, mean 2.6/5 = 0.52, squared deviations sum to 0.568.
    assert_eq!(agg.r_excluded, 1);
    assert!(close(agg.r_mean.unwrap(), 0.52, 1e-12));
    assert!(close(agg.r_std.unwrap(), (0.568f64 / 5.0).sqrt(), 1e-12));
    assert_eq!(agg.std_kind, "population");

    let pair = [trend(60.0, Some(1.0)), trend(80.0, Some(1.0))];
    let agg = aggregate_trends("dataset:y", &pair.iter().collect::<Vec<_>>()).unwrap();
    assert_eq!((agg.slope_mean, agg.slope_std), (70.0, 10.0));
    let single = aggregate_trends("dataset:z", &[&pair[0]]).unwrap();
    assert_eq!((single.slope_mean, single.slope_std), (60.0, 0.0));
    assert!(matches!(aggregate_trends("empty", &[]), Err(Error::EmptyGroup(_))));
}

#[test]
fn stratified_sample_rules() {
    let mut records: Vec<(usize, String)> =
        (0..10).flat_map(|b| (0..12).map(move |i| (b, format!("b{b}-v{i:02}")))).collect();
    let full = stratified_sample(&records, 5, 7);
    assert_eq!(full.items.len(), 50);
    assert!(full.short_bins.is_empty());
    assert_eq!(stratified_sample(&records, 5, 7), full);
    assert_ne!(stratified_sample(&records, 5, 8).items, full.items);

    records.retain(|(b, id)| *b != 3 || id.ends_with("00") || id.ends_with("01") || id.ends_with("02"));
    records.push((3, "b3-v00".into()));
    let sample = stratified_sample(&records, 5, 7);
    let bin3: Vec<&str> = sample.items.iter().filter(|(b, _)| *b == 3).map(|(_, id)| id.as_str()).collect();
    assert_eq!(bin3, ["b3-v00", "b3-v01", "b3-v02"]);
    assert_eq!(sample.short_bins, [3]);
}

#[test]
fn twenty_annotated_items() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/annotations.csv");
    let results = human_bin_accuracy(&path).unwrap();
    let table: Vec<(usize, usize, usize)> = results.iter().map(|r| (r.bin_index, r.n_annotated, r.k_correct)).collect();
    assert_eq!(table, [(2, 7, 4), (5, 7, 5), (8, 6, 6)]);
    assert_eq!(results[2].accuracy_percent, Some(100.0));

    let dir = tempfile::tempdir().unwrap();
    let unresolved = dir.path().join("a.csv");
    std::fs::write(
        &unresolved,
        "variant_id,bin_index,annotator_id,label\nv1,4,ann1,correct\nv1,4,ann2,incorrect\n",
    )
    .unwrap();
    assert!(matches!(human_bin_accuracy(&unresolved), Err(Error::MissingAdjudication(id)) if id == "v1"));
}

fn sample_report(digest: &str) -> Report {
    let records: Vec<(usize, u8)> = [(2, 0), (2, 1), (5, 1), (5, 1), (8, 1)].to_vec();
    let bins = bin_accuracy(&records, DEFAULT_Z, MIN_BIN_N).unwrap();
    Report {
        groups: vec![GroupReport {
            dataset_id: DatasetId::BoolQ,
            llm_id: "org/model".into(),
            mode: PromptMode::WithContext,
            bins,
            trend: Some(trend(50.0, Some(0.9))),
        }],
        config_hash: "cfg".into(),
        input_digests: [("instances".to_string(), digest.to_string())].into_iter().collect(),
        ..Report::default()
    }
}

#[test]
fn report_rows_and_manifest_digests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    emit_report(&sample_report("aaaa"), a.path()).unwrap();
    emit_report(&sample_report("aaaa"), b.path()).unwrap();
    emit_report(&sample_report("aaab"), c.path()).unwrap();

    let bins = std::fs::read_to_string(a.path().join("BOOLQ/org_model/WITH_CONTEXT/bins.csv")).unwrap();
    assert_eq!(bins.lines().count(), 1 + 3);
    assert!(bins.starts_with("bin_lo,bin_hi,n,k,accuracy_percent,wilson_low,wilson_high"));

    let read = |d: &Path| std::fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
    let bins_b = std::fs::read_to_string(b.path().join("BOOLQ/org_model/WITH_CONTEXT/bins.csv")).unwrap();
    assert_eq!(bins, bins_b);
}
