use std::collections::BTreeMap;

use drift_eval::evolve::{
    build_variants, diff_ratio, extract_successor, match_occurrences, EvolveOptions, SegmentedChain,
    DEFAULT_DESCEND_FLOOR,
};
use drift_eval::ingest::{QaInstance, RevisionRecord};
use drift_eval::{ApcStatus, DatasetId};

const P: &str = "The mill stood on the east bank. It was built of local stone. Grain came from three farms. \
The wheel turned until the flood of 1951. A museum opened later. Visitors can see the original gears. \
The miller's house is now a cafe. Tours run in summer. The roof was replaced in 1990. Parking is limited.";

fn chain(title: &str, texts: &[&str]) -> Vec<RevisionRecord> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| RevisionRecord {
            title: title.into(),
            rev_id: i as u64 + 1,
            timestamp: format!("2020-01-{:02}T00:00:00Z", i + 1),
            text: t.to_string(),
        })
        .collect()
}

fn squad(id: &str, title: &str, paragraph: &str, answer: &str) -> QaInstance {
    QaInstance {
        instance_id: id.into(),
        dataset_id: DatasetId::Squad11,
        question: format!("Question {id}?"),
        titles: vec![title.into()],
        paragraphs: BTreeMap::from([(title.to_string(), vec![paragraph.to_string()])]),
        gold_titles: vec![],
        gold_answers: vec![answer.into()],
    }
}

#[test]
fn single_span_covers_revisions_one_to_three() {
    let edited = P.replace("three farms", "four farms");
    let texts = [
        format!("Intro.\n\n{P}"),
        format!("Intro, revised.\n\n{P}"),
        format!("Intro, revised.\n\n{P}\n\nCoda."),
        format!("Intro, revised.\n\n{edited}\n\nCoda."),
    ];
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let seg = SegmentedChain::new(&chain("Mill", &refs));
    let spans = match_occurrences(P, &seg);
    assert_eq!(spans.len(), 1);
    assert_eq!((spans[0].first_rev, spans[0].last_rev), (1, 3));
    let succ = extract_successor(&spans[0], &seg, P, DEFAULT_DESCEND_FLOOR).unwrap();
    assert_eq!(succ.paragraph, edited);
    assert_eq!(succ.rev_id, 4);

    assert!(match_occurrences("A paragraph that never appears.", &seg).is_empty());
}

#[test]
fn reappearing_paragraph_gives_two_occurrences() {
    let first_edit = P.replace("local stone", "red brick");
    let second_edit = P.replace("Parking is limited.", "Parking is free.");
    let texts = [
        P.to_string(),
        format!("{P}\n\nMore."),
        first_edit.clone(),
        format!("{first_edit}\n\nMore."),
        P.to_string(),
        format!("Lead.\n\n{P}"),
        format!("Lead.\n\n{second_edit}"),
    ];
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let history = chain("Mill", &refs);
    let seg = SegmentedChain::new(&history);
    let spans = match_occurrences(P, &seg);
    let ranges: Vec<(u64, u64)> = spans.iter().map(|s| (s.first_rev, s.last_rev)).collect();
    assert_eq!(ranges, [(1, 2), (5, 6)]);
    assert_eq!(spans[1].occurrence_index, 1);

    let instances = [squad("m1", "Mill", P, "1951")];
    let histories = BTreeMap::from([("Mill".to_string(), history)]);
    let out = build_variants(&instances, &histories, EvolveOptions::default());
    let edits: Vec<&str> = out.variants.iter().map(|v| v.edited_paragraph.as_str()).collect();
    assert_eq!(edits, [first_edit.as_str(), second_edit.as_str()]);
    assert!(out.variants.iter().all(|v| v.edited_rev > v.first_seen_rev));
}

#[test]
fn appended_sentence_is_the_successor() {
    let appended = format!("{P} A second wheel was added in 2004.");
    let texts = [
        format!("Intro.\n\n{P}\n\nHistory of the area."),
        format!("Intro.\n\n{appended}\n\nHistory of the area."),
    ];
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let seg = SegmentedChain::new(&chain("Mill", &refs));
    let span = match_occurrences(P, &seg)[0];
    let succ = extract_successor(&span, &seg, P, DEFAULT_DESCEND_FLOOR).unwrap();
    assert_eq!(succ.paragraph, appended);
    let (a, b) = (P.chars().count() as f64, appended.chars().count() as f64);
    assert!((succ.similarity - 2.0 * a / (a + b)).abs() < 1e-12);
}

#[test]
fn deleted_paragraph_has_no_successor() {
    let texts = [format!("{P}\n\n0123 4567 89."), "0123 4567 89.\n\n98765 43210.".to_string()];
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let seg = SegmentedChain::new(&chain("Mill", &refs));
    let span = match_occurrences(P, &seg)[0];
    assert!(extract_successor(&span, &seg, P, DEFAULT_DESCEND_FLOOR).is_none());
}

#[test]
fn split_paragraph_keeps_larger_half() {
    let sentences: Vec<&str> = P.split_inclusive(". ").collect();
    assert_eq!(sentences.len(), 10);
    let head = sentences[..6].concat().trim_end().to_string();
    let tail = sentences[6..].concat();
    assert_eq!(format!("{head} {tail}"), P);
    let texts = [P.to_string(), format!("{head}\n\n{tail}")];
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let seg = SegmentedChain::new(&chain("Mill", &refs));
    let span = match_occurrences(P, &seg)[0];
    let succ = extract_successor(&span, &seg, P, DEFAULT_DESCEND_FLOOR).unwrap();
    assert_eq!(succ.paragraph, head);

    // A contiguous piece of the original matches on all of its characters.
    let ratio = |part: &str| {
        let (p, q) = (P.chars().count() as f64, part.chars().count() as f64);
        2.0 * q / (p + q)
    };
    assert!((diff_ratio(P, &head) - ratio(&head)).abs() < 1e-12);
    assert!((diff_ratio(P, &tail) - ratio(&tail)).abs() < 1e-12);
    assert!(ratio(&head) > ratio(&tail));
}

#[test]
fn five_instances_six_edits_one_destroyed() {
    let answers = ["east bank", "local stone", "three farms", "1951", "original gears"];
    let mut instances = Vec::new();
    let mut histories = BTreeMap::new();
    for (i, answer) in answers.iter().enumerate() {
        let title = format!("Mill {i}");
        let paragraph = format!("{P} Entry {i}.");
        let edit = if i == 2 {
            paragraph.replace("three farms", "nearby farms")
        } else {
            paragraph.replace("Tours run in summer.", "Tours run all year.")
        };
        let mut texts = vec![paragraph.clone(), edit];
        if i == 4 {
            texts.push(paragraph.clone());
            texts.push(paragraph.replace("The roof was replaced in 1990.", "The roof leaks."));
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        histories.insert(title.clone(), chain(&title, &refs));
        instances.push(squad(&format!("i{i}"), &title, &paragraph, answer));
    }
    let out = build_variants(&instances, &histories, EvolveOptions::default());
    assert_eq!(out.variants.len(), 6);
    let kept = out.variants.iter().filter(|v| v.apc_status == ApcStatus::Kept).count();
    let lost: Vec<&str> = out
        .variants
        .iter()
        .filter(|v| v.apc_status == ApcStatus::DroppedAnswerLost)
        .map(|v| v.instance_id.as_str())
        .collect();
    assert_eq!((kept, lost), (5, vec!["i2"]));

    for v in out.variants.iter().filter(|v| v.is_kept()) {
        let instance = instances.iter().find(|i| i.instance_id == v.instance_id).unwrap();
        assert!(instance.gold_answers.iter().any(|g| v.edited_paragraph.contains(g.as_str())));
        assert_ne!(v.edited_paragraph, v.original_paragraph);
    }
    let again = build_variants(&instances, &histories, EvolveOptions::default());
    assert_eq!(again.variants, out.variants);
}

#[test]
fn title_without_history_is_skipped() {
    let instances = [squad("lonely", "Nowhere", P, "1951")];
    let out = build_variants(&instances, &BTreeMap::new(), EvolveOptions::default());
    assert!(out.variants.is_empty());
    assert_eq!(out.skips.len(), 1);
    assert_eq!(out.skips[0].title, "Nowhere");
}

#[test]
fn hotpot_distractor_edits_are_ignored() {
    let gold = "The bridge crosses the River Lorne near the old mill.";
    let distractor = "Distractor text about an unrelated canal in another county.";
    let instance = QaInstance {
        instance_id: "hp".into(),
        dataset_id: DatasetId::HotpotQa,
        question: "Which river does the bridge cross?".into(),
        titles: vec!["Bridge".into(), "Canal".into()],
        paragraphs: BTreeMap::from([
            ("Bridge".to_string(), vec![gold.to_string()]),
            ("Canal".to_string(), vec![distractor.to_string()]),
        ]),
        gold_titles: vec!["Bridge".into()],
        gold_answers: vec!["River Lorne".into()],
    };
    let histories = BTreeMap::from([
        ("Bridge".to_string(), chain("Bridge", &[gold, gold])),
        (
            "Canal".to_string(),
            chain("Canal", &[distractor, "Distractor text about an unrelated canal in a distant county."]),
        ),
    ]);
    let out = build_variants(&[instance], &histories, EvolveOptions::default());
    assert!(out.variants.is_empty());
}
