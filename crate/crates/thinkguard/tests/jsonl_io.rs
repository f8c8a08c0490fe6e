use std::collections::BTreeSet;

use proptest::prelude::*;
use thinkguard::core::corpus::{generate_synthetic, AttackType, Label, MemeRecord, ProtectedCategory, Split, SynthConfig};
use thinkguard::jsonl::{load_jsonl, parse_jsonl, to_jsonl, write_jsonl, Diagnostic};

fn record_strategy() -> impl Strategy<Value = MemeRecord> {
    (
        "[a-z0-9-]{1,12}",
        ".{0,20}",
        ".{0,60}",
        any::<bool>(),
        prop::sample::subsequence(ProtectedCategory::ALL.to_vec(), 0..3),
        prop::sample::subsequence(AttackType::ALL.to_vec(), 0..3),
        "[^\u{0}]{1,80}",
        prop::option::of(".{1,80}"),
        prop::sample::select(Split::ALL.to_vec()),
    )
        .prop_map(|(id, img, text, hateful, cats, attacks, expl, cot, split)| MemeRecord {
            id,
            image_ref: img,
            ocr_text: text,
            label: if hateful { Label::Hateful } else { Label::NonHateful },
            protected_categories: if hateful { cats.into_iter().collect() } else { BTreeSet::new() },
            attack_types: if hateful { attacks.into_iter().collect() } else { BTreeSet::new() },
            gold_explanation: expl,
            cot_trace: cot,
            split,
        })
        .prop_filter("explanation must be non-blank", |r| !r.gold_explanation.trim().is_empty())
}

proptest! {
    #[test]
    fn write_then_read_is_identity(records in prop::collection::vec(record_strategy(), 0..8)) {
        let mut seen = BTreeSet::new();
        let records: Vec<MemeRecord> = records.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
        let text = to_jsonl(&records);
        let loaded = parse_jsonl(&text);
        prop_assert!(loaded.is_clean(), "{:?}", loaded.diagnostics);
        prop_assert_eq!(&loaded.records, &records);
        prop_assert_eq!(to_jsonl(&loaded.records), text);
    }
}

#[test]
fn synthetic_corpus_survives_a_file_round_trip() {
    let records = generate_synthetic(&SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("all.jsonl");
    write_jsonl(&path, &records).unwrap();
    let loaded = load_jsonl(&path).unwrap();
    assert!(loaded.is_clean());
    assert!(loaded.missing_explanation.is_empty());
    assert_eq!(loaded.records, records);
}

#[test]
fn empty_and_blank_files_load_no_records() {
    for text in ["", "\n\n   \n"] {
        let loaded = parse_jsonl(text);
        assert!(loaded.is_clean());
        assert!(loaded.records.is_empty());
    }
}

#[test]
fn accepts_the_published_field_layout() {
    let text = concat!(
        r#"{"id": 42, "img": "img/42.png", "text": "a b", "label": 1, "protected_category": "religion", "attack_type": ["mocking", "dehumanizing"], "explanation": "e", "split": "train"}"#,
        "\n",
        r#"{"id": "7", "text": "c", "label": "not_hateful", "split": "dev"}"#,
    );
    let loaded = parse_jsonl(text);
    assert!(loaded.is_clean(), "{:?}", loaded.diagnostics);
    let r = &loaded.records[0];
    assert_eq!(r.id, "42");
    assert_eq!(r.label, Label::Hateful);
    assert_eq!(r.protected_categories, BTreeSet::from([ProtectedCategory::Religion]));
    assert_eq!(r.attack_types.len(), 2);
    assert_eq!(loaded.records[1].label, Label::NonHateful);
    assert_eq!(loaded.missing_explanation, vec!["7".to_string()]);
}

#[test]
fn each_problem_is_reported_with_its_line() {
    let lines = [
        r#"{"id": "a", "text": "t", "label": 0, "explanation": "e", "split": "train"}"#,
        r#"{"id": "b", "text": "t", "label": 1, "explanation": "e", "split": "train"}"#,
        r#"{"id": "c", "text": "t", "label": 2, "explanation": "e", "split": "train"}"#,
        r#"{"id": "d", "text": "t", "label": 0, "explanation": "e", "split": "holdout"}"#,
        r#"{"id": "a", "text": "t", "label": 0, "explanation": "e", "split": "dev"}"#,
        r#"{"id": "e", "text": "t", "label": 0"#,
        r#"{"id": "f", "text": "t", "label": 0, "protected_category": ["race"], "explanation": "e", "split": "dev"}"#,
        r#"{"id": "g", "text": "t", "label": 1, "protected_category": "race", "attack_type": "shouting", "explanation": "e", "split": "dev"}"#,
        r#"{"id": "", "text": "t", "label": 0, "explanation": "e", "split": "dev"}"#,
        r#"[1, 2]"#,
    ];
    let loaded = parse_jsonl(&lines.join("\n"));
    assert_eq!(loaded.records.len(), 1);
    let d = &loaded.diagnostics;
    assert_eq!(d.iter().map(Diagnostic::line).collect::<Vec<_>>(), (2..=10).collect::<Vec<_>>());
    assert!(matches!(d[0], Diagnostic::MissingField { field: "protected_category", .. }));
    assert!(matches!(&d[1], Diagnostic::UnknownEnumValue { field: "label", value, .. } if value == "2"));
    assert!(matches!(&d[2], Diagnostic::UnknownEnumValue { field: "split", value, .. } if value == "holdout"));
    assert!(matches!(&d[3], Diagnostic::DuplicateId { id, first_line: 1, .. } if id == "a"));
    assert!(matches!(d[4], Diagnostic::Malformed { .. }));
    assert!(matches!(d[5], Diagnostic::InvalidRecord { .. }));
    assert!(matches!(&d[6], Diagnostic::UnknownEnumValue { field: "attack_type", .. }));
    assert!(matches!(d[7], Diagnostic::InvalidRecord { .. }));
    assert!(matches!(d[8], Diagnostic::Malformed { .. }));
    assert!(d[0].to_string().starts_with("line 2:"));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(load_jsonl(std::path::Path::new("/nonexistent/corpus.jsonl")).is_err());
}
