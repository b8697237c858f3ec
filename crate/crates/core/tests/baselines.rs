use std::collections::BTreeMap;

use proptest::prelude::*;
use regabstract_core::baselines::*;
use regabstract_core::corpus::{AttributeKind, ClinicalDocument, DocKind, LabelSpace, NOT_DOCUMENTED};

fn doc(id: &str, text: &str) -> ClinicalDocument {
    ClinicalDocument {
        doc_id: id.into(),
        patient_id: "p".into(),
        kind: DocKind::Pathology,
        date: 0,
        text: text.into(),
    }
}

fn space(classes: &[&str]) -> LabelSpace {
    LabelSpace {
        attribute: AttributeKind::Site,
        classes: classes.iter().map(|c| c.to_string()).collect(),
    }
}

fn lexicon() -> BTreeMap<String, Vec<String>> {
    let mut lex = BTreeMap::new();
    lex.insert("C34.1".to_string(), vec!["upper lobe".to_string()]);
    lex.insert("C61.9".to_string(), vec!["prostate".to_string(), "prostatic".to_string()]);
    lex.insert(NOT_DOCUMENTED.to_string(), vec!["not documented".to_string()]);
    lex
}

#[test]
fn ontology_scores_are_normalized_counts() {
    let sp = space(&["C34.1", "C61.9", NOT_DOCUMENTED]);
    let a = doc("a", "Mass in the right upper lobe. Upper lobe nodule.");
    let b = doc("b", "Prostate unremarkable. Upper lobe biopsy.");
    let p = ontology_predict(&lexicon(), &sp, &[&a, &b]);
    assert_eq!(p, vec![0.75, 0.25, 0.0]);
}

#[test]
fn ontology_without_hits_is_not_documented() {
    let sp = space(&["C34.1", "C61.9", NOT_DOCUMENTED]);
    let a = doc("a", "No findings of note.");
    assert_eq!(ontology_predict(&lexicon(), &sp, &[&a]), vec![0.0, 0.0, 1.0]);
    assert_eq!(ontology_predict(&lexicon(), &sp, &[]), vec![0.0, 0.0, 1.0]);
}

proptest! {
    #[test]
    fn ontology_is_document_order_invariant(texts in prop::collection::vec("(upper lobe|prostate|prostatic|benign|tissue| |\\.){0,12}", 1..5)) {
        let sp = space(&["C34.1", "C61.9", NOT_DOCUMENTED]);
        let docs: Vec<ClinicalDocument> = texts.iter().enumerate().map(|(i, t)| doc(&i.to_string(), t)).collect();
        let fwd: Vec<&ClinicalDocument> = docs.iter().collect();
        let rev: Vec<&ClinicalDocument> = docs.iter().rev().collect();
        prop_assert_eq!(ontology_predict(&lexicon(), &sp, &fwd), ontology_predict(&lexicon(), &sp, &rev));
    }
}

fn toy() -> (Vec<ClinicalDocument>, Vec<usize>) {
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..12 {
        let (text, y) = if i % 2 == 0 {
            (format!("report {i} shows carcinoma of the lung lobe"), 0)
        } else {
            (format!("report {i} shows carcinoma of the prostate gland"), 1)
        };
        docs.push(doc(&i.to_string(), &text));
        labels.push(y);
    }
    (docs, labels)
}

fn examples<'a>(docs: &'a [ClinicalDocument], labels: &[usize]) -> Vec<(Vec<&'a ClinicalDocument>, usize)> {
    docs.iter().zip(labels).map(|(d, &y)| (vec![d], y)).collect()
}

#[test]
fn bow_separates_a_separable_toy_set() {
    let (docs, labels) = toy();
    let sp = space(&["lung", "prostate", NOT_DOCUMENTED]);
    let out = bow_train(&examples(&docs, &labels), &sp, &BowConfig::default()).unwrap();
    for (d, &y) in docs.iter().zip(&labels) {
        let p = bow_predict(&out.model, &[d]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, y);
    }
    assert!(out.losses.last().unwrap() < out.losses.first().unwrap());
}

#[test]
fn bow_unknown_words_predict_not_documented() {
    let (docs, labels) = toy();
    let sp = space(&["lung", "prostate", NOT_DOCUMENTED]);
    let out = bow_train(&examples(&docs, &labels), &sp, &BowConfig::default()).unwrap();
    let d = doc("x", "zzz qqq");
    assert_eq!(bow_predict(&out.model, &[&d]), vec![0.0, 0.0, 1.0]);
}

#[test]
fn bow_objective_is_convex_across_initializations() {
    let (docs, labels) = toy();
    let sp = space(&["lung", "prostate", NOT_DOCUMENTED]);
    let cfg = BowConfig {
        l2: 1e-2,
        steps: 3000,
        ..BowConfig::default()
    };
    let a = bow_train(&examples(&docs, &labels), &sp, &cfg).unwrap();
    let b = bow_train(
        &examples(&docs, &labels),
        &sp,
        &BowConfig {
            init_std: 1.0,
            seed: 9,
            ..cfg.clone()
        },
    )
    .unwrap();
    let (la, lb) = (*a.losses.last().unwrap(), *b.losses.last().unwrap());
    assert!((la - lb).abs() < 1e-3, "{la} vs {lb}");
}

#[test]
fn bow_counts_are_capped() {
    let model_words: BTreeMap<String, usize> = [("a".to_string(), 0)].into_iter().collect();
    let text = "a ".repeat(1000);
    let d = doc("x", &text);
    let f = bow_features(&model_words, &[&d]);
    assert_eq!(f, vec![(0, (1.0 + MAX_WORD_COUNT as f64).ln())]);
}

#[test]
fn bow_model_file_round_trip() {
    let (docs, labels) = toy();
    let sp = space(&["lung", "prostate", NOT_DOCUMENTED]);
    let out = bow_train(&examples(&docs, &labels), &sp, &BowConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("site.bow");
    save_bow(&out.model, &path).unwrap();
    let back = load_bow(&path).unwrap();
    assert_eq!(back, out.model);
    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_bow(&path).is_err());
}

#[test]
fn bow_rejects_empty_training_set() {
    let sp = space(&["lung", NOT_DOCUMENTED]);
    assert!(bow_train(&[], &sp, &BowConfig::default()).is_err());
}
