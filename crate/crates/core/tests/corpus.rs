use std::collections::BTreeSet;

use proptest::prelude::*;
use regabstract_core::corpus::templates::{entailed_label, is_positive_malignancy, is_sentinel, Fact};
use regabstract_core::corpus::*;
use regabstract_core::textproc::{learn_vocab, AssembleOptions};
use regabstract_core::Error;

fn config(n_cancer: usize, n_control: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_cancer_patients: n_cancer,
        n_control_patients: n_control,
        pretrain_pool_docs: 10,
        seed,
        ..GeneratorConfig::default()
    }
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn same_config_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, seed) in [("a", 5), ("b", 5), ("c", 6)] {
        write_corpus(&generate_corpus(&config(30, 10, seed)).unwrap(), &tmp.path().join(name)).unwrap();
    }
    let (a, b, c) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")), files(&tmp.path().join("c")));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let back = load_corpus(&tmp.path().join("a")).unwrap();
    assert_eq!(back, generate_corpus(&config(30, 10, 5)).unwrap());
}

#[test]
fn invalid_config_names_the_field() {
    let cases: [(&str, GeneratorConfig); 4] = [
        ("cross_doc_fraction", GeneratorConfig { cross_doc_fraction: 1.5, ..config(5, 5, 0) }),
        ("negation_rate", GeneratorConfig { negation_rate: -0.1, ..config(5, 5, 0) }),
        ("n_cancer_patients", config(0, 5, 0)),
        ("n_site_classes", GeneratorConfig { n_site_classes: 311, ..config(5, 5, 0) }),
    ];
    for (field, cfg) in cases {
        match generate_corpus(&cfg) {
            Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
            other => panic!("{field}: {other:?}"),
        }
    }
}

#[test]
fn full_cross_document_patients_need_both_reports() {
    let cfg = GeneratorConfig {
        cross_doc_fraction: 1.0,
        ..config(10, 2, 11)
    };
    let (bundle, trace) = generate_corpus_traced(&cfg).unwrap();
    let mut checked = 0;
    for p in bundle.patients.iter().filter(|p| p.is_cancer()) {
        let t = trace.patient(&p.patient_id).unwrap();
        let site = p.registry.as_ref().unwrap().label(AttributeKind::Site);
        if is_sentinel(site) {
            continue;
        }
        for d in &p.documents {
            assert_ne!(t.entailed_by(AttributeKind::Site, &[&d.doc_id]).as_deref(), Some(site), "{} alone", d.doc_id);
        }
        let pair = p.documents.iter().filter(|d| d.kind == DocKind::Radiology).any(|r| {
            p.documents
                .iter()
                .filter(|d| d.kind == DocKind::Pathology)
                .any(|q| t.entailed_by(AttributeKind::Site, &[&r.doc_id, &q.doc_id]).as_deref() == Some(site))
        });
        assert!(pair, "{}: no radiology + pathology pair entails {site}", p.patient_id);
        checked += 1;
    }
    assert_eq!(checked, 10);
}

#[test]
fn no_cross_document_patient_has_a_self_sufficient_pathology_report() {
    let (bundle, trace) = generate_corpus_traced(&GeneratorConfig {
        cross_doc_fraction: 0.0,
        ..config(20, 2, 4)
    })
    .unwrap();
    for p in bundle.patients.iter().filter(|p| p.is_cancer()) {
        let t = trace.patient(&p.patient_id).unwrap();
        assert!(!t.cross_doc);
        let site = p.registry.as_ref().unwrap().label(AttributeKind::Site);
        let alone = p
            .documents
            .iter()
            .filter(|d| d.kind == DocKind::Pathology)
            .any(|d| t.entailed_by(AttributeKind::Site, &[&d.doc_id]).as_deref() == Some(site));
        assert!(alone, "{}", p.patient_id);
    }
}

#[test]
fn evidence_spans_entail_registry_labels() {
    let (bundle, trace) = generate_corpus_traced(&config(80, 10, 21)).unwrap();
    let mut checked = 0;
    for p in bundle.patients.iter().filter(|p| p.is_cancer()) {
        let reg = p.registry.as_ref().unwrap();
        let t = trace.patient(&p.patient_id).unwrap();
        for attr in AttributeKind::ALL {
            let label = reg.label(attr);
            let spans: Vec<&EvidenceSpan> = bundle
                .evidence
                .iter()
                .filter(|e| e.attribute == attr && p.document(&e.doc_id).is_some())
                .collect();
            if is_sentinel(label) {
                continue;
            }
            assert!(!spans.is_empty(), "{} {attr}", p.patient_id);
            let mut facts: Vec<&Fact> = Vec::new();
            for e in &spans {
                let d = p.document(&e.doc_id).unwrap();
                assert!(e.char_start < e.char_end && e.char_end <= d.text.len());
                let s = t
                    .doc(&e.doc_id)
                    .unwrap()
                    .sentences
                    .iter()
                    .find(|s| s.char_start == e.char_start && s.char_end == e.char_end)
                    .expect("span is a planted sentence");
                facts.push(&s.fact);
            }
            assert_eq!(entailed_label(attr, &facts).as_deref(), Some(label), "{} {attr}", p.patient_id);
            checked += 1;
        }
    }
    assert!(checked > 200);
}

#[test]
fn cancer_patients_have_pathology_on_diagnosis_day_and_controls_stay_benign() {
    let (bundle, trace) = generate_corpus_traced(&config(60, 30, 8)).unwrap();
    for p in &bundle.patients {
        let t = trace.patient(&p.patient_id).unwrap();
        match &p.registry {
            Some(r) => assert!(p.documents.iter().any(|d| d.kind == DocKind::Pathology && d.date == r.diagnosis_date)),
            None => {
                let positive = t.documents.iter().flat_map(|d| &d.sentences).any(|s| is_positive_malignancy(&s.fact));
                assert!(!positive, "{}", p.patient_id);
            }
        }
        let mut sorted = p.documents.clone();
        sorted.sort_by(|a, b| (a.date, &a.doc_id).cmp(&(b.date, &b.doc_id)));
        assert_eq!(sorted, p.documents, "documents are stored in chronological order");
    }
}

#[test]
fn label_codes_follow_their_formats() {
    let bundle = generate_corpus(&config(20, 5, 2)).unwrap();
    for space in &bundle.label_spaces {
        let unique: BTreeSet<&String> = space.classes.iter().collect();
        assert_eq!(unique.len(), space.classes.len());
        for c in space.classes.iter().filter(|c| !is_sentinel(c)) {
            let ok = match space.attribute {
                AttributeKind::Site => {
                    let b = c.as_bytes();
                    b[0] == b'C' && b[1..3].iter().all(u8::is_ascii_digit) && (b.len() == 3 || (b.len() == 5 && b[3] == b'.' && b[4].is_ascii_digit()))
                }
                AttributeKind::Histology => c.len() == 4 && c.bytes().all(|b| b.is_ascii_digit()),
                AttributeKind::ClinicalT | AttributeKind::PathT => ["Tis", "T0", "T1", "T2", "T3", "T4"].contains(&c.as_str()),
                AttributeKind::ClinicalN | AttributeKind::PathN => ["N0", "N1+"].contains(&c.as_str()),
                AttributeKind::ClinicalM | AttributeKind::PathM => ["M0", "M1"].contains(&c.as_str()),
            };
            assert!(ok, "{} code {c}", space.attribute);
        }
    }
    assert_eq!(bundle.label_space(AttributeKind::Site).len(), 24 + 1);
}

#[test]
fn stats_echo_counts_and_histograms_sum_to_cancer_patients() {
    let bundle = generate_corpus(&config(60, 15, 9)).unwrap();
    let texts: Vec<&str> = bundle.patients.iter().flat_map(|p| p.documents.iter().map(|d| d.text.as_str())).collect();
    let vocab = learn_vocab(&texts, 400).unwrap();
    let opts = AssembleOptions::default();
    let stats = corpus_stats(&bundle.patients, Some((&vocab, &opts)));
    assert_eq!((stats.n_patients, stats.n_cancer, stats.n_control), (75, 60, 15));
    for (attr, h) in &stats.class_histograms {
        assert_eq!(h.values().sum::<usize>(), 60, "{attr}");
    }
    let docs: usize = bundle.patients.iter().map(|p| p.documents.len()).sum();
    assert_eq!(stats.documents_per_kind.values().sum::<usize>(), docs);
    assert!(stats.median_assembled_length.unwrap() > 0.0);
}

#[test]
fn single_patient_kind_histogram() {
    let doc = |id: &str, kind| ClinicalDocument {
        doc_id: id.into(),
        patient_id: "p".into(),
        kind,
        date: 1,
        text: "x.".into(),
    };
    let p = Patient {
        patient_id: "p".into(),
        documents: vec![doc("a", DocKind::Pathology), doc("b", DocKind::Pathology), doc("c", DocKind::Radiology)],
        registry: None,
    };
    let stats = corpus_stats(&[p], None);
    let h: Vec<(DocKind, usize)> = stats.documents_per_kind.into_iter().collect();
    assert_eq!(h, [(DocKind::Pathology, 2), (DocKind::Radiology, 1), (DocKind::Operative, 0)]);
}

fn bare_patients(n: usize) -> Vec<Patient> {
    (0..n)
        .map(|i| Patient {
            patient_id: format!("p{i:04}"),
            documents: vec![],
            registry: None,
        })
        .collect()
}

#[test]
fn ten_patients_ten_folds() {
    let f = split_folds(&bare_patients(10), 10, 3).unwrap();
    for k in 0..10 {
        assert_eq!(f.members(k).len(), 1);
    }
    assert!(split_folds(&bare_patients(10), 11, 3).is_err());
    assert!(split_folds(&bare_patients(10), 1, 3).is_err());
}

#[test]
fn six_two_two_grouping_partitions_patients() {
    let bundle = generate_corpus(&config(2000, 500, 7)).unwrap();
    let f = split_folds(&bundle.patients, 10, 1).unwrap();
    let s = f.split(1..=6, 7..=8, 9..=10).unwrap();
    s.check_disjoint().unwrap();
    assert_eq!(s.train.len() + s.dev.len() + s.test.len(), 2500);
    assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (1500, 500, 500));
    assert!(f.split(1..=6, 6..=8, 9..=10).is_err());
    assert!(f.split(0..=6, 7..=8, 9..=10).is_err());
    assert_eq!(f.folds, split_folds(&bundle.patients, 10, 1).unwrap().folds);
}

proptest! {
    #[test]
    fn folds_partition_and_balance(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let patients = bare_patients(n);
        let f = split_folds(&patients, k, seed).unwrap();
        prop_assert_eq!(f.folds.len(), n);
        let sizes: Vec<usize> = (0..k).map(|i| f.members(i).len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(f.folds.clone(), split_folds(&patients, k, seed).unwrap().folds);
    }
}
