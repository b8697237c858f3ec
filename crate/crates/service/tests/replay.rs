use std::collections::BTreeSet;

use proptest::prelude::*;
use regabstract_core::corpus::{generate_corpus, CorpusBundle, GeneratorConfig};
use regabstract_service::*;

fn bundle() -> CorpusBundle {
    generate_corpus(&GeneratorConfig {
        n_cancer_patients: 6,
        n_control_patients: 2,
        n_site_classes: 4,
        n_histology_classes: 4,
        pretrain_pool_docs: 0,
        seed: 3,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn open(log: &std::path::Path) -> Store {
    let b = bundle();
    let xs = extract_all(&b, &Predictors::ontology_only()).unwrap();
    Store::open(b, xs, log).unwrap()
}

fn snapshot(store: &Store) -> (Vec<CurationItem>, Stats, Vec<ExportRow>) {
    let (items, _) = store.queue(&QueueFilter::default(), 1, usize::MAX);
    (items, store.stats(), store.export())
}

#[derive(Clone, Debug)]
struct Op {
    item: usize,
    correct: Option<usize>,
    event: u8,
    reviewer: u8,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        (any::<prop::sample::Index>(), prop::option::of(0usize..8), 0u8..12, 0u8..3).prop_map(|(i, c, e, r)| Op {
            item: i.index(usize::MAX),
            correct: c,
            event: e,
            reviewer: r,
        }),
        0..25,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replay_rebuilds_state_and_event_ids_apply_once(ops in ops()) {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let store = open(&log);
        let (items, _) = store.queue(&QueueFilter::default(), 1, usize::MAX);
        let mut seen = BTreeSet::new();
        for op in &ops {
            let item = &items[op.item % items.len()];
            let classes = &store.label_space(item.attribute).classes;
            let req = VerdictRequest {
                event_id: format!("e{}", op.event),
                verdict: if op.correct.is_some() { VerdictKind::Correct } else { VerdictKind::Accept },
                corrected_label: op.correct.map(|c| classes[c % classes.len()].clone()),
            };
            let before = store.event_count();
            let first = !seen.contains(&req.event_id);
            match store.verdict(&item.extraction_id, &format!("r{}", op.reviewer), req.clone()) {
                Ok(_) => {
                    prop_assert_eq!(store.event_count(), before + usize::from(first));
                    seen.insert(req.event_id);
                }
                Err(_) => prop_assert_eq!(store.event_count(), before),
            }
        }
        let lines = std::fs::read_to_string(&log).unwrap_or_default().lines().count();
        prop_assert_eq!(lines, seen.len());
        let reopened = open(&log);
        prop_assert_eq!(snapshot(&store), snapshot(&reopened));
    }
}
