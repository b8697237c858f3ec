use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regabstract_core::evalx::*;
use regabstract_core::Error;

fn pair_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Mean of plain AP over every ranking consistent with the scores.
fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let (mut total, mut count) = (0.0, 0.0);
    for perm in permutations(scores.len()) {
        if perm.windows(2).any(|w| scores[w[0]] < scores[w[1]]) {
            continue;
        }
        let (mut hits, mut ap) = (0.0, 0.0);
        for (rank, &i) in perm.iter().enumerate() {
            if labels[i] {
                hits += 1.0;
                ap += hits / (rank + 1) as f64;
            }
        }
        total += ap / positives;
        count += 1.0;
    }
    total / count
}

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, levels: u32) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=max_n);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

#[test]
fn worked_examples() {
    let auroc = auroc_binary(&[0.9, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
    assert_eq!(auroc, 0.75);
    let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn auroc_matches_pairwise_oracle_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (s, l) = random_instance(&mut rng, 40, 6);
        let got = auroc_binary(&s, &l).unwrap();
        assert!((got - pair_auroc(&s, &l)).abs() <= 1e-12, "{s:?} {l:?}");
    }
}

#[test]
fn average_precision_matches_permutation_oracle_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let (s, l) = random_instance(&mut rng, 7, 3);
        let got = average_precision(&s, &l).unwrap();
        assert!((got - brute_ap(&s, &l)).abs() <= 1e-12, "{s:?} {l:?}: {got} vs {}", brute_ap(&s, &l));
    }
}

#[test]
fn average_precision_without_ties_is_plain_ap() {
    let s = [0.1, 0.5, 0.3, 0.9, 0.7];
    let l = [false, true, true, false, true];
    assert!((average_precision(&s, &l).unwrap() - brute_ap(&s, &l)).abs() < 1e-15);
}

#[test]
fn single_class_is_undefined() {
    assert!(matches!(auroc_binary(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(average_precision(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn macro_average_matches_per_class_oracle() {
    let probs = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.2, 0.5, 0.3],
        vec![0.1, 0.1, 0.8],
        vec![0.4, 0.4, 0.2],
        vec![0.3, 0.3, 0.4],
        vec![0.5, 0.1, 0.4],
    ];
    let labels = [0, 1, 2, 1, 2, 0];
    for (metric, oracle) in [(Metric::Auroc, pair_auroc as fn(&[f64], &[bool]) -> f64), (Metric::Auprc, brute_ap)] {
        let expected: f64 = (0..3)
            .map(|c| {
                let s: Vec<f64> = probs.iter().map(|r| r[c]).collect();
                let l: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                oracle(&s, &l)
            })
            .sum::<f64>()
            / 3.0;
        let got = macro_ovr(metric, &probs, &labels).unwrap();
        assert!((got.value - expected).abs() <= 1e-12);
        assert_eq!(got.per_class.len(), 3);
    }
}

#[test]
fn absent_classes_are_left_out_of_the_macro_mean() {
    let probs = vec![vec![0.8, 0.1, 0.1], vec![0.3, 0.6, 0.1]];
    let got = macro_ovr(Metric::Auprc, &probs, &[0, 1]).unwrap();
    assert_eq!(got.per_class.iter().map(|(c, _)| *c).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(got.value, 1.0);
}

#[test]
fn report_counts_instances() {
    let probs = vec![vec![0.8, 0.2], vec![0.3, 0.7], vec![0.6, 0.4]];
    let names = vec!["a".to_string(), "b".to_string()];
    let r = evaluate_multiclass(&probs, &[0, 1, 1], &names).unwrap();
    assert_eq!(r.n_instances, 3);
    assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.averaging, AVERAGING);
}

fn day_scores(id: &str, dx: Option<i64>, days: &[(i64, f64)]) -> PatientDayScores {
    PatientDayScores {
        patient_id: id.into(),
        diagnosis_day: dx,
        days: days.to_vec(),
    }
}

#[test]
fn casefinding_counts() {
    let patients = vec![
        day_scores("a", Some(100), &[(100, 0.9)]),
        day_scores("b", Some(100), &[(100, 0.2)]),
        day_scores("c", None, &[(10, 0.8)]),
        day_scores("d", None, &[(10, 0.1)]),
    ];
    let out = casefinding_patient_eval(&patients, 0.5).unwrap();
    assert_eq!((out.tp, out.fp, out.fn_, out.tn), (1, 1, 1, 1));
    assert!((out.f1 - 0.5).abs() < 1e-15);
    assert!(casefinding_patient_eval(&patients, 1.0).is_err());
    assert!(casefinding_patient_eval(&patients, 0.0).is_err());
}

#[test]
fn tuned_threshold_is_the_best_grid_point() {
    let patients = vec![
        day_scores("a", Some(100), &[(100, 0.62)]),
        day_scores("b", None, &[(10, 0.55)]),
        day_scores("c", Some(50), &[(49, 0.9)]),
    ];
    let grid = default_threshold_grid();
    let (t, f) = tune_threshold(&patients, &grid).unwrap();
    let best = grid
        .iter()
        .map(|&t| casefinding_patient_eval(&patients, t).unwrap().f1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(f, best);
    assert_eq!(casefinding_patient_eval(&patients, t).unwrap().f1, f);
    assert!((t - 0.6).abs() < 1e-12);
}

fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..5, any::<bool>()), 2..30)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| (v.iter().map(|x| x.0 as f64 / 4.0).collect(), v.iter().map(|x| x.1).collect()))
}

proptest! {
    #[test]
    fn auroc_is_symmetric_under_score_negation((s, l) in arb_instance()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = auroc_binary(&s, &l).unwrap();
        let b = auroc_binary(&neg, &l).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_instance_order((s, l) in arb_instance(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let s2: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let l2: Vec<bool> = idx.iter().map(|&i| l[i]).collect();
        prop_assert!((auroc_binary(&s, &l).unwrap() - auroc_binary(&s2, &l2).unwrap()).abs() < 1e-12);
        prop_assert!((average_precision(&s, &l).unwrap() - average_precision(&s2, &l2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn average_precision_lies_between_prevalence_floor_and_one((s, l) in arb_instance()) {
        let ap = average_precision(&s, &l).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-12);
    }

    #[test]
    fn casefinding_is_patient_order_invariant(flags in prop::collection::vec((any::<bool>(), 0i64..200, 0u8..10), 1..20)) {
        let patients: Vec<PatientDayScores> = flags
            .iter()
            .enumerate()
            .map(|(i, &(reg, day, s))| day_scores(&format!("p{i:02}"), reg.then_some(100), &[(day, s as f64 / 10.0)]))
            .collect();
        let mut rev = patients.clone();
        rev.reverse();
        let a = casefinding_patient_eval(&patients, 0.5).unwrap();
        let b = casefinding_patient_eval(&rev, 0.5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn raising_the_threshold_never_adds_flags(flags in prop::collection::vec((0i64..200, 0u8..10), 1..20)) {
        let patients: Vec<PatientDayScores> = flags
            .iter()
            .enumerate()
            .map(|(i, &(day, s))| day_scores(&format!("p{i:02}"), None, &[(day, s as f64 / 10.0)]))
            .collect();
        let lo = casefinding_patient_eval(&patients, 0.3).unwrap();
        let hi = casefinding_patient_eval(&patients, 0.7).unwrap();
        prop_assert!(hi.fp <= lo.fp);
    }
}
