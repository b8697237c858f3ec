use serde::{Deserialize, Serialize};

use super::metrics::f1;
use crate::error::{Error, Result};

/// Days before and after diagnosis within which the first positive day counts.
pub const EARLY_TOLERANCE_DAYS: i64 = 7;
pub const LATE_TOLERANCE_DAYS: i64 = 30;

/// Per-day scores for one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientDayScores {
    pub patient_id: String,
    /// Registry diagnosis day, `None` for patients without a registry record.
    pub diagnosis_day: Option<i64>,
    pub days: Vec<(i64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TruePositive,
    /// Registry patient never flagged, or first flagged after the window.
    FalseNegative,
    /// Registry patient first flagged before the window: counted as FP and FN.
    EarlyFalsePositive,
    FalsePositive,
    TrueNegative,
}

impl Verdict {
    pub fn is_correct(self) -> bool {
        matches!(self, Verdict::TruePositive | Verdict::TrueNegative)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientVerdict {
    pub patient_id: String,
    pub first_positive_day: Option<i64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFindingOutcome {
    pub threshold: f64,
    /// Sorted by patient id.
    pub verdicts: Vec<PatientVerdict>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Patient-level case-finding evaluation.
///
/// A registry patient is found when the first day scoring at or above
/// `threshold` lies within `[diagnosis - 7, diagnosis + 30]`. A patient without
/// a registry record is correct when no day reaches the threshold.
pub fn casefinding_patient_eval(patients: &[PatientDayScores], threshold: f64) -> Result<CaseFindingOutcome> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold", format!("{threshold} is not in (0, 1)")));
    }
    let mut verdicts: Vec<PatientVerdict> = patients
        .iter()
        .map(|p| {
            let first = p.days.iter().filter(|(_, s)| *s >= threshold).map(|(d, _)| *d).min();
            let verdict = match (p.diagnosis_day, first) {
                (Some(_), None) => Verdict::FalseNegative,
                (Some(dx), Some(day)) if day < dx - EARLY_TOLERANCE_DAYS => Verdict::EarlyFalsePositive,
                (Some(dx), Some(day)) if day > dx + LATE_TOLERANCE_DAYS => Verdict::FalseNegative,
                (Some(_), Some(_)) => Verdict::TruePositive,
                (None, None) => Verdict::TrueNegative,
                (None, Some(_)) => Verdict::FalsePositive,
            };
            PatientVerdict {
                patient_id: p.patient_id.clone(),
                first_positive_day: first,
                verdict,
            }
        })
        .collect();
    verdicts.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let count = |v: Verdict| verdicts.iter().filter(|x| x.verdict == v).count();
    let early = count(Verdict::EarlyFalsePositive);
    let tp = count(Verdict::TruePositive);
    let fp = count(Verdict::FalsePositive) + early;
    let fn_ = count(Verdict::FalseNegative) + early;
    let tn = count(Verdict::TrueNegative);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(CaseFindingOutcome {
        threshold,
        verdicts,
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

/// Threshold in `candidates` with the best F1; ties keep the smallest threshold.
pub fn tune_threshold(patients: &[PatientDayScores], candidates: &[f64]) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &t in candidates {
        let f = casefinding_patient_eval(patients, t)?.f1;
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((t, f));
        }
    }
    best.ok_or_else(|| Error::config("threshold", "no candidate thresholds"))
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}
