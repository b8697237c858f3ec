use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into blocks of equal scores.
fn tie_blocks(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match blocks.last_mut() {
            Some(b) if scores[b[0]] == scores[i] => b.push(i),
            _ => blocks.push(vec![i]),
        }
    }
    blocks
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ordered correctly, counting ties as half.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!("AUROC needs both classes ({p} positive, {n} negative)")));
    }
    // Walk blocks from the lowest score up, counting negatives already passed.
    let mut neg_below = 0usize;
    let mut twice_concordant = 0u128;
    for block in tie_blocks(scores).iter().rev() {
        let bp = block.iter().filter(|&&i| labels[i]).count();
        let bn = block.len() - bp;
        twice_concordant += (2 * bp * neg_below + bp * bn) as u128;
        neg_below += bn;
    }
    Ok(twice_concordant as f64 / (2.0 * p as f64 * n as f64))
}

/// Step-wise average precision, averaged over all orderings of tied scores.
///
/// Without ties this is the mean, over positives in descending-score order, of
/// the precision at each positive's rank. Inside a block of `m` tied items
/// holding `q` positives, position `j` is positive with probability `q/m` and,
/// given that, is preceded by `(j-1)(q-1)/(m-1)` positives of the block in
/// expectation; precision is linear in that count, so the expectation is exact.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count();
    if p == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let mut tp_before = 0.0;
    let mut seen_before = 0.0;
    let mut total = 0.0;
    for block in tie_blocks(scores) {
        let m = block.len() as f64;
        let q = block.iter().filter(|&&i| labels[i]).count() as f64;
        if q > 0.0 {
            let mut sum = 0.0;
            for j in 1..=block.len() {
                let jf = j as f64;
                let earlier = if m > 1.0 { (jf - 1.0) * (q - 1.0) / (m - 1.0) } else { 0.0 };
                sum += (tp_before + earlier + 1.0) / (seen_before + jf);
            }
            total += q / m * sum;
        }
        tp_before += q;
        seen_before += m;
    }
    Ok(total / p as f64)
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy needs equal, non-empty inputs".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Harmonic mean of precision and recall, 0 when either is 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision > 0.0 && recall > 0.0 {
        2.0 / (1.0 / precision + 1.0 / recall)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    Auprc,
}

impl Metric {
    fn binary(self, scores: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            Metric::Auroc => auroc_binary(scores, labels),
            Metric::Auprc => average_precision(scores, labels),
        }
    }
}

/// Per-class one-vs-rest values and their arithmetic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroValue {
    pub value: f64,
    /// `(class index, value)` for every class that entered the mean.
    pub per_class: Vec<(usize, f64)>,
}

/// One-vs-rest `metric` per class with at least one positive, averaged.
/// AUROC additionally skips classes without a negative, where it is undefined.
pub fn macro_ovr(metric: Metric, probs: &[Vec<f64>], labels: &[usize]) -> Result<MacroValue> {
    if probs.len() != labels.len() {
        return Err(Error::Data(format!("{} rows but {} labels", probs.len(), labels.len())));
    }
    let n_classes = probs.first().map_or(0, Vec::len);
    if probs.iter().any(|r| r.len() != n_classes) {
        return Err(Error::Data("probability rows differ in length".into()));
    }
    let mut per_class = Vec::new();
    for c in 0..n_classes {
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let positives = bin.iter().filter(|&&b| b).count();
        if positives == 0 || (metric == Metric::Auroc && positives == bin.len()) {
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        per_class.push((c, metric.binary(&scores, &bin)?));
    }
    if per_class.is_empty() {
        return Err(Error::UndefinedMetric("no class has a positive instance".into()));
    }
    let value = per_class.iter().map(|(_, v)| v).sum::<f64>() / per_class.len() as f64;
    Ok(MacroValue { value, per_class })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub n_positive: usize,
    pub auroc: Option<f64>,
    pub auprc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub n_instances: usize,
    pub averaging: String,
}

pub const AVERAGING: &str = "macro-ovr";

/// Macro one-vs-rest AUROC and AUPRC plus accuracy of the argmax.
pub fn evaluate_multiclass(probs: &[Vec<f64>], labels: &[usize], class_names: &[String]) -> Result<MetricsReport> {
    let auprc = macro_ovr(Metric::Auprc, probs, labels)?;
    let auroc = macro_ovr(Metric::Auroc, probs, labels)?;
    let predicted: Vec<usize> = probs.iter().map(|r| crate::model::argmax(r)).collect();
    let per_class = auprc
        .per_class
        .iter()
        .map(|&(c, ap)| ClassMetrics {
            class: class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
            n_positive: labels.iter().filter(|&&l| l == c).count(),
            auroc: auroc.per_class.iter().find(|(k, _)| *k == c).map(|&(_, v)| v),
            auprc: ap,
        })
        .collect();
    Ok(MetricsReport {
        auroc: auroc.value,
        auprc: auprc.value,
        accuracy: accuracy(&predicted, labels)?,
        per_class,
        n_instances: labels.len(),
        averaging: AVERAGING.to_string(),
    })
}
