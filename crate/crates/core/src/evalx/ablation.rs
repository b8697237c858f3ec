use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::corpus::{AttributeKind, DocKind};
use crate::error::{Error, Result};
use crate::textproc::{AssembleOptions, Window};
use crate::train::AbstractionTask;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub kinds: Vec<DocKind>,
    pub window: Window,
}

impl AblationVariant {
    pub fn new(kinds: &[DocKind], window: Window) -> Self {
        let names: Vec<&str> = kinds.iter().map(|k| k.short()).collect();
        Self {
            name: format!("{}@{window}", names.join("+")),
            kinds: kinds.to_vec(),
            window,
        }
    }
}

/// Fixed inputs shared by every variant.
pub type AblationSetup<'a> = AbstractionTask<'a>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub report: MetricsReport,
    pub best_epoch: usize,
    pub best_dev_metric: f64,
}

/// `later - earlier` for a pair of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub earlier: String,
    pub later: String,
    pub delta_auprc: f64,
    pub delta_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub attribute: AttributeKind,
    pub rows: Vec<AblationRow>,
    pub deltas: Vec<PairDelta>,
}

/// Trains and evaluates every variant with identical seeds and splits.
pub fn run_ablation(setup: &AblationSetup<'_>, variants: &[AblationVariant]) -> Result<AblationResult> {
    if variants.len() < 2 {
        return Err(Error::config("variants", "an ablation needs at least two variants"));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let options = AssembleOptions {
            window: v.window,
            kinds: v.kinds.clone(),
            max_sentences: setup.train_config.max_sentences,
            ..AssembleOptions::default()
        };
        log::info!("ablation variant {}", v.name);
        let run = setup.run(&options)?;
        rows.push(AblationRow {
            variant: v.clone(),
            report: run.report,
            best_epoch: run.history.best_epoch,
            best_dev_metric: run.history.best_dev_metric,
        });
    }
    let mut deltas = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            deltas.push(PairDelta {
                earlier: rows[i].variant.name.clone(),
                later: rows[j].variant.name.clone(),
                delta_auprc: rows[j].report.auprc - rows[i].report.auprc,
                delta_auroc: rows[j].report.auroc - rows[i].report.auroc,
            });
        }
    }
    Ok(AblationResult {
        attribute: setup.space.attribute,
        rows,
        deltas,
    })
}

/// Columns: variant, kinds, window, auroc, auprc, accuracy, n_instances, delta_auprc (vs. first row).
pub fn ablation_tsv(result: &AblationResult) -> String {
    let mut out = String::from("variant\tkinds\twindow\tauroc\tauprc\taccuracy\tn_instances\tdelta_auprc\n");
    let base = result.rows.first().map_or(0.0, |r| r.report.auprc);
    for r in &result.rows {
        let kinds: Vec<&str> = r.variant.kinds.iter().map(|k| k.short()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{:+.4}\n",
            r.variant.name,
            kinds.join(","),
            r.variant.window,
            r.report.auroc,
            r.report.auprc,
            r.report.accuracy,
            r.report.n_instances,
            r.report.auprc - base
        ));
    }
    out
}
