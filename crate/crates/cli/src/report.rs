use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use regabstract_core::corpus::AttributeKind;
use regabstract_core::evalx::{AblationResult, CaseFindingOutcome, MetricsReport};
use regabstract_core::textproc::AssembleOptions;

/// Contents of a `metrics.json` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsDoc {
    Abstraction {
        attribute: AttributeKind,
        /// `contextfree`, `transformer`, `ontology` or `bow`.
        method: String,
        split: String,
        options: AssembleOptions,
        report: MetricsReport,
    },
    CaseFinding {
        scheme: String,
        split: String,
        threshold: f64,
        outcome: CaseFindingOutcome,
    },
    Ablation {
        result: AblationResult,
    },
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Markdown tables for a set of metrics documents. Rows keep input order.
pub fn render(docs: &[(String, MetricsDoc)]) -> String {
    let mut out = String::new();
    let abstraction: Vec<_> = docs
        .iter()
        .filter_map(|(src, d)| match d {
            MetricsDoc::Abstraction { attribute, method, split, options, report } => Some((src, attribute, method, split, options, report)),
            _ => None,
        })
        .collect();
    if !abstraction.is_empty() {
        out.push_str("## Abstraction\n\n");
        out.push_str("| attribute | method | split | kinds | window | AUROC | AUPRC | accuracy | n |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for (_, attribute, method, split, options, r) in abstraction {
            let kinds: Vec<&str> = options.kinds.iter().map(|k| k.short()).collect();
            let _ = writeln!(
                out,
                "| {attribute} | {method} | {split} | {} | {} | {} | {} | {} | {} |",
                kinds.join(","),
                options.window,
                pct(r.auroc),
                pct(r.auprc),
                pct(r.accuracy),
                r.n_instances
            );
        }
        out.push('\n');
    }
    let casefinding: Vec<_> = docs
        .iter()
        .filter_map(|(_, d)| match d {
            MetricsDoc::CaseFinding { scheme, split, threshold, outcome } => Some((scheme, split, threshold, outcome)),
            _ => None,
        })
        .collect();
    if !casefinding.is_empty() {
        out.push_str("## Case finding (patient level, first positive day within [-7, 30] of diagnosis)\n\n");
        out.push_str("| scheme | split | threshold | precision | recall | F1 | TP | FP | FN | TN |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        for (scheme, split, threshold, o) in casefinding {
            let _ = writeln!(
                out,
                "| {scheme} | {split} | {threshold:.2} | {} | {} | {} | {} | {} | {} | {} |",
                pct(o.precision),
                pct(o.recall),
                pct(o.f1),
                o.tp,
                o.fp,
                o.fn_,
                o.tn
            );
        }
        out.push('\n');
    }
    for (src, d) in docs {
        let MetricsDoc::Ablation { result } = d else { continue };
        let _ = writeln!(out, "## Ablation: {} ({src})\n", result.attribute);
        out.push_str("| variant | AUROC | AUPRC | accuracy | n | best epoch | delta AUPRC |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        let base = result.rows.first().map_or(0.0, |r| r.report.auprc);
        for r in &result.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {:+.1} |",
                r.variant.name,
                pct(r.report.auroc),
                pct(r.report.auprc),
                pct(r.report.accuracy),
                r.report.n_instances,
                r.best_epoch,
                100.0 * (r.report.auprc - base)
            );
        }
        out.push('\n');
    }
    if out.is_empty() {
        out.push_str("no metrics\n");
    }
    out
}
