//! Comparison systems: alias-lexicon matching and bag-of-words logistic regression.

mod bow;
mod ontology;

pub use bow::{bow_features, bow_predict, bow_train, load_bow, save_bow, words, BowConfig, BowModel, BowOutcome, MAX_WORD_COUNT};
pub use ontology::{alias_count, ontology_predict};

use crate::corpus::{ClinicalDocument, Patient};
use crate::textproc::AssembleOptions;

/// Documents of `patient` whose kind and date fall inside the assembly window
/// around `anchor_day`, sorted by (date, doc_id).
pub fn documents_in_window<'a>(patient: &'a Patient, anchor_day: i64, options: &AssembleOptions) -> Vec<&'a ClinicalDocument> {
    let mut docs: Vec<&ClinicalDocument> = patient
        .documents
        .iter()
        .filter(|d| options.kinds.contains(&d.kind) && options.window.contains(anchor_day, d.date))
        .collect();
    docs.sort_by(|a, b| (a.date, &a.doc_id).cmp(&(b.date, &b.doc_id)));
    docs
}
