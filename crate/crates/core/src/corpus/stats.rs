use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttributeKind, DocKind, Patient, NOT_DOCUMENTED};
use crate::textproc::{assemble_input, AssembleOptions, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_patients: usize,
    pub n_cancer: usize,
    pub n_control: usize,
    pub documents_per_kind: BTreeMap<DocKind, usize>,
    pub class_histograms: BTreeMap<AttributeKind, BTreeMap<String, usize>>,
    /// Assembled lengths over cancer patients, ascending. Empty without a vocabulary.
    pub assembled_lengths: Vec<usize>,
    pub median_assembled_length: Option<f64>,
}

fn median(sorted: &[usize]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

/// Summarizes a corpus. Lengths are measured on inputs assembled around the
/// diagnosis date with `options`, when a vocabulary is supplied.
pub fn corpus_stats(patients: &[Patient], vocab: Option<(&Vocab, &AssembleOptions)>) -> CorpusStats {
    let mut documents_per_kind: BTreeMap<DocKind, usize> = DocKind::ALL.iter().map(|&k| (k, 0)).collect();
    let mut class_histograms: BTreeMap<AttributeKind, BTreeMap<String, usize>> = BTreeMap::new();
    let mut lengths = Vec::new();
    let mut n_cancer = 0;
    for p in patients {
        for d in &p.documents {
            *documents_per_kind.entry(d.kind).or_default() += 1;
        }
        let Some(reg) = &p.registry else { continue };
        n_cancer += 1;
        for attr in AttributeKind::ALL {
            let label = reg.labels.get(&attr).map_or(NOT_DOCUMENTED, String::as_str);
            *class_histograms.entry(attr).or_default().entry(label.to_string()).or_default() += 1;
        }
        if let Some((v, opts)) = vocab {
            if let Ok(seq) = assemble_input(p, reg.diagnosis_date, opts, v, None) {
                lengths.push(seq.len());
            }
        }
    }
    lengths.sort_unstable();
    CorpusStats {
        n_patients: patients.len(),
        n_cancer,
        n_control: patients.len() - n_cancer,
        documents_per_kind,
        class_histograms,
        median_assembled_length: median(&lengths),
        assembled_lengths: lengths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClinicalDocument;

    #[test]
    fn kind_histogram_includes_zero_kinds() {
        let doc = |i: usize, kind| ClinicalDocument {
            doc_id: format!("P-D{i:02}"),
            patient_id: "P".into(),
            kind,
            date: i as i64,
            text: "x.".into(),
        };
        let p = Patient {
            patient_id: "P".into(),
            documents: vec![doc(0, DocKind::Pathology), doc(1, DocKind::Pathology), doc(2, DocKind::Radiology)],
            registry: None,
        };
        let s = corpus_stats(&[p], None);
        assert_eq!(s.documents_per_kind[&DocKind::Pathology], 2);
        assert_eq!(s.documents_per_kind[&DocKind::Radiology], 1);
        assert_eq!(s.documents_per_kind[&DocKind::Operative], 0);
        assert_eq!((s.n_cancer, s.n_control), (0, 1));
        assert_eq!(s.median_assembled_length, None);
    }

    #[test]
    fn median_of_even_count_averages() {
        assert_eq!(median(&[1, 3]), Some(2.0));
        assert_eq!(median(&[1, 3, 9]), Some(3.0));
    }
}
