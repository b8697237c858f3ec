//! Synthetic EMR corpus with cancer-registry labels and planted evidence.
//!
//! The generator is also the ground-truth oracle: every evidence sentence is
//! rendered from a structured [`Fact`](templates::Fact), and the facts can be
//! replayed to decide which documents entail which registry label.

mod catalog;
mod folds;
mod generate;
mod io;
mod stats;
pub mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use catalog::{histology_catalog, site_catalog, HistologyEntry, Organ, SiteEntry};
pub use folds::{parse_fold_range, split_folds, FoldAssignment, SplitSets};
pub use generate::{generate_corpus, generate_corpus_traced, CorpusTrace, DocTrace, PatientTrace, PlantedSentence};
pub use io::{load_corpus, read_json, read_jsonl, write_corpus, write_json, write_jsonl};
pub use stats::{corpus_stats, CorpusStats};

use crate::error::{Error, Result};

pub const NOT_DOCUMENTED: &str = "not-documented";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Site,
    Histology,
    ClinicalT,
    ClinicalN,
    ClinicalM,
    PathT,
    PathN,
    PathM,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 8] = [
        AttributeKind::Site,
        AttributeKind::Histology,
        AttributeKind::ClinicalT,
        AttributeKind::ClinicalN,
        AttributeKind::ClinicalM,
        AttributeKind::PathT,
        AttributeKind::PathN,
        AttributeKind::PathM,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Site => "site",
            AttributeKind::Histology => "histology",
            AttributeKind::ClinicalT => "clinical_t",
            AttributeKind::ClinicalN => "clinical_n",
            AttributeKind::ClinicalM => "clinical_m",
            AttributeKind::PathT => "path_t",
            AttributeKind::PathN => "path_n",
            AttributeKind::PathM => "path_m",
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        AttributeKind::ALL
            .into_iter()
            .find(|a| a.as_str() == norm || a.as_str().replace('_', "") == norm)
            .ok_or_else(|| Error::config("attribute", format!("unknown attribute '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    Pathology,
    Radiology,
    Operative,
}

impl DocKind {
    pub const ALL: [DocKind; 3] = [DocKind::Pathology, DocKind::Radiology, DocKind::Operative];

    pub fn short(self) -> &'static str {
        match self {
            DocKind::Pathology => "path",
            DocKind::Radiology => "rad",
            DocKind::Operative => "op",
        }
    }
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for DocKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "path" | "pathology" => Ok(DocKind::Pathology),
            "rad" | "radiology" => Ok(DocKind::Radiology),
            "op" | "operative" => Ok(DocKind::Operative),
            other => Err(Error::config("kinds", format!("unknown document kind '{other}'"))),
        }
    }
}

/// Parses a comma-separated kind list such as `path,rad,op`.
pub fn parse_kinds(s: &str) -> Result<Vec<DocKind>> {
    let mut kinds: Vec<DocKind> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(Error::config("kinds", "at least one document kind is required"));
    }
    Ok(kinds)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalDocument {
    pub doc_id: String,
    pub patient_id: String,
    pub kind: DocKind,
    pub date: i64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub patient_id: String,
    pub diagnosis_date: i64,
    pub labels: BTreeMap<AttributeKind, String>,
}

impl RegistryRecord {
    pub fn label(&self, attribute: AttributeKind) -> &str {
        self.labels.get(&attribute).map_or(NOT_DOCUMENTED, String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub documents: Vec<ClinicalDocument>,
    pub registry: Option<RegistryRecord>,
}

impl Patient {
    pub fn is_cancer(&self) -> bool {
        self.registry.is_some()
    }

    pub fn document(&self, doc_id: &str) -> Option<&ClinicalDocument> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Distinct days carrying at least one document, ascending.
    pub fn document_days(&self) -> Vec<i64> {
        let mut days: Vec<i64> = self.documents.iter().map(|d| d.date).collect();
        days.dedup();
        days
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub attribute: AttributeKind,
    pub classes: Vec<String>,
}

impl LabelSpace {
    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == code)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub doc_id: String,
    pub attribute: AttributeKind,
    pub char_start: usize,
    pub char_end: usize,
    pub sentence_index: usize,
}

/// Unlabeled note for encoder pretraining.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolDocument {
    pub doc_id: String,
    pub kind: DocKind,
    pub text: String,
}

/// Class code → surface aliases, per attribute.
pub type AliasLexicon = BTreeMap<AttributeKind, BTreeMap<String, Vec<String>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_cancer_patients: usize,
    pub n_control_patients: usize,
    pub n_site_classes: usize,
    pub n_histology_classes: usize,
    /// Fraction of cancer patients whose tumor location is reported only in radiology.
    pub cross_doc_fraction: f64,
    pub negation_rate: f64,
    pub variation_rate: f64,
    /// Fraction of cross-document breast and lung cases whose radiology sentence
    /// describes a benign and a suspicious lesion together.
    pub compound_finding_rate: f64,
    pub docs_per_patient: (usize, usize),
    pub pre_diagnosis_history_days: (i64, i64),
    /// Fraction of resections performed 31-90 days after diagnosis.
    pub resection_late_fraction: f64,
    pub resection_rate: f64,
    pub clinical_undocumented_rate: f64,
    pub prediagnostic_suspicion_rate: f64,
    pub pretrain_pool_docs: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_cancer_patients: 2000,
            n_control_patients: 500,
            n_site_classes: 24,
            n_histology_classes: 30,
            cross_doc_fraction: 0.5,
            negation_rate: 0.3,
            variation_rate: 0.3,
            compound_finding_rate: 0.5,
            docs_per_patient: (3, 10),
            pre_diagnosis_history_days: (60, 720),
            resection_late_fraction: 0.6,
            resection_rate: 0.8,
            clinical_undocumented_rate: 0.15,
            prediagnostic_suspicion_rate: 0.6,
            pretrain_pool_docs: 2000,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("cross_doc_fraction", self.cross_doc_fraction),
            ("negation_rate", self.negation_rate),
            ("variation_rate", self.variation_rate),
            ("compound_finding_rate", self.compound_finding_rate),
            ("resection_late_fraction", self.resection_late_fraction),
            ("resection_rate", self.resection_rate),
            ("clinical_undocumented_rate", self.clinical_undocumented_rate),
            ("prediagnostic_suspicion_rate", self.prediagnostic_suspicion_rate),
        ];
        for (field, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, format!("{p} is not a probability")));
            }
        }
        if self.n_cancer_patients == 0 {
            return Err(Error::config("n_cancer_patients", "must be at least 1"));
        }
        if self.n_control_patients == 0 {
            return Err(Error::config("n_control_patients", "must be at least 1"));
        }
        let sites = site_catalog().len();
        if self.n_site_classes < 2 || self.n_site_classes > 310 {
            return Err(Error::config("n_site_classes", "must be in 2..=310"));
        }
        if self.n_site_classes > sites {
            return Err(Error::config(
                "n_site_classes",
                format!("the built-in catalog has {sites} evidenced sites"),
            ));
        }
        let hist = histology_catalog().len();
        if self.n_histology_classes < 2 || self.n_histology_classes > 556 {
            return Err(Error::config("n_histology_classes", "must be in 2..=556"));
        }
        if self.n_histology_classes > hist {
            return Err(Error::config(
                "n_histology_classes",
                format!("the built-in catalog has {hist} evidenced morphologies"),
            ));
        }
        let (lo, hi) = self.docs_per_patient;
        if lo < 3 || lo > hi {
            return Err(Error::config("docs_per_patient", "need 3 <= min <= max"));
        }
        let (a, b) = self.pre_diagnosis_history_days;
        if a <= 30 || a > b {
            return Err(Error::config("pre_diagnosis_history_days", "need 30 < min <= max"));
        }
        Ok(())
    }
}

/// Everything the generator emits.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusBundle {
    pub config: GeneratorConfig,
    pub patients: Vec<Patient>,
    pub label_spaces: Vec<LabelSpace>,
    pub lexicon: AliasLexicon,
    pub evidence: Vec<EvidenceSpan>,
    pub pretrain_pool: Vec<PoolDocument>,
}

impl CorpusBundle {
    pub fn label_space(&self, attribute: AttributeKind) -> &LabelSpace {
        self.label_spaces
            .iter()
            .find(|s| s.attribute == attribute)
            .expect("every attribute has a label space")
    }

    pub fn patient(&self, patient_id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.patient_id == patient_id)
    }

    pub fn evidence_for<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a EvidenceSpan> + 'a {
        self.evidence.iter().filter(move |e| e.doc_id == doc_id)
    }
}
