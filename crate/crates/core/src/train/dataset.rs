use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix, TrainingExample};
use crate::corpus::{AttributeKind, DocKind, LabelSpace, Patient};
use crate::error::{Error, Result};
use crate::par;
use crate::textproc::{assemble_tokenized, tokenize_patient, AssembleOptions, TokenSequence, Vocab, Window};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionExample {
    pub patient_id: String,
    pub attribute: AttributeKind,
    pub label: usize,
    pub sequence: TokenSequence,
}

impl TrainingExample for AbstractionExample {
    fn patient_id(&self) -> &str {
        &self.patient_id
    }

    fn sequence(&self) -> &TokenSequence {
        &self.sequence
    }

    fn label(&self) -> usize {
        self.label
    }
}

/// One example per registry patient, anchored at the diagnosis date.
/// Patients whose window holds no documents are skipped and counted in the log.
pub fn build_abstraction_dataset(
    patients: &[Patient],
    space: &LabelSpace,
    options: &AssembleOptions,
    vocab: &Vocab,
) -> Result<Vec<AbstractionExample>> {
    options.validate()?;
    let attribute = space.attribute;
    let cancer: Vec<&Patient> = patients.iter().filter(|p| p.is_cancer()).collect();
    let built = par::map(&cancer, |p| -> Result<Option<AbstractionExample>> {
        let reg = p.registry.as_ref().expect("filtered to registry patients");
        let code = reg.label(attribute);
        let label = space
            .index_of(code)
            .ok_or_else(|| Error::Data(format!("patient {}: {attribute} label {code} is not in the label space", p.patient_id)))?;
        let docs = tokenize_patient(p, vocab);
        match assemble_tokenized(&p.patient_id, &docs, reg.diagnosis_date, options, Some(attribute)) {
            Ok(sequence) => Ok(Some(AbstractionExample {
                patient_id: p.patient_id.clone(),
                attribute,
                label,
                sequence,
            })),
            Err(Error::EmptyInput { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut out = Vec::with_capacity(built.len());
    let mut skipped = 0;
    for b in built {
        match b? {
            Some(x) => out.push(x),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::info!("{attribute}: skipped {skipped} patients with no documents in window {}", options.window);
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no {attribute} examples: {} registry patients, {skipped} with empty windows",
            cancer.len()
        )));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum CaseFindingScheme {
    /// Negatives come from patients without a registry record only.
    Default,
    /// Adds days of registry patients that precede diagnosis by more than
    /// `hard_cutoff_days`, at most `per_patient_max` per patient.
    HardNegatives { hard_cutoff_days: i64, per_patient_max: usize },
}

impl CaseFindingScheme {
    pub fn hard_negatives() -> Self {
        CaseFindingScheme::HardNegatives {
            hard_cutoff_days: 30,
            per_patient_max: 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CaseFindingScheme::Default => "default",
            CaseFindingScheme::HardNegatives { .. } => "hard_negatives",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFindingConfig {
    pub scheme: CaseFindingScheme,
    pub kinds: Vec<DocKind>,
    /// Document-bearing days sampled from each patient without a registry record.
    pub control_days_per_patient: usize,
    pub max_sentences: usize,
    pub seed: u64,
}

impl Default for CaseFindingConfig {
    fn default() -> Self {
        Self {
            scheme: CaseFindingScheme::Default,
            kinds: DocKind::ALL.to_vec(),
            control_days_per_patient: 3,
            max_sentences: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    None,
    Control,
    Hard,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFindingExample {
    pub patient_id: String,
    pub day: i64,
    pub positive: bool,
    pub negative_kind: NegativeKind,
    pub sequence: TokenSequence,
}

impl TrainingExample for CaseFindingExample {
    fn patient_id(&self) -> &str {
        &self.patient_id
    }

    fn sequence(&self) -> &TokenSequence {
        &self.sequence
    }

    fn label(&self) -> usize {
        usize::from(self.positive)
    }
}

fn day_options(kinds: &[DocKind], max_sentences: usize) -> AssembleOptions {
    AssembleOptions {
        window: Window { start: 0, end: 0 },
        kinds: kinds.to_vec(),
        max_sentences,
        ..AssembleOptions::default()
    }
}

/// Every document-bearing day of a patient (restricted to `kinds`) with the
/// sequence assembled from that day's documents.
pub fn patient_day_sequences(
    patient: &Patient,
    kinds: &[DocKind],
    max_sentences: usize,
    vocab: &Vocab,
) -> Result<Vec<(i64, TokenSequence)>> {
    let docs = tokenize_patient(patient, vocab);
    let opts = day_options(kinds, max_sentences);
    let mut days: Vec<i64> = patient.documents.iter().filter(|d| kinds.contains(&d.kind)).map(|d| d.date).collect();
    days.sort_unstable();
    days.dedup();
    let mut out = Vec::with_capacity(days.len());
    for day in days {
        match assemble_tokenized(&patient.patient_id, &docs, day, &opts, None) {
            Ok(seq) => out.push((day, seq)),
            Err(Error::EmptyInput { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Day-level examples: positives on each registry patient's diagnosis day,
/// negatives from sampled days of patients without a registry record and,
/// under [`CaseFindingScheme::HardNegatives`], early days of registry patients.
pub fn build_casefinding_dataset(
    patients: &[Patient],
    config: &CaseFindingConfig,
    vocab: &Vocab,
) -> Result<Vec<CaseFindingExample>> {
    if config.kinds.is_empty() {
        return Err(Error::config("kinds", "at least one document kind is required"));
    }
    let indexed: Vec<(usize, &Patient)> = patients.iter().enumerate().collect();
    let built = par::map(&indexed, |&(i, p)| -> Result<Vec<CaseFindingExample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, i as u64, 7));
        let days = patient_day_sequences(p, &config.kinds, config.max_sentences, vocab)?;
        let example = |day: i64, seq: &TokenSequence, positive, negative_kind| CaseFindingExample {
            patient_id: p.patient_id.clone(),
            day,
            positive,
            negative_kind,
            sequence: seq.clone(),
        };
        let mut out = Vec::new();
        match &p.registry {
            Some(reg) => {
                if let Some((d, seq)) = days.iter().find(|(d, _)| *d == reg.diagnosis_date) {
                    out.push(example(*d, seq, true, NegativeKind::None));
                }
                if let CaseFindingScheme::HardNegatives {
                    hard_cutoff_days,
                    per_patient_max,
                } = config.scheme
                {
                    let eligible: Vec<&(i64, TokenSequence)> =
                        days.iter().filter(|(d, _)| *d < reg.diagnosis_date - hard_cutoff_days).collect();
                    let k = per_patient_max.min(eligible.len());
                    let mut picked = sample(&mut rng, eligible.len(), k).into_vec();
                    picked.sort_unstable();
                    for j in picked {
                        let (d, seq) = eligible[j];
                        out.push(example(*d, seq, false, NegativeKind::Hard));
                    }
                }
            }
            None => {
                let k = config.control_days_per_patient.min(days.len());
                let mut picked = sample(&mut rng, days.len(), k).into_vec();
                picked.sort_unstable();
                for j in picked {
                    let (d, seq) = &days[j];
                    out.push(example(*d, seq, false, NegativeKind::Control));
                }
            }
        }
        Ok(out)
    });
    let mut out = Vec::new();
    for b in built {
        out.extend(b?);
    }
    let count = |k: NegativeKind| out.iter().filter(|x| !x.positive && x.negative_kind == k).count();
    let positives = out.iter().filter(|x| x.positive).count();
    let (controls, hard) = (count(NegativeKind::Control), count(NegativeKind::Hard));
    log::info!("case finding ({}): {positives} positives, {controls} control negatives, {hard} hard negatives", config.scheme.name());
    if positives == 0 {
        return Err(Error::Data("case finding: no registry patient has documents on the diagnosis day".into()));
    }
    if controls == 0 {
        return Err(Error::Data(format!(
            "case finding: no eligible control days ({} patients without a registry record)",
            patients.iter().filter(|p| !p.is_cancer()).count()
        )));
    }
    if matches!(config.scheme, CaseFindingScheme::HardNegatives { .. }) && hard == 0 {
        return Err(Error::Data("case finding: no registry patient has days before the hard-negative cutoff".into()));
    }
    Ok(out)
}
