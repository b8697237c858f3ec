use super::{build_casefinding_dataset, patient_day_sequences, select_patients, train_model, CaseFindingConfig, CaseFindingExample, History, TrainConfig};
use crate::corpus::{Patient, SplitSets};
use crate::error::Result;
use crate::evalx::{casefinding_patient_eval, default_threshold_grid, tune_threshold, CaseFindingOutcome, PatientDayScores};
use crate::model::{Model, ModelConfig};
use crate::numcore::ParamStore;
use crate::par;
use crate::textproc::Vocab;

/// Positive-class probability for every document-bearing day of each patient.
pub fn score_patient_days(
    model: &Model<f32>,
    patients: &[Patient],
    config: &CaseFindingConfig,
    vocab: &Vocab,
) -> Result<Vec<PatientDayScores>> {
    par::map(patients, |p| -> Result<PatientDayScores> {
        let days = patient_day_sequences(p, &config.kinds, config.max_sentences, vocab)?;
        let mut scored = Vec::with_capacity(days.len());
        for (day, seq) in days {
            scored.push((day, model.predict(&seq)?.probs[1]));
        }
        Ok(PatientDayScores {
            patient_id: p.patient_id.clone(),
            diagnosis_day: p.registry.as_ref().map(|r| r.diagnosis_date),
            days: scored,
        })
    })
    .into_iter()
    .collect()
}

pub struct CaseFindingRun {
    pub model: Model<f32>,
    pub history: History,
    /// Chosen on dev patients by patient-level F1.
    pub threshold: f64,
    pub dev_f1: f64,
    pub test: CaseFindingOutcome,
}

/// Everything a case-finding experiment needs. `patients` holds registry and
/// non-registry patients; the splits cover both.
#[derive(Clone)]
pub struct CaseFindingTask<'a> {
    pub patients: &'a [Patient],
    pub splits: &'a SplitSets,
    pub vocab: &'a Vocab,
    /// Template; vocabulary size is filled in and the class count forced to 2.
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub config: CaseFindingConfig,
    pub pretrained: Option<&'a ParamStore<f32>>,
}

impl CaseFindingTask<'_> {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab.len(),
            n_classes: 2,
            ..self.model_config.clone()
        }
    }

    pub fn fresh_model(&self) -> Result<Model<f32>> {
        let mut model = Model::new(self.model_config(), self.vocab.content_hash())?;
        if let Some(p) = self.pretrained {
            model.load_encoder_params(p)?;
        }
        Ok(model)
    }

    fn examples(&self, ids: &[String]) -> Result<Vec<CaseFindingExample>> {
        build_casefinding_dataset(&select_patients(self.patients, ids), &self.config, self.vocab)
    }

    /// Trains on day examples from the train split, tunes the threshold on dev
    /// patients and evaluates test patients with the patient-level rule.
    pub fn run(&self) -> Result<CaseFindingRun> {
        self.splits.check_disjoint()?;
        let train = self.examples(&self.splits.train)?;
        let dev = self.examples(&self.splits.dev)?;
        let outcome = train_model(&self.train_config, self.fresh_model()?, &train, &dev)?;
        let score = |ids: &[String]| score_patient_days(&outcome.model, &select_patients(self.patients, ids), &self.config, self.vocab);
        let (threshold, dev_f1) = tune_threshold(&score(&self.splits.dev)?, &default_threshold_grid())?;
        let test = casefinding_patient_eval(&score(&self.splits.test)?, threshold)?;
        Ok(CaseFindingRun {
            model: outcome.model,
            history: outcome.history,
            threshold,
            dev_f1,
            test,
        })
    }
}
