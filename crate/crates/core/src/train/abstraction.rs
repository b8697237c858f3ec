use std::collections::BTreeSet;

use super::{build_abstraction_dataset, predict_all, train_model, AbstractionExample, History, TrainConfig};
use crate::corpus::{LabelSpace, Patient, SplitSets};
use crate::error::Result;
use crate::evalx::{evaluate_multiclass, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::numcore::ParamStore;
use crate::textproc::{AssembleOptions, Vocab};

/// Patients whose ids are listed, in corpus order.
pub fn select_patients(patients: &[Patient], ids: &[String]) -> Vec<Patient> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    patients.iter().filter(|p| wanted.contains(p.patient_id.as_str())).cloned().collect()
}

pub fn evaluate_abstraction(model: &Model<f32>, examples: &[AbstractionExample], space: &LabelSpace) -> Result<MetricsReport> {
    let probs = predict_all(model, examples)?;
    let labels: Vec<usize> = examples.iter().map(|x| x.label).collect();
    evaluate_multiclass(&probs, &labels, &space.classes)
}

pub struct AbstractionRun {
    pub model: Model<f32>,
    pub history: History,
    pub test: Vec<AbstractionExample>,
    pub report: MetricsReport,
}

/// Everything one abstraction experiment needs besides its input options.
#[derive(Clone)]
pub struct AbstractionTask<'a> {
    pub patients: &'a [Patient],
    pub splits: &'a SplitSets,
    pub space: &'a LabelSpace,
    pub vocab: &'a Vocab,
    /// Template; vocabulary size and class count are filled in per task.
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub pretrained: Option<&'a ParamStore<f32>>,
}

impl AbstractionTask<'_> {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab.len(),
            n_classes: self.space.len(),
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

    /// Builds train/dev/test examples with `options`, trains, and scores the test split.
    pub fn run(&self, options: &AssembleOptions) -> Result<AbstractionRun> {
        self.splits.check_disjoint()?;
        let build = |ids: &[String]| build_abstraction_dataset(&select_patients(self.patients, ids), self.space, options, self.vocab);
        let (train, dev, test) = (build(&self.splits.train)?, build(&self.splits.dev)?, build(&self.splits.test)?);
        let outcome = train_model(&self.train_config, self.fresh_model()?, &train, &dev)?;
        let report = evaluate_abstraction(&outcome.model, &test, self.space)?;
        Ok(AbstractionRun {
            model: outcome.model,
            history: outcome.history,
            test,
            report,
        })
    }
}
