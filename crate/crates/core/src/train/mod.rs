//! Dataset construction from patient-level supervision and the training loops.

mod abstraction;
mod cache;
mod casefinding;
mod dataset;
mod pretrain;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use abstraction::{evaluate_abstraction, select_patients, AbstractionRun, AbstractionTask};
pub use casefinding::{score_patient_days, CaseFindingRun, CaseFindingTask};
pub use cache::{corpus_hash, dataset_cache_key, load_examples, save_examples};
pub use dataset::{
    build_abstraction_dataset, build_casefinding_dataset, patient_day_sequences, AbstractionExample, CaseFindingConfig,
    CaseFindingExample, CaseFindingScheme, NegativeKind,
};
pub use pretrain::{pool_sequences, pretrain_encoder, PretrainConfig, PretrainOutcome};

use crate::corpus::DocKind;
use crate::error::{Error, Result};
use crate::evalx::{macro_ovr, Metric};
use crate::model::{Dropout, Model};
use crate::numcore::{Adam, AdamConfig, Gradients};
use crate::par;
use crate::textproc::{TokenSequence, Window};

/// What the training loop needs from an example.
pub trait TrainingExample {
    fn patient_id(&self) -> &str;
    fn sequence(&self) -> &TokenSequence;
    fn label(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    pub window: Window,
    pub kinds: Vec<DocKind>,
    pub max_sentences: usize,
    pub weight_decay: f64,
    /// Global gradient-norm cap applied to each batch.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            patience: 3,
            seed: 0,
            window: Window::default(),
            kinds: DocKind::ALL.to_vec(),
            max_sentences: 256,
            weight_decay: 0.0,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Macro one-vs-rest AUPRC on the dev set.
    pub dev_metric: f64,
    pub improved: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_metric: f64,
}

impl History {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("history", e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev metric.
    pub model: Model<f32>,
    pub history: History,
}

fn patient_set<E: TrainingExample>(xs: &[E]) -> BTreeSet<&str> {
    xs.iter().map(|x| x.patient_id()).collect()
}

/// Refuses to proceed when a patient appears in both sets.
pub fn guard_leakage<E: TrainingExample>(a: &[E], b: &[E]) -> Result<()> {
    let left = patient_set(a);
    if let Some(p) = b.iter().map(|x| x.patient_id()).find(|p| left.contains(p)) {
        return Err(Error::Leakage(p.to_string()));
    }
    Ok(())
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn clip(grads: &mut Gradients<f32>, max_norm: f64, model: &Model<f32>) {
    let mut sq = 0.0f64;
    for id in model.params.ids() {
        if let Some(g) = grads.param(id) {
            sq += g.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
}

/// Mean loss and summed gradients for a batch. Per-example work may run in
/// parallel; the reduction is always in batch order.
pub(crate) fn batch_gradients<E: TrainingExample + Sync>(
    model: &Model<f32>,
    examples: &[E],
    batch: &[usize],
    dropout_seed: u64,
) -> Result<(f64, Gradients<f32>)> {
    let rate = model.config.dropout_rate;
    let results = par::map(batch, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(dropout_seed, i as u64, 1));
        let mut dropout = (rate > 0.0).then(|| Dropout { rate, rng: &mut rng });
        let x = &examples[i];
        let seq = x.sequence();
        model.loss_and_grads(&seq.ids, &seq.sentences, x.label(), &mut dropout)
    });
    let mut total = Gradients::empty(model.params.len());
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l;
        total.accumulate(&g);
    }
    let n = batch.len() as f64;
    total.scale((1.0 / n) as f32);
    Ok((loss / n, total))
}

/// Class probabilities for every example, in order.
pub fn predict_all<E: TrainingExample + Sync>(model: &Model<f32>, examples: &[E]) -> Result<Vec<Vec<f64>>> {
    par::map(examples, |x| model.predict(x.sequence()).map(|p| p.probs))
        .into_iter()
        .collect()
}

/// Macro one-vs-rest AUPRC of `model` on `examples`.
pub fn dev_metric<E: TrainingExample + Sync>(model: &Model<f32>, examples: &[E]) -> Result<f64> {
    let probs = predict_all(model, examples)?;
    let labels: Vec<usize> = examples.iter().map(|x| x.label()).collect();
    Ok(macro_ovr(Metric::Auprc, &probs, &labels)?.value)
}

/// Mini-batch Adam with per-epoch seeded shuffling and early stopping on dev
/// macro AUPRC. Training stops once `max(patience, 1)` consecutive epochs fail
/// to improve on the best dev value, so `patience = 0` stops at the first
/// non-improving epoch.
pub fn train_model<E: TrainingExample + Sync>(
    config: &TrainConfig,
    mut model: Model<f32>,
    train: &[E],
    dev: &[E],
) -> Result<TrainOutcome> {
    config.validate()?;
    guard_leakage(train, dev)?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("training and dev sets must be non-empty".into()));
    }
    if let Some(x) = train.iter().chain(dev).find(|x| x.label() >= model.config.n_classes) {
        return Err(Error::Data(format!(
            "patient {} has label {} but the model has {} classes",
            x.patient_id(),
            x.label(),
            model.config.n_classes
        )));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut history = History {
        best_dev_metric: f64::NEG_INFINITY,
        ..History::default()
    };
    let mut best = model.params.clone();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 0));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let seed = mix(config.seed, epoch as u64, step as u64 + 1);
            let (loss, mut grads) = batch_gradients(&model, train, batch, seed)?;
            if !loss.is_finite() {
                return Err(Error::Data(format!("non-finite training loss at epoch {epoch} step {step}")));
            }
            if let Some(c) = config.grad_clip {
                clip(&mut grads, c, &model);
            }
            adam.step(&mut model.params, &grads);
            loss_sum += loss * batch.len() as f64;
        }
        let metric = dev_metric(&model, dev)?;
        let improved = metric > history.best_dev_metric;
        if improved {
            history.best_dev_metric = metric;
            history.best_epoch = epoch;
            best = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_metric: metric,
            improved,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev macro AUPRC {:.4}{} ({:.1}s)",
            record.train_loss,
            metric,
            if improved { " *" } else { "" },
            record.seconds
        );
        history.epochs.push(record);
        if stale >= config.patience.max(1) {
            break;
        }
    }
    model.params = best;
    Ok(TrainOutcome { model, history })
}
