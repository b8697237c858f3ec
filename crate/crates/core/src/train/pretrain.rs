use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix;
use crate::corpus::{ClinicalDocument, PoolDocument};
use crate::error::{Error, Result};
use crate::model::{mlm_corrupt, Dropout, Model};
use crate::numcore::{Adam, AdamConfig, Gradients};
use crate::par;
use crate::textproc::{assemble_tokenized, tokenize_document, AssembleOptions, TokenSequence, Vocab, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_rate: f64,
    /// Sentences kept per pool document (the most recent ones).
    pub max_sentences: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            lr: 1e-3,
            mask_rate: 0.15,
            max_sentences: 32,
            seed: 0,
        }
    }
}

pub struct PretrainOutcome {
    pub model: Model<f32>,
    /// Mean masked-token loss per step.
    pub losses: Vec<f64>,
}

/// Pool documents assembled the same way as classifier inputs, one per document.
pub fn pool_sequences(pool: &[PoolDocument], vocab: &Vocab, max_sentences: usize) -> Result<Vec<TokenSequence>> {
    let opts = AssembleOptions {
        window: Window { start: 0, end: 0 },
        max_sentences,
        ..AssembleOptions::default()
    };
    let built = par::map(pool, |d| {
        let doc = ClinicalDocument {
            doc_id: d.doc_id.clone(),
            patient_id: String::new(),
            kind: d.kind,
            date: 0,
            text: d.text.clone(),
        };
        let tokenized = tokenize_document(&doc, vocab);
        assemble_tokenized(&d.doc_id, std::slice::from_ref(&tokenized), 0, &opts, None)
    });
    let mut out = Vec::with_capacity(built.len());
    for b in built {
        match b {
            Ok(s) => out.push(s),
            Err(Error::EmptyInput { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Masked-token pretraining of the encoder on unlabeled pool documents.
pub fn pretrain_encoder(
    config: &PretrainConfig,
    mut model: Model<f32>,
    pool: &[PoolDocument],
    vocab: &Vocab,
) -> Result<PretrainOutcome> {
    if pool.is_empty() {
        return Err(Error::Data("pretraining pool is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let seqs = pool_sequences(pool, vocab, config.max_sentences)?;
    if seqs.is_empty() {
        return Err(Error::Data("pretraining pool has no usable text".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.steps);
    let started = Instant::now();
    let rate = model.config.dropout_rate;
    for step in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..seqs.len())).collect();
        let jobs: Vec<(usize, usize)> = batch.into_iter().enumerate().collect();
        let results = par::map(&jobs, |&(k, i)| {
            let seed = mix(config.seed, step as u64, k as u64);
            let seq = &seqs[i];
            let corrupted = mlm_corrupt(&seq.ids, model.config.vocab_size, config.mask_rate, seed)?;
            let mut drng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut dropout = (rate > 0.0).then(|| Dropout { rate, rng: &mut drng });
            model.mlm_loss_and_grads(&corrupted, &seq.sentences, &mut dropout)
        });
        let mut total = Gradients::empty(model.params.len());
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for r in results {
            let (l, g) = r?;
            if let Some(g) = g {
                // weight each sequence by its number of targets
                let mut g = g;
                g.scale(l.count as f32);
                total.accumulate(&g);
            }
            loss_sum += l.loss * l.count as f64;
            count += l.count;
        }
        if count == 0 {
            losses.push(0.0);
            continue;
        }
        total.scale(1.0 / count as f32);
        adam.step(&mut model.params, &total);
        losses.push(loss_sum / count as f64);
        if (step + 1) % 100 == 0 {
            log::info!(
                "pretrain step {}: loss {:.4} ({:.1}s)",
                step + 1,
                losses[step],
                started.elapsed().as_secs_f64()
            );
        }
    }
    Ok(PretrainOutcome { model, losses })
}
