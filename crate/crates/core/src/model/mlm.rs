use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dropout, EncoderKind, Model};
use crate::error::{Error, Result};
use crate::numcore::{Gradients, Scalar, Tape};
use crate::textproc::{Vocab, MASK, SPECIAL_TOKENS};

/// A corrupted sequence and the positions whose original ids must be recovered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmBatch {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Selects each non-special position with probability `mask_rate`; selected
/// positions become `[MASK]` 80% of the time, a random learned unit 10%, and
/// stay unchanged 10%.
pub fn mlm_corrupt(ids: &[u32], vocab_size: usize, mask_rate: f64, seed: u64) -> Result<MlmBatch> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::config("mask_rate", format!("{mask_rate} is not in (0, 1)")));
    }
    let first = SPECIAL_TOKENS.len() as u32;
    if vocab_size as u32 <= first {
        return Err(Error::config("vocab_size", "vocabulary has no learned units"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MlmBatch {
        ids: ids.to_vec(),
        positions: Vec::new(),
        targets: Vec::new(),
    };
    for (i, &id) in ids.iter().enumerate() {
        if Vocab::is_special(id) || !rng.random_bool(mask_rate) {
            continue;
        }
        out.positions.push(i);
        out.targets.push(id);
        let roll: f64 = rng.random();
        if roll < 0.8 {
            out.ids[i] = MASK;
        } else if roll < 0.9 {
            out.ids[i] = rng.random_range(first..vocab_size as u32);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlmLoss {
    /// Mean cross-entropy over target positions; 0 when there are none.
    pub loss: f64,
    pub count: usize,
}

impl<T: Scalar> Model<T> {
    fn require_transformer(&self) -> Result<()> {
        match self.config.encoder {
            EncoderKind::TinyTransformer { .. } => Ok(()),
            EncoderKind::ContextFree => Err(Error::Unsupported(
                "masked-token pretraining needs a contextual encoder".into(),
            )),
        }
    }

    /// Masked-token loss with the output projection tied to the embeddings.
    /// Gradients are `None` when there are no targets.
    pub fn mlm_loss_and_grads(
        &self,
        batch: &MlmBatch,
        sentences: &[(usize, usize)],
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<(MlmLoss, Option<Gradients<T>>)> {
        self.require_transformer()?;
        if batch.positions.is_empty() {
            return Ok((MlmLoss { loss: 0.0, count: 0 }, None));
        }
        let mut tape = Tape::with_params(&self.params);
        let (encoded, _) = self.encode(&mut tape, &batch.ids, sentences, dropout)?;
        let rows: Vec<u32> = batch.positions.iter().map(|&p| p as u32).collect();
        let picked = tape.gather_rows(encoded, &rows)?;
        let embed = tape.param(self.embed_id());
        let logits = tape.matmul_t(picked, false, embed, true)?;
        let bias = tape.param(self.mlm_bias().expect("transformer has an MLM bias"));
        let logits = tape.add(logits, bias)?;
        let targets: Vec<usize> = batch.targets.iter().map(|&t| t as usize).collect();
        let loss = tape.cross_entropy(logits, &targets)?;
        let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
        let grads = tape.backward(loss)?;
        Ok((
            MlmLoss {
                loss: value,
                count: targets.len(),
            },
            Some(grads),
        ))
    }

    pub fn mlm_loss(&self, batch: &MlmBatch, sentences: &[(usize, usize)]) -> Result<MlmLoss> {
        self.mlm_loss_and_grads(batch, sentences, &mut None).map(|(l, _)| l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::{CLS, SEP};

    #[test]
    fn specials_are_never_selected() {
        let ids = [CLS, 5, 10, 11, SEP, 12, 13, SEP];
        for seed in 0..2000 {
            let b = mlm_corrupt(&ids, 20, 0.9, seed).unwrap();
            for &p in &b.positions {
                assert!(!Vocab::is_special(ids[p]));
            }
        }
    }

    #[test]
    fn corruption_is_seeded() {
        let ids: Vec<u32> = (8..40).collect();
        let a = mlm_corrupt(&ids, 50, 0.15, 3).unwrap();
        assert_eq!(a, mlm_corrupt(&ids, 50, 0.15, 3).unwrap());
        assert!(mlm_corrupt(&ids, 50, 0.0, 3).is_err());
        assert!(mlm_corrupt(&ids, 50, 1.0, 3).is_err());
    }
}
