//! Hierarchical attention classifier: token embedding, optional per-sentence
//! transformer, word attention, sentence GRU, sentence attention, softmax.

mod checkpoint;
mod layers;
mod mlm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_file_name, decode_checkpoint, decode_params, encode_checkpoint, encode_encoder_checkpoint, load_checkpoint,
    load_encoder_checkpoint, read_checkpoint_header, save_checkpoint, save_encoder_checkpoint, CheckpointHeader, ParamEntry,
    CHECKPOINT_VERSION,
};
pub use layers::{apply_dropout, AttnParams, Dropout, EncoderLayerParams, GruParams};
pub use mlm::{mlm_corrupt, MlmBatch, MlmLoss};

use crate::error::{Error, Result};
use crate::numcore::{softmax, xavier_uniform, Gradients, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::textproc::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EncoderKind {
    ContextFree,
    TinyTransformer { layers: usize, heads: usize, ff_dim: usize },
}

impl EncoderKind {
    pub fn tiny_transformer() -> Self {
        EncoderKind::TinyTransformer {
            layers: 2,
            heads: 4,
            ff_dim: 256,
        }
    }

    /// Short name used in checkpoint file names.
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::ContextFree => "contextfree",
            EncoderKind::TinyTransformer { .. } => "transformer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder: EncoderKind,
    pub gru_hidden: usize,
    pub word_attn_dim: usize,
    pub sent_attn_dim: usize,
    pub n_classes: usize,
    pub bidirectional_sentence_gru: bool,
    pub dropout_rate: f64,
    /// Longest sentence segment the encoder accepts (position table size).
    pub max_sentence_tokens: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, n_classes: usize, encoder: EncoderKind) -> Self {
        Self {
            vocab_size,
            embed_dim: 128,
            encoder,
            gru_hidden: 64,
            word_attn_dim: 64,
            sent_attn_dim: 64,
            n_classes,
            bidirectional_sentence_gru: true,
            dropout_rate: 0.1,
            max_sentence_tokens: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "need at least 2 classes"));
        }
        if self.vocab_size <= crate::textproc::SPECIAL_TOKENS.len() {
            return Err(Error::config("vocab_size", "vocabulary has no learned units"));
        }
        for (field, v) in [
            ("embed_dim", self.embed_dim),
            ("gru_hidden", self.gru_hidden),
            ("word_attn_dim", self.word_attn_dim),
            ("sent_attn_dim", self.sent_attn_dim),
            ("max_sentence_tokens", self.max_sentence_tokens),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must be in [0, 1)"));
        }
        if let EncoderKind::TinyTransformer { layers, heads, ff_dim } = self.encoder {
            if layers == 0 || heads == 0 || ff_dim == 0 {
                return Err(Error::config("encoder", "layers, heads and ff_dim must be positive"));
            }
            if self.embed_dim % heads != 0 {
                return Err(Error::config("embed_dim", format!("{} is not divisible by {heads} heads", self.embed_dim)));
            }
        }
        Ok(())
    }

    /// Width of the sentence-level states.
    pub fn sentence_dim(&self) -> usize {
        if self.bidirectional_sentence_gru {
            2 * self.gru_hidden
        } else {
            self.gru_hidden
        }
    }
}

#[derive(Clone, Debug)]
struct ModelIds {
    embed: ParamId,
    pos: Option<ParamId>,
    emb_ln: Option<(ParamId, ParamId)>,
    layers: Vec<EncoderLayerParams>,
    mlm_bias: Option<ParamId>,
    word_attn: AttnParams,
    gru_fwd: GruParams,
    gru_bwd: Option<GruParams>,
    sent_attn: AttnParams,
    cls_w: ParamId,
    cls_b: ParamId,
}

/// Whether a parameter belongs to the token encoder (embeddings, transformer
/// layers, MLM bias) rather than the classifier stack.
pub fn is_encoder_param(name: &str) -> bool {
    let head = name.split('.').next().unwrap_or(name);
    matches!(head, "embed" | "pos" | "emb_ln" | "mlm")
        || head.strip_prefix("enc").is_some_and(|l| !l.is_empty() && l.bytes().all(|b| b.is_ascii_digit()))
}

/// Class probabilities plus both attention levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub sentence_attention: Vec<f64>,
    /// One list per sentence, aligned with that sentence's token range.
    pub word_attention: Vec<Vec<f64>>,
    pub argmax: usize,
}

/// Tape handles produced by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub encoded: Var,
    pub word_alpha: Var,
    pub sent_alpha: Var,
    pub self_attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    /// Content hash of the vocabulary the embedding rows refer to.
    pub vocab_hash: String,
    ids: ModelIds,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, vocab_hash: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let embed = store.add("embed", layers::embedding(config.vocab_size, d, &mut rng));
        let (mut pos, mut emb_ln, mut mlm_bias, mut enc) = (None, None, None, Vec::new());
        if let EncoderKind::TinyTransformer { layers, ff_dim, .. } = config.encoder {
            pos = Some(store.add("pos", layers::embedding(config.max_sentence_tokens, d, &mut rng)));
            emb_ln = Some((
                store.add("emb_ln.g", Tensor::full(&[1, d], T::one())),
                store.add("emb_ln.b", Tensor::zeros(&[1, d])),
            ));
            for l in 0..layers {
                enc.push(EncoderLayerParams::init(&mut store, &format!("enc{l}"), d, ff_dim, &mut rng));
            }
            mlm_bias = Some(store.add("mlm.b", Tensor::zeros(&[1, config.vocab_size])));
        }
        let word_attn = AttnParams::init(&mut store, "word_attn", d, config.word_attn_dim, &mut rng);
        let gru_fwd = GruParams::init(&mut store, "gru_fwd", d, config.gru_hidden, &mut rng);
        let gru_bwd = config
            .bidirectional_sentence_gru
            .then(|| GruParams::init(&mut store, "gru_bwd", d, config.gru_hidden, &mut rng));
        let h = config.sentence_dim();
        let sent_attn = AttnParams::init(&mut store, "sent_attn", h, config.sent_attn_dim, &mut rng);
        let cls_w = store.add("cls.w", xavier_uniform(h, config.n_classes, &mut rng));
        let cls_b = store.add("cls.b", Tensor::zeros(&[1, config.n_classes]));
        Ok(Self {
            config,
            params: store,
            vocab_hash: vocab_hash.into(),
            ids: ModelIds {
                embed,
                pos,
                emb_ln,
                layers: enc,
                mlm_bias,
                word_attn,
                gru_fwd,
                gru_bwd,
                sent_attn,
                cls_w,
                cls_b,
            },
        })
    }

    /// Rebuilds a model around an existing parameter table, checking that
    /// names and shapes match what `config` would create.
    pub fn from_params(config: ModelConfig, vocab_hash: impl Into<String>, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, vocab_hash)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (id, name, t) in params.iter() {
            let expected_name = model.params.name(id).to_string();
            let expected = model.params.get_mut(id);
            if expected_name != name || expected.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} is {name} {:?}, expected {expected_name} {:?}",
                    id.0,
                    t.shape(),
                    expected.shape()
                )));
            }
            *expected = t.clone();
        }
        Ok(model)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            vocab_hash: self.vocab_hash.clone(),
            ids: self.ids.clone(),
        }
    }

    /// Copies token-encoder parameters (embeddings, transformer layers, MLM
    /// bias) from a pretrained model with the same encoder shape.
    pub fn load_encoder_from(&mut self, pretrained: &Model<T>) -> Result<usize> {
        if pretrained.vocab_hash != self.vocab_hash {
            return Err(Error::Checkpoint("pretrained encoder was built for a different vocabulary".into()));
        }
        self.load_encoder_params(&pretrained.params)
    }

    /// Copies every encoder parameter found in `params`; names must exist here
    /// with the same shape. The caller is responsible for the vocabulary match.
    pub fn load_encoder_params(&mut self, params: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for (_, name, t) in params.iter() {
            if !is_encoder_param(name) {
                continue;
            }
            let id = self
                .params
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("pretrained parameter {name} has no counterpart")))?;
            if self.params.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!("pretrained parameter {name} has shape {:?}", t.shape())));
            }
            *self.params.get_mut(id) = t.clone();
            copied += 1;
        }
        if copied == 0 {
            return Err(Error::Checkpoint("no encoder parameters to load".into()));
        }
        Ok(copied)
    }

    fn check_input(&self, ids: &[u32], sentences: &[(usize, usize)]) -> Result<()> {
        if ids.is_empty() || sentences.is_empty() {
            return Err(Error::Data("empty token sequence".into()));
        }
        let mut prev = 0;
        for &(s, e) in sentences {
            if s < prev || s >= e || e > ids.len() {
                return Err(Error::Data(format!("sentence range {s}..{e} is invalid")));
            }
            if e - s > self.config.max_sentence_tokens {
                return Err(Error::Data(format!(
                    "sentence of {} tokens exceeds the cap of {}",
                    e - s,
                    self.config.max_sentence_tokens
                )));
            }
            prev = e;
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!("token id {bad} is outside the vocabulary")));
        }
        Ok(())
    }

    /// Embeds tokens and, in transformer mode, contextualizes each sentence
    /// independently. Returns `[n_tokens, embed_dim]` and the self-attention nodes.
    pub fn encode(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &[u32],
        sentences: &[(usize, usize)],
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(ids, sentences)?;
        let embed = tape.param(self.ids.embed);
        let mut x = tape.gather_rows(embed, ids)?;
        let EncoderKind::TinyTransformer { heads, .. } = self.config.encoder else {
            return Ok((x, Vec::new()));
        };
        let mut positions = vec![0u32; ids.len()];
        for &(s, e) in sentences {
            for (i, p) in positions[s..e].iter_mut().enumerate() {
                *p = i as u32;
            }
        }
        let pos_table = tape.param(self.ids.pos.expect("transformer has positions"));
        let pos = tape.gather_rows(pos_table, &positions)?;
        x = tape.add(x, pos)?;
        let (g, b) = self.ids.emb_ln.expect("transformer has embedding norm");
        let (g, b) = (tape.param(g), tape.param(b));
        x = tape.layer_norm(x, g, b)?;
        x = apply_dropout(tape, x, dropout)?;
        let mut attn = Vec::with_capacity(self.ids.layers.len());
        for layer in &self.ids.layers {
            let (y, a) = layer.forward(tape, x, sentences, heads, dropout)?;
            x = y;
            attn.push(a);
        }
        Ok((x, attn))
    }

    /// Full classification pass; `logits` is `[1, n_classes]`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &[u32],
        sentences: &[(usize, usize)],
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<ForwardVars> {
        let (encoded, self_attention) = self.encode(tape, ids, sentences, dropout)?;
        let (sent_vecs, word_alpha) = self.ids.word_attn.attend(tape, encoded, sentences)?;
        let sent_vecs = apply_dropout(tape, sent_vecs, dropout)?;
        let fwd = self.ids.gru_fwd.sequence(tape, sent_vecs, false)?;
        let states = match &self.ids.gru_bwd {
            Some(g) => {
                let bwd = g.sequence(tape, sent_vecs, true)?;
                tape.concat_cols(&[fwd, bwd])?
            }
            None => fwd,
        };
        let n = tape.value(states).rows();
        let (doc_vec, sent_alpha) = self.ids.sent_attn.attend(tape, states, &[(0, n)])?;
        let doc_vec = apply_dropout(tape, doc_vec, dropout)?;
        let w = tape.param(self.ids.cls_w);
        let b = tape.param(self.ids.cls_b);
        let logits = tape.matmul(doc_vec, w)?;
        let logits = tape.add(logits, b)?;
        Ok(ForwardVars {
            logits,
            encoded,
            word_alpha,
            sent_alpha,
            self_attention,
        })
    }

    /// Inference without dropout.
    pub fn predict_ids(&self, ids: &[u32], sentences: &[(usize, usize)]) -> Result<Prediction> {
        let mut tape = Tape::with_params(&self.params);
        let out = self.forward(&mut tape, ids, sentences, &mut None)?;
        let logits = tape.value(out.logits).data().to_vec();
        let probs: Vec<f64> = softmax(&logits).into_iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).collect();
        let alpha = tape.value(out.word_alpha).data();
        let word_attention = sentences
            .iter()
            .map(|&(s, e)| alpha[s..e].iter().map(|a| a.to_f64().unwrap_or(f64::NAN)).collect())
            .collect();
        let sentence_attention = tape
            .value(out.sent_alpha)
            .data()
            .iter()
            .map(|a| a.to_f64().unwrap_or(f64::NAN))
            .collect();
        let argmax = argmax(&probs);
        Ok(Prediction {
            probs,
            sentence_attention,
            word_attention,
            argmax,
        })
    }

    pub fn predict(&self, seq: &TokenSequence) -> Result<Prediction> {
        self.predict_ids(&seq.ids, &seq.sentences)
    }

    /// Cross-entropy for one labeled sequence and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        ids: &[u32],
        sentences: &[(usize, usize)],
        label: usize,
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<(f64, Gradients<T>)> {
        if label >= self.config.n_classes {
            return Err(Error::Data(format!("label {label} is outside {} classes", self.config.n_classes)));
        }
        let mut tape = Tape::with_params(&self.params);
        let out = self.forward(&mut tape, ids, sentences, dropout)?;
        let loss = tape.cross_entropy(out.logits, &[label])?;
        let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
        Ok((value, tape.backward(loss)?))
    }

    pub(crate) fn mlm_bias(&self) -> Option<ParamId> {
        self.ids.mlm_bias
    }

    pub(crate) fn embed_id(&self) -> ParamId {
        self.ids.embed
    }

    pub fn classifier_ids(&self) -> (ParamId, ParamId) {
        (self.ids.cls_w, self.ids.cls_b)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
