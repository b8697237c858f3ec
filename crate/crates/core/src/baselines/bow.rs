use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClinicalDocument, LabelSpace, NOT_DOCUMENTED};
use crate::error::{Error, Result};
use crate::numcore::{normal_init, softmax, Adam, AdamConfig, ParamStore, Tape, Tensor};
use crate::textproc::normalize;

/// Per-word count cap before the log transform.
pub const MAX_WORD_COUNT: usize = 255;

const MAGIC: &[u8; 8] = b"RGABBOWM";
const BOW_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowConfig {
    /// Minimum number of training examples a word must occur in.
    pub min_df: usize,
    pub l2: f64,
    pub lr: f64,
    /// Full-batch optimizer steps.
    pub steps: usize,
    /// Standard deviation of the initial weights.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for BowConfig {
    fn default() -> Self {
        Self {
            min_df: 2,
            l2: 1e-4,
            lr: 0.05,
            steps: 400,
            init_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BowModel {
    pub classes: Vec<String>,
    pub words: Vec<String>,
    /// `[words, classes]`
    pub weights: Tensor<f32>,
    /// `[1, classes]`
    pub bias: Tensor<f32>,
    index: BTreeMap<String, usize>,
}

pub struct BowOutcome {
    pub model: BowModel,
    /// Regularized training objective after each step.
    pub losses: Vec<f64>,
}

/// Lowercased whitespace-separated words with leading and trailing
/// punctuation removed.
pub fn words(text: &str) -> Vec<String> {
    normalize(text)
        .text
        .split(' ')
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn counts<'a>(docs: impl IntoIterator<Item = &'a ClinicalDocument>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for d in docs {
        for w in words(&d.text) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

impl BowModel {
    fn new(classes: Vec<String>, words: Vec<String>, weights: Tensor<f32>, bias: Tensor<f32>) -> Result<Self> {
        if weights.shape() != [words.len(), classes.len()] || bias.shape() != [1, classes.len()] {
            return Err(Error::config("bow", "weight shapes do not match vocabulary and classes"));
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Self {
            classes,
            words,
            weights,
            bias,
            index,
        })
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

/// Sparse `(word index, ln(1 + min(count, 255)))` pairs over the model vocabulary.
pub fn bow_features(model_words: &BTreeMap<String, usize>, docs: &[&ClinicalDocument]) -> Vec<(usize, f64)> {
    counts(docs.iter().copied())
        .into_iter()
        .filter_map(|(w, c)| model_words.get(&w).map(|&i| (i, (1.0 + c.min(MAX_WORD_COUNT) as f64).ln())))
        .collect()
}

/// Multinomial logistic regression on capped, log-scaled word counts, trained
/// full-batch with Adam on mean cross-entropy plus `l2/2 * ||W||^2`.
pub fn bow_train(examples: &[(Vec<&ClinicalDocument>, usize)], space: &LabelSpace, config: &BowConfig) -> Result<BowOutcome> {
    if examples.is_empty() {
        return Err(Error::Data("bag-of-words training needs at least one example".into()));
    }
    if let Some((_, y)) = examples.iter().find(|(_, y)| *y >= space.len()) {
        return Err(Error::Data(format!("label {y} outside {} classes", space.len())));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let per_example: Vec<BTreeMap<String, usize>> = examples.iter().map(|(docs, _)| counts(docs.iter().copied())).collect();
    for c in &per_example {
        for w in c.keys() {
            *df.entry(w.clone()).or_insert(0) += 1;
        }
    }
    let vocab: Vec<String> = df.into_iter().filter(|&(_, n)| n >= config.min_df.max(1)).map(|(w, _)| w).collect();
    let index: BTreeMap<String, usize> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    let (n, v, k) = (examples.len(), vocab.len(), space.len());
    let mut x = vec![0.0f64; n * v.max(1)];
    for (r, c) in per_example.iter().enumerate() {
        for (w, &cnt) in c {
            if let Some(&i) = index.get(w) {
                x[r * v + i] = (1.0 + cnt.min(MAX_WORD_COUNT) as f64).ln();
            }
        }
    }
    let x = Tensor::new(vec![n, v], x).map_err(Error::Num)?;
    let targets: Vec<usize> = examples.iter().map(|(_, y)| *y).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::<f64>::new();
    let w_id = params.add("w", normal_init(v, k, config.init_std, &mut rng));
    let b_id = params.add("b", Tensor::zeros(&[1, k]));
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut tape = Tape::with_params(&params);
        let xv = tape.constant(x.clone());
        let w = tape.param(w_id);
        let b = tape.param(b_id);
        let xw = tape.matmul(xv, w).map_err(Error::Num)?;
        let logits = tape.add(xw, b).map_err(Error::Num)?;
        let ce = tape.cross_entropy(logits, &targets).map_err(Error::Num)?;
        let sq = tape.mul(w, w).map_err(Error::Num)?;
        let sq = tape.sum_all(sq);
        let reg = tape.scale(sq, config.l2 / 2.0);
        let loss = tape.add(ce, reg).map_err(Error::Num)?;
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss).map_err(Error::Num)?;
        drop(tape);
        adam.step(&mut params, &grads);
    }
    let model = BowModel::new(
        space.classes.clone(),
        vocab,
        params.get(w_id).cast(),
        params.get(b_id).cast(),
    )?;
    Ok(BowOutcome { model, losses })
}

/// Softmax over linear scores. Documents with no known words get all mass on
/// the not-documented class.
pub fn bow_predict(model: &BowModel, docs: &[&ClinicalDocument]) -> Vec<f64> {
    let feats = bow_features(&model.index, docs);
    let k = model.classes.len();
    if feats.is_empty() {
        if let Some(nd) = model.classes.iter().position(|c| c == NOT_DOCUMENTED) {
            let mut p = vec![0.0; k];
            p[nd] = 1.0;
            return p;
        }
    }
    let mut scores: Vec<f64> = model.bias.data().iter().map(|&b| b as f64).collect();
    for (i, f) in feats {
        for (s, &w) in scores.iter_mut().zip(model.weights.row(i)) {
            *s += f * w as f64;
        }
    }
    softmax(&scores)
}

#[derive(Serialize, Deserialize)]
struct BowHeader {
    version: u32,
    classes: Vec<String>,
    words: Vec<String>,
}

/// Same framing as model checkpoints: magic, version, header length, JSON
/// header, then weights and bias as little-endian f32.
pub fn save_bow(model: &BowModel, path: &Path) -> Result<()> {
    let header = BowHeader {
        version: BOW_VERSION,
        classes: model.classes.clone(),
        words: model.words.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("bow header", e))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * (model.weights.len() + model.bias.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BOW_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.weights.data().iter().chain(model.bias.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_bow(path: &Path) -> Result<BowModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a bag-of-words model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != BOW_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: BowHeader = serde_json::from_slice(body).map_err(|e| Error::json("bow header", e))?;
    let (v, k) = (header.words.len(), header.classes.len());
    let payload = &bytes[16 + hlen..];
    if payload.len() != 4 * (v * k + k) {
        return Err(bad("payload size does not match header"));
    }
    let vals: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let weights = Tensor::new(vec![v, k], vals[..v * k].to_vec()).map_err(Error::Num)?;
    let bias = Tensor::new(vec![1, k], vals[v * k..].to_vec()).map_err(Error::Num)?;
    BowModel::new(header.classes, header.words, weights, bias)
}
