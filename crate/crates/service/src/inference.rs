use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use regabstract_core::baselines::{documents_in_window, ontology_predict};
use regabstract_core::corpus::{read_json, AttributeKind, CorpusBundle, Patient, NOT_DOCUMENTED};
use regabstract_core::model::{load_checkpoint, EncoderKind, Model};
use regabstract_core::rationale::{extract_rationale, Rationale};
use regabstract_core::textproc::{assemble_input, AssembleOptions, Vocab};
use regabstract_core::Error;

use crate::error::ServiceResult;

/// Rationale sentences kept per extraction.
pub const RATIONALE_K: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelProb {
    pub label: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub extraction_id: String,
    pub patient_id: String,
    pub attribute: AttributeKind,
    pub predicted: String,
    /// Five most probable classes, most probable first.
    pub top5: Vec<LabelProb>,
    pub rationale: Option<Rationale>,
    /// `model:<checkpoint stem>` or `ontology`.
    pub source: String,
}

pub fn extraction_id(patient_id: &str, attribute: AttributeKind) -> String {
    format!("{patient_id}:{attribute}")
}

pub enum Predictor {
    Model {
        model: Box<Model<f32>>,
        options: AssembleOptions,
        source: String,
    },
    Ontology,
}

impl Predictor {
    pub fn source(&self) -> &str {
        match self {
            Predictor::Model { source, .. } => source,
            Predictor::Ontology => "ontology",
        }
    }
}

/// One predictor per attribute plus the vocabulary the models were trained with.
pub struct Predictors {
    pub vocab: Option<Vocab>,
    pub by_attribute: BTreeMap<AttributeKind, Predictor>,
}

impl Predictors {
    pub fn ontology_only() -> Self {
        Self {
            vocab: None,
            by_attribute: AttributeKind::ALL.iter().map(|&a| (a, Predictor::Ontology)).collect(),
        }
    }

    pub fn sources(&self) -> Vec<(String, String)> {
        self.by_attribute.iter().map(|(a, p)| (a.to_string(), p.source().to_string())).collect()
    }
}

/// Looks for `<attribute>.transformer.ckpt`, then `<attribute>.contextfree.ckpt`
/// in `checkpoint_dir`, each optionally beside a `.options.json` with its
/// assembly options. Attributes without a checkpoint fall back to alias
/// matching. The vocabulary defaults to `checkpoint_dir/vocab.json`.
pub fn load_predictors(checkpoint_dir: Option<&Path>, vocab_path: Option<&Path>) -> ServiceResult<Predictors> {
    let Some(dir) = checkpoint_dir else {
        return Ok(Predictors::ontology_only());
    };
    let default_vocab = dir.join("vocab.json");
    let vocab_path = vocab_path.unwrap_or(&default_vocab);
    let mut found = BTreeMap::new();
    let mut vocab: Option<Vocab> = None;
    for &attribute in AttributeKind::ALL.iter() {
        let mut chosen = None;
        for encoder in [EncoderKind::tiny_transformer(), EncoderKind::ContextFree] {
            let stem = format!("{attribute}.{}", encoder.name());
            let ckpt = dir.join(format!("{stem}.ckpt"));
            if ckpt.exists() {
                chosen = Some((stem, ckpt));
                break;
            }
        }
        let Some((stem, ckpt)) = chosen else {
            log::info!("{attribute}: no checkpoint in {}, using alias matching", dir.display());
            found.insert(attribute, Predictor::Ontology);
            continue;
        };
        if vocab.is_none() {
            vocab = Some(Vocab::load(vocab_path)?);
        }
        let v = vocab.as_ref().expect("loaded above");
        let model = load_checkpoint(&ckpt, &v.content_hash())?;
        let opts_path = dir.join(format!("{stem}.options.json"));
        let options = if opts_path.exists() {
            read_json(&opts_path)?
        } else {
            AssembleOptions::default()
        };
        found.insert(
            attribute,
            Predictor::Model {
                model: Box::new(model),
                options,
                source: format!("model:{stem}"),
            },
        );
    }
    Ok(Predictors {
        vocab,
        by_attribute: found,
    })
}

fn top5(space_classes: &[String], probs: &[f64]) -> Vec<LabelProb> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.into_iter()
        .take(5)
        .map(|i| LabelProb {
            label: space_classes[i].clone(),
            prob: probs[i],
        })
        .collect()
}

/// Registry patients are anchored at diagnosis; everyone else at their most
/// recent document.
fn anchor_day(patient: &Patient) -> i64 {
    match &patient.registry {
        Some(r) => r.diagnosis_date,
        None => patient.documents.iter().map(|d| d.date).max().unwrap_or(0),
    }
}

/// One extraction per patient and attribute, in (patient, attribute) order.
pub fn extract_all(bundle: &CorpusBundle, predictors: &Predictors) -> ServiceResult<Vec<Extraction>> {
    let mut out = Vec::with_capacity(bundle.patients.len() * predictors.by_attribute.len());
    for p in &bundle.patients {
        let anchor = anchor_day(p);
        for (&attribute, predictor) in &predictors.by_attribute {
            let space = bundle.label_space(attribute);
            let (probs, rationale) = match predictor {
                Predictor::Ontology => {
                    let docs = documents_in_window(p, anchor, &AssembleOptions::default());
                    let lexicon = bundle.lexicon.get(&attribute).cloned().unwrap_or_default();
                    (ontology_predict(&lexicon, space, &docs), None)
                }
                Predictor::Model { model, options, .. } => {
                    let vocab = predictors.vocab.as_ref().expect("models imply a vocabulary");
                    match assemble_input(p, anchor, options, vocab, Some(attribute)) {
                        Ok(seq) => {
                            let pred = model.predict(&seq)?;
                            let r = extract_rationale(&pred, &seq, RATIONALE_K)?;
                            (pred.probs, Some(r))
                        }
                        Err(Error::EmptyInput { .. }) => {
                            let mut probs = vec![0.0; space.len()];
                            if let Some(nd) = space.index_of(NOT_DOCUMENTED) {
                                probs[nd] = 1.0;
                            }
                            (probs, None)
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            let top5 = top5(&space.classes, &probs);
            out.push(Extraction {
                extraction_id: extraction_id(&p.patient_id, attribute),
                patient_id: p.patient_id.clone(),
                attribute,
                predicted: top5.first().map(|l| l.label.clone()).unwrap_or_default(),
                top5,
                rationale,
                source: predictor.source().to_string(),
            });
        }
    }
    Ok(out)
}
