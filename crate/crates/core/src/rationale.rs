//! Ranked, provenance-linked evidence from hierarchical attention weights.

use serde::{Deserialize, Serialize};

use crate::corpus::{ClinicalDocument, EvidenceSpan};
use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::textproc::TokenSequence;

/// Tokens highlighted per returned sentence.
pub const TOKENS_PER_SENTENCE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenHighlight {
    /// Position in the token sequence.
    pub position: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub word_weight: f64,
    /// Sentence weight times word weight, renormalized over every returned token.
    pub combined_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationaleEntry {
    pub doc_id: String,
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub sentence_weight: f64,
    pub tokens: Vec<TokenHighlight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub k: usize,
    pub entries: Vec<RationaleEntry>,
}

/// Indices of `weights` ordered by descending weight, earlier index first on ties.
fn ranked(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx
}

/// Top-`k` sentences by sentence attention, each with its top tokens by word
/// attention. Special tokens are never highlighted.
pub fn extract_rationale(prediction: &Prediction, seq: &TokenSequence, k: usize) -> Result<Rationale> {
    if k < 1 {
        return Err(Error::config("k", "must be at least 1"));
    }
    let n = seq.sentences.len();
    if prediction.sentence_attention.len() != n || prediction.word_attention.len() != n || seq.sentence_sources.len() != n {
        return Err(Error::Data(format!(
            "prediction has {} sentence weights but the sequence has {n} sentences",
            prediction.sentence_attention.len()
        )));
    }
    let mut entries = Vec::new();
    for s in ranked(&prediction.sentence_attention).into_iter().take(k) {
        let (start, end) = seq.sentences[s];
        let alphas = &prediction.word_attention[s];
        if alphas.len() != end - start {
            return Err(Error::Data(format!("sentence {s}: {} word weights for {} tokens", alphas.len(), end - start)));
        }
        let src = seq.sentence_sources[s];
        let sentence_weight = prediction.sentence_attention[s];
        let tokens = ranked(alphas)
            .into_iter()
            .filter(|&j| seq.provenance[start + j].doc.is_some())
            .take(TOKENS_PER_SENTENCE)
            .map(|j| {
                let p = seq.provenance[start + j];
                TokenHighlight {
                    position: start + j,
                    char_start: p.char_start,
                    char_end: p.char_end,
                    word_weight: alphas[j],
                    combined_weight: sentence_weight * alphas[j],
                }
            })
            .collect();
        entries.push(RationaleEntry {
            doc_id: seq.doc_ids[src.doc as usize].clone(),
            sentence_index: src.sentence_index,
            char_start: src.char_start,
            char_end: src.char_end,
            sentence_weight,
            tokens,
        });
    }
    let total: f64 = entries.iter().flat_map(|e| &e.tokens).map(|t| t.combined_weight).sum();
    if total > 0.0 {
        for t in entries.iter_mut().flat_map(|e| e.tokens.iter_mut()) {
            t.combined_weight /= total;
        }
    }
    Ok(Rationale { k, entries })
}

/// Source text of a span, or `None` when it does not resolve inside `doc`.
pub fn render_span(doc: &ClinicalDocument, char_start: usize, char_end: usize) -> Option<&str> {
    doc.text.get(char_start..char_end)
}

/// Checks that every sentence and token span resolves against `docs` and that
/// each token lies inside its sentence.
pub fn verify_rationale(rationale: &Rationale, docs: &[ClinicalDocument]) -> Result<()> {
    for e in &rationale.entries {
        let doc = docs
            .iter()
            .find(|d| d.doc_id == e.doc_id)
            .ok_or_else(|| Error::Data(format!("rationale cites unknown document {}", e.doc_id)))?;
        if render_span(doc, e.char_start, e.char_end).is_none() {
            return Err(Error::Data(format!("span {}..{} does not resolve in {}", e.char_start, e.char_end, e.doc_id)));
        }
        for t in &e.tokens {
            if render_span(doc, t.char_start, t.char_end).is_none() || t.char_start < e.char_start || t.char_end > e.char_end {
                return Err(Error::Data(format!(
                    "token span {}..{} is outside sentence {}..{} of {}",
                    t.char_start, t.char_end, e.char_start, e.char_end, e.doc_id
                )));
            }
        }
    }
    Ok(())
}

/// Whether the top-ranked sentence overlaps any of `evidence` in the same document.
pub fn top_sentence_hits(rationale: &Rationale, evidence: &[&EvidenceSpan]) -> bool {
    rationale.entries.first().is_some_and(|top| {
        evidence
            .iter()
            .any(|ev| ev.doc_id == top.doc_id && ev.char_start < top.char_end && top.char_start < ev.char_end)
    })
}
