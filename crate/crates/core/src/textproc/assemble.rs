use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::normalize::normalize;
use super::sentences::split_sentences;
use super::vocab::{Vocab, CLS, OP, PATH, RAD, SEP};
use crate::corpus::{AttributeKind, ClinicalDocument, DocKind, Patient};
use crate::error::{Error, Result};

/// Day offsets relative to an anchor, both ends inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if start > end {
            return Err(Error::config("window", format!("start {start} is after end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, anchor: i64, day: i64) -> bool {
        day >= anchor + self.start && day <= anchor + self.end
    }

    pub fn absolute(&self, anchor: i64) -> (i64, i64) {
        (anchor + self.start, anchor + self.end)
    }
}

impl Default for Window {
    fn default() -> Self {
        Self { start: -30, end: 30 }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for Window {
    type Err = Error;

    /// Parses `-30:90`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("window", format!("expected START:END in days, got '{s}'"));
        let (a, b) = s.trim().split_once(':').ok_or_else(bad)?;
        let a: i64 = a.trim().parse().map_err(|_| bad())?;
        let b: i64 = b.trim().parse().map_err(|_| bad())?;
        Window::new(a, b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub window: Window,
    pub kinds: Vec<DocKind>,
    pub max_sentences: usize,
    /// Per-sentence token cap including markers and the closing `[SEP]`.
    pub max_sentence_tokens: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            window: Window::default(),
            kinds: DocKind::ALL.to_vec(),
            max_sentences: 256,
            max_sentence_tokens: 64,
        }
    }
}

impl AssembleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_sentences == 0 {
            return Err(Error::config("max_sentences", "must be at least 1"));
        }
        if self.max_sentence_tokens < 4 {
            return Err(Error::config("max_sentence_tokens", "must leave room for markers and one token"));
        }
        if self.kinds.is_empty() {
            return Err(Error::config("kinds", "at least one document kind is required"));
        }
        Ok(())
    }
}

/// Source of one token. Special tokens have no document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenProvenance {
    /// Index into [`TokenSequence::doc_ids`].
    pub doc: Option<u32>,
    pub char_start: usize,
    pub char_end: usize,
}

impl TokenProvenance {
    const SPECIAL: TokenProvenance = TokenProvenance {
        doc: None,
        char_start: 0,
        char_end: 0,
    };
}

/// Source of one sentence segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSource {
    pub doc: u32,
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

/// Assembled model input.
///
/// `sentences` partitions `ids`: the first segment also carries `[CLS]`, the
/// first segment of every document carries its kind marker, and every segment
/// ends with `[SEP]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub sentences: Vec<(usize, usize)>,
    pub sentence_sources: Vec<SentenceSource>,
    pub provenance: Vec<TokenProvenance>,
    pub doc_ids: Vec<String>,
    pub doc_days: Vec<i64>,
    /// Absolute day range that was selected.
    pub window: (i64, i64),
    pub attribute: Option<AttributeKind>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sentence_ids(&self, s: usize) -> &[u32] {
        let (a, b) = self.sentences[s];
        &self.ids[a..b]
    }

    pub fn doc_id(&self, token: usize) -> Option<&str> {
        self.provenance[token].doc.map(|d| self.doc_ids[d as usize].as_str())
    }
}

/// One tokenized sentence: `(id, char_start, char_end)` in original text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub tokens: Vec<(u32, usize, usize)>,
}

/// A document split and tokenized once, reusable across windows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub kind: DocKind,
    pub date: i64,
    pub sentences: Vec<TokenizedSentence>,
}

pub fn tokenize_document(doc: &ClinicalDocument, vocab: &Vocab) -> TokenizedDocument {
    let norm = normalize(&doc.text);
    let tokens = vocab.tokenize_normalized(&norm.text);
    let mut sentences = Vec::new();
    let mut t = 0;
    for (i, (s, e)) in split_sentences(&norm.text).into_iter().enumerate() {
        while t < tokens.len() && tokens[t].end <= s && tokens[t].start < s {
            t += 1;
        }
        let mut toks = Vec::new();
        while t < tokens.len() && tokens[t].start < e {
            let (cs, ce) = norm.original_span(tokens[t].start, tokens[t].end);
            toks.push((tokens[t].id, cs, ce));
            t += 1;
        }
        let (cs, ce) = norm.original_span(s, e);
        sentences.push(TokenizedSentence {
            sentence_index: i,
            char_start: cs,
            char_end: ce,
            tokens: toks,
        });
    }
    TokenizedDocument {
        doc_id: doc.doc_id.clone(),
        kind: doc.kind,
        date: doc.date,
        sentences,
    }
}

pub fn tokenize_patient(patient: &Patient, vocab: &Vocab) -> Vec<TokenizedDocument> {
    patient.documents.iter().map(|d| tokenize_document(d, vocab)).collect()
}

pub fn kind_marker(kind: DocKind) -> u32 {
    match kind {
        DocKind::Pathology => PATH,
        DocKind::Radiology => RAD,
        DocKind::Operative => OP,
    }
}

/// Assembles a window from pre-tokenized documents.
pub fn assemble_tokenized(
    patient_id: &str,
    docs: &[TokenizedDocument],
    anchor_day: i64,
    options: &AssembleOptions,
    attribute: Option<AttributeKind>,
) -> Result<TokenSequence> {
    options.validate()?;
    let mut selected: Vec<&TokenizedDocument> = docs
        .iter()
        .filter(|d| options.kinds.contains(&d.kind) && options.window.contains(anchor_day, d.date))
        .collect();
    selected.sort_by(|a, b| (a.date, &a.doc_id).cmp(&(b.date, &b.doc_id)));

    let all: Vec<(usize, &TokenizedSentence)> = selected
        .iter()
        .enumerate()
        .flat_map(|(di, d)| d.sentences.iter().filter(|s| !s.tokens.is_empty()).map(move |s| (di, s)))
        .collect();
    if all.is_empty() {
        return Err(Error::EmptyInput {
            patient_id: patient_id.to_string(),
        });
    }
    let kept = &all[all.len().saturating_sub(options.max_sentences)..];

    let mut seq = TokenSequence {
        ids: Vec::new(),
        sentences: Vec::with_capacity(kept.len()),
        sentence_sources: Vec::with_capacity(kept.len()),
        provenance: Vec::new(),
        doc_ids: Vec::new(),
        doc_days: Vec::new(),
        window: options.window.absolute(anchor_day),
        attribute,
    };
    let mut last_doc = None;
    for &(di, sent) in kept {
        let start = seq.ids.len();
        let mut budget = options.max_sentence_tokens - 1;
        if start == 0 {
            seq.ids.push(CLS);
            seq.provenance.push(TokenProvenance::SPECIAL);
            budget -= 1;
        }
        if last_doc != Some(di) {
            let d = selected[di];
            seq.doc_ids.push(d.doc_id.clone());
            seq.doc_days.push(d.date);
            seq.ids.push(kind_marker(d.kind));
            seq.provenance.push(TokenProvenance::SPECIAL);
            budget -= 1;
            last_doc = Some(di);
        }
        let slot = (seq.doc_ids.len() - 1) as u32;
        for &(id, cs, ce) in sent.tokens.iter().take(budget) {
            seq.ids.push(id);
            seq.provenance.push(TokenProvenance {
                doc: Some(slot),
                char_start: cs,
                char_end: ce,
            });
        }
        seq.ids.push(SEP);
        seq.provenance.push(TokenProvenance::SPECIAL);
        seq.sentences.push((start, seq.ids.len()));
        seq.sentence_sources.push(SentenceSource {
            doc: slot,
            sentence_index: sent.sentence_index,
            char_start: sent.char_start,
            char_end: sent.char_end,
        });
    }
    Ok(seq)
}

/// Concatenates a patient's in-window documents in `(date, doc_id)` order.
///
/// Emits `[CLS]`, then per document its kind marker followed by its sentences,
/// each closed by `[SEP]`. When there are more than `max_sentences` sentences
/// the oldest are dropped; overlong sentences lose their tail.
pub fn assemble_input(
    patient: &Patient,
    anchor_day: i64,
    options: &AssembleOptions,
    vocab: &Vocab,
    attribute: Option<AttributeKind>,
) -> Result<TokenSequence> {
    let docs: Vec<TokenizedDocument> = patient
        .documents
        .iter()
        .filter(|d| options.kinds.contains(&d.kind) && options.window.contains(anchor_day, d.date))
        .map(|d| tokenize_document(d, vocab))
        .collect();
    assemble_tokenized(&patient.patient_id, &docs, anchor_day, options, attribute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::learn_vocab;

    fn doc(id: &str, kind: DocKind, date: i64, text: &str) -> ClinicalDocument {
        ClinicalDocument {
            doc_id: id.into(),
            patient_id: "P1".into(),
            kind,
            date,
            text: text.into(),
        }
    }

    fn patient() -> Patient {
        Patient {
            patient_id: "P1".into(),
            documents: vec![
                doc("P1-D00", DocKind::Pathology, 100, "Invasive carcinoma. Margins clear."),
                doc("P1-D01", DocKind::Radiology, 160, "Mass in the lung."),
            ],
            registry: None,
        }
    }

    fn vocab() -> Vocab {
        let p = patient();
        let texts: Vec<&str> = p.documents.iter().map(|d| d.text.as_str()).collect();
        learn_vocab(&texts, 60).unwrap()
    }

    #[test]
    fn window_parse_and_display() {
        let w: Window = "-30:90".parse().unwrap();
        assert_eq!(w, Window { start: -30, end: 90 });
        assert_eq!(w.to_string(), "-30:90");
        assert!("30:-30".parse::<Window>().is_err());
        assert!("abc".parse::<Window>().is_err());
    }

    #[test]
    fn window_excludes_late_document() {
        let v = vocab();
        let opts = AssembleOptions::default();
        let s = assemble_input(&patient(), 100, &opts, &v, None).unwrap();
        assert_eq!(s.doc_ids, ["P1-D00"]);
        assert_eq!(s.ids[0], CLS);
        assert_eq!(s.ids[1], PATH);
        assert_eq!(s.sentences.len(), 2);
        let wide = AssembleOptions {
            window: Window::new(-30, 90).unwrap(),
            ..opts
        };
        let s = assemble_input(&patient(), 100, &wide, &v, None).unwrap();
        assert_eq!(s.doc_ids, ["P1-D00", "P1-D01"]);
        assert_eq!(s.sentences.len(), 3);
        assert_eq!(s.ids[s.sentences[2].0], RAD);
    }

    #[test]
    fn empty_window_is_an_error() {
        let err = assemble_input(&patient(), 1000, &AssembleOptions::default(), &vocab(), None);
        assert!(matches!(err, Err(Error::EmptyInput { .. })));
    }

    #[test]
    fn oldest_sentences_are_dropped_first() {
        let opts = AssembleOptions {
            window: Window::new(-30, 90).unwrap(),
            max_sentences: 2,
            ..Default::default()
        };
        let s = assemble_input(&patient(), 100, &opts, &vocab(), None).unwrap();
        assert_eq!(s.sentences.len(), 2);
        assert_eq!(s.sentence_sources[0].sentence_index, 1);
        assert_eq!(&s.ids[..2], &[CLS, PATH]);
    }

    #[test]
    fn long_sentence_keeps_head() {
        let opts = AssembleOptions {
            max_sentence_tokens: 5,
            ..Default::default()
        };
        let s = assemble_input(&patient(), 100, &opts, &vocab(), None).unwrap();
        for &(a, b) in &s.sentences {
            assert!(b - a <= 5);
            assert_eq!(s.ids[b - 1], SEP);
        }
    }
}
