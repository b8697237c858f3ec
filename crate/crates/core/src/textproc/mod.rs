//! Normalization, sentence splitting, subword vocabularies and chronological
//! input assembly with per-token provenance.

mod assemble;
mod normalize;
mod sentences;
mod vocab;

pub use assemble::{
    assemble_input, assemble_tokenized, kind_marker, tokenize_document, tokenize_patient, AssembleOptions, SentenceSource,
    TokenProvenance, TokenSequence, TokenizedDocument, TokenizedSentence, Window,
};
pub use normalize::{normalize, Normalized};
pub use sentences::{document_sentences, split_sentences, SentenceSpan};
pub use vocab::{
    learn_vocab, pre_tokenize, Piece, TokenizedPiece, Vocab, CLS, MASK, OP, PAD, PATH, RAD, SEP, SPECIAL_TOKENS, UNK, WORD_MARK,
};
