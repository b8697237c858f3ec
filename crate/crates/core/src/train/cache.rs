use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{read_jsonl, write_jsonl, DocKind, Patient};
use crate::error::Result;
use crate::textproc::Window;

/// SHA-256 over the serialized patient list.
pub fn corpus_hash(patients: &[Patient]) -> String {
    let mut h = Sha256::new();
    for p in patients {
        h.update(serde_json::to_vec(p).expect("patients serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Cache file stem for a dataset built from these inputs.
pub fn dataset_cache_key(corpus_hash: &str, task: &str, window: Window, kinds: &[DocKind], vocab_hash: &str) -> String {
    let kinds: Vec<&str> = kinds.iter().map(|k| k.short()).collect();
    let key = format!("{corpus_hash}|{task}|{window}|{}|{vocab_hash}", kinds.join(","));
    hex::encode(Sha256::digest(key.as_bytes()))[..24].to_string()
}

pub fn save_examples<E: Serialize>(path: &Path, examples: &[E]) -> Result<()> {
    write_jsonl(path, examples)
}

pub fn load_examples<E: DeserializeOwned>(path: &Path) -> Result<Vec<E>> {
    read_jsonl(path)
}
