//! Corpus directory layout: one JSON value per line for patients, evidence and
//! the pretraining pool; single JSON documents for label spaces, lexicon and
//! the generator config. Struct field order and sorted maps keep reruns
//! byte-identical.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AliasLexicon, CorpusBundle, EvidenceSpan, GeneratorConfig, LabelSpace, Patient, PoolDocument};
use crate::error::{Error, Result};

pub const PATIENTS_FILE: &str = "patients.jsonl";
pub const LABELSPACES_FILE: &str = "labelspaces.json";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const EVIDENCE_FILE: &str = "evidence.jsonl";
pub const POOL_FILE: &str = "pretrain_pool.jsonl";
pub const CONFIG_FILE: &str = "generator_config.json";

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_corpus(bundle: &CorpusBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(PATIENTS_FILE), &bundle.patients)?;
    write_json(&dir.join(LABELSPACES_FILE), &bundle.label_spaces)?;
    write_json(&dir.join(LEXICON_FILE), &bundle.lexicon)?;
    write_jsonl(&dir.join(EVIDENCE_FILE), &bundle.evidence)?;
    write_jsonl(&dir.join(POOL_FILE), &bundle.pretrain_pool)?;
    write_json(&dir.join(CONFIG_FILE), &bundle.config)
}

pub fn load_corpus(dir: &Path) -> Result<CorpusBundle> {
    let patients: Vec<Patient> = read_jsonl(&dir.join(PATIENTS_FILE))?;
    let label_spaces: Vec<LabelSpace> = read_json(&dir.join(LABELSPACES_FILE))?;
    let lexicon: AliasLexicon = read_json(&dir.join(LEXICON_FILE))?;
    let evidence: Vec<EvidenceSpan> = read_jsonl(&dir.join(EVIDENCE_FILE))?;
    let pretrain_pool: Vec<PoolDocument> = read_jsonl(&dir.join(POOL_FILE))?;
    let config: GeneratorConfig = read_json(&dir.join(CONFIG_FILE))?;
    if patients.is_empty() {
        return Err(Error::Data(format!("{} holds no patients", dir.display())));
    }
    Ok(CorpusBundle {
        config,
        patients,
        label_spaces,
        lexicon,
        evidence,
        pretrain_pool,
    })
}
