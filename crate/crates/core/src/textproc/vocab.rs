use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::normalize::normalize;
use crate::error::{Error, Result};

/// Marks a piece that follows a space (or starts the text).
pub const WORD_MARK: char = '\u{2581}';

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const PATH: u32 = 5;
pub const RAD: u32 = 6;
pub const OP: u32 = 7;

pub const SPECIAL_TOKENS: [&str; 8] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[PATH]", "[RAD]", "[OP]"];

const FORMAT_VERSION: u32 = 1;

/// A pre-tokenization unit: an alphanumeric run or a single other character,
/// prefixed with [`WORD_MARK`] when it follows a space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    /// Byte range of the piece in the normalized text, excluding the mark.
    pub start: usize,
    pub end: usize,
}

/// Splits normalized text into pieces.
pub fn pre_tokenize(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut cur: Option<Piece> = None;
    let mut after_space = true;
    for (i, c) in text.char_indices() {
        if c == ' ' {
            if let Some(p) = cur.take() {
                pieces.push(p);
            }
            after_space = true;
            continue;
        }
        let end = i + c.len_utf8();
        let alnum = c.is_alphanumeric();
        match cur.as_mut() {
            Some(p) if alnum && p.text.chars().last().is_some_and(char::is_alphanumeric) => {
                p.text.push(c);
                p.end = end;
                continue;
            }
            _ => {}
        }
        if let Some(p) = cur.take() {
            pieces.push(p);
        }
        let mut t = String::new();
        if after_space {
            t.push(WORD_MARK);
        }
        t.push(c);
        after_space = false;
        cur = Some(Piece {
            text: t,
            start: i,
            end,
        });
        if !alnum {
            pieces.push(cur.take().expect("just set"));
        }
    }
    if let Some(p) = cur {
        pieces.push(p);
    }
    pieces
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct VocabFile {
    format: u32,
    specials: Vec<String>,
    units: Vec<String>,
    merges: Vec<(String, String)>,
}

/// Subword vocabulary: specials at ids 0-7, then learned units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    units: Vec<String>,
    merges: Vec<(String, String)>,
    index: HashMap<String, u32>,
    max_unit_chars: usize,
}

/// A token with its byte range in the normalized text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenizedPiece {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

fn pair_counts(words: &[(Vec<u32>, u64)]) -> HashMap<(u32, u32), u64> {
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    for (syms, n) in words {
        for w in syms.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += n;
        }
    }
    counts
}

/// Learns a vocabulary by greedy pair merging.
///
/// Starting from single characters, the most frequent adjacent pair is merged
/// (ties go to the lexicographically smallest `(left, right)`) until the
/// vocabulary has `target_size` entries or no pair occurs twice.
pub fn learn_vocab<S: AsRef<str>>(texts: &[S], target_size: usize) -> Result<Vocab> {
    let mut freq: HashMap<String, u64> = HashMap::new();
    for t in texts {
        let norm = normalize(t.as_ref());
        for p in pre_tokenize(&norm.text) {
            *freq.entry(p.text).or_default() += 1;
        }
    }
    let mut words: Vec<(String, u64)> = freq.into_iter().collect();
    words.sort();
    let chars: BTreeSet<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
    let min = SPECIAL_TOKENS.len() + chars.len();
    if target_size < min {
        return Err(Error::config(
            "target_size",
            format!("{target_size} is below the {} specials plus {} base characters", SPECIAL_TOKENS.len(), chars.len()),
        ));
    }
    let mut units: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    let mut unit_id: HashMap<String, u32> = units.iter().enumerate().map(|(i, u)| (u.clone(), i as u32)).collect();
    let mut segmented: Vec<(Vec<u32>, u64)> = words
        .iter()
        .map(|(w, n)| (w.chars().map(|c| unit_id[&c.to_string()]).collect(), *n))
        .collect();
    let mut merges = Vec::new();
    while SPECIAL_TOKENS.len() + units.len() < target_size {
        let counts = pair_counts(&segmented);
        let best = counts
            .iter()
            .filter(|(_, &n)| n >= 2)
            .min_by(|(a, na), (b, nb)| {
                nb.cmp(na).then_with(|| {
                    (&units[a.0 as usize], &units[a.1 as usize]).cmp(&(&units[b.0 as usize], &units[b.1 as usize]))
                })
            })
            .map(|(&pair, _)| pair);
        let Some((l, r)) = best else { break };
        let merged = format!("{}{}", units[l as usize], units[r as usize]);
        let new_id = match unit_id.get(&merged) {
            Some(&id) => id,
            None => {
                units.push(merged.clone());
                unit_id.insert(merged, units.len() as u32 - 1);
                units.len() as u32 - 1
            }
        };
        merges.push((units[l as usize].clone(), units[r as usize].clone()));
        for (syms, _) in &mut segmented {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    log::debug!("learned {} units with {} merges", units.len(), merges.len());
    Ok(Vocab::from_parts(units, merges))
}

impl Vocab {
    fn from_parts(units: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let mut index = HashMap::with_capacity(units.len() + SPECIAL_TOKENS.len());
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            index.insert(s.to_string(), i as u32);
        }
        for (i, u) in units.iter().enumerate() {
            index.insert(u.clone(), (SPECIAL_TOKENS.len() + i) as u32);
        }
        let max_unit_chars = units.iter().map(|u| u.chars().count()).max().unwrap_or(1);
        Self {
            units,
            merges,
            index,
            max_unit_chars,
        }
    }

    pub fn len(&self) -> usize {
        SPECIAL_TOKENS.len() + self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Learned units in id order (without specials).
    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn id(&self, unit: &str) -> Option<u32> {
        self.index.get(unit).copied()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Unit string for an id, specials included.
    pub fn unit(&self, id: u32) -> &str {
        let i = id as usize;
        if i < SPECIAL_TOKENS.len() {
            SPECIAL_TOKENS[i]
        } else {
            &self.units[i - SPECIAL_TOKENS.len()]
        }
    }

    /// Source text a token stands for: the unit without its word mark.
    pub fn token_text(&self, id: u32) -> &str {
        let u = self.unit(id);
        u.strip_prefix(WORD_MARK).unwrap_or(u)
    }

    /// Longest-match-first segmentation of already normalized text.
    pub fn tokenize_normalized(&self, text: &str) -> Vec<TokenizedPiece> {
        let mut out = Vec::new();
        for piece in pre_tokenize(text) {
            // (char, byte start, byte end) with the mark occupying zero bytes
            let mut chars: Vec<(char, usize, usize)> = Vec::with_capacity(piece.text.len());
            let mut pos = piece.start;
            for c in piece.text.chars() {
                if c == WORD_MARK && chars.is_empty() {
                    chars.push((c, pos, pos));
                } else {
                    chars.push((c, pos, pos + c.len_utf8()));
                    pos += c.len_utf8();
                }
            }
            let mut i = 0;
            let mut buf = String::new();
            while i < chars.len() {
                let max = self.max_unit_chars.min(chars.len() - i);
                let mut matched = None;
                for l in (1..=max).rev() {
                    buf.clear();
                    buf.extend(chars[i..i + l].iter().map(|c| c.0));
                    if let Some(&id) = self.index.get(buf.as_str()) {
                        if !Self::is_special(id) {
                            matched = Some((id, l));
                            break;
                        }
                    }
                }
                let (id, l) = matched.unwrap_or((UNK, 1));
                out.push(TokenizedPiece {
                    id,
                    start: chars[i].1,
                    end: chars[i + l - 1].2,
                });
                i += l;
            }
        }
        out
    }

    /// Normalizes then tokenizes; offsets refer to the normalized text.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let norm = normalize(text);
        self.tokenize_normalized(&norm.text).into_iter().map(|t| t.id).collect()
    }

    /// Concatenates units, turning word marks into spaces. Specials other than
    /// `[UNK]` are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            if id == UNK {
                s.push_str(SPECIAL_TOKENS[UNK as usize]);
            } else if !Self::is_special(id) {
                s.push_str(self.unit(id));
            }
        }
        let s = s.replace(WORD_MARK, " ");
        s.strip_prefix(' ').map(str::to_string).unwrap_or(s)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            format: FORMAT_VERSION,
            specials: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            units: self.units.clone(),
            merges: self.merges.clone(),
        };
        serde_json::to_string(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| Error::json("vocab", e))?;
        if file.format != FORMAT_VERSION {
            return Err(Error::Data(format!("vocab format {} is not supported (expected {FORMAT_VERSION})", file.format)));
        }
        if file.specials != SPECIAL_TOKENS {
            return Err(Error::Data("vocab special-token table differs from this build".into()));
        }
        Ok(Self::from_parts(file.units, file.merges))
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pieces_split_on_punctuation_and_mark_word_starts() {
        let p = pre_tokenize("2 cm. o'clock");
        let texts: Vec<&str> = p.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["\u{2581}2", "\u{2581}cm", ".", "\u{2581}o", "'", "clock"]);
        assert_eq!((p[1].start, p[1].end), (2, 4));
    }

    #[test]
    fn too_small_target_is_rejected() {
        assert!(learn_vocab(&["abc"], 8).is_err());
        let v = learn_vocab(&["abc"], 12).unwrap();
        assert_eq!(v.len(), 12);
        assert!(v.merges().is_empty());
    }

    #[test]
    fn unknown_characters_become_unk() {
        let v = learn_vocab(&["abc abc"], 40).unwrap();
        let ids = v.encode("abz");
        assert!(ids.contains(&UNK));
        assert_eq!(v.decode(&v.encode("cab abc")), "cab abc");
    }

    #[test]
    fn json_round_trip_preserves_hash() {
        let v = learn_vocab(&["the lower lowest low"], 30).unwrap();
        let w = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.content_hash(), w.content_hash());
    }
}
