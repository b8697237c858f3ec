use std::collections::BTreeMap;

use crate::corpus::{ClinicalDocument, LabelSpace, NOT_DOCUMENTED};
use crate::textproc::normalize;

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Non-overlapping occurrences of `alias` in normalized `text` that start and
/// end on word boundaries.
pub fn alias_count(text: &str, alias: &str) -> usize {
    let alias = alias.trim();
    if alias.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut from = 0;
    while let Some(pos) = text[from..].find(alias) {
        let start = from + pos;
        let end = start + alias.len();
        let before = text[..start].chars().next_back();
        let after = text[end..].chars().next();
        if !is_word_char(before) && !is_word_char(after) {
            count += 1;
            from = end;
        } else {
            from = start + text[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    count
}

/// Class distribution from alias occurrence counts summed over `docs`. Each
/// alias of a class is counted on its own. When nothing matches, all mass goes
/// to the not-documented class (or is spread uniformly if the space lacks one).
pub fn ontology_predict(lexicon: &BTreeMap<String, Vec<String>>, space: &LabelSpace, docs: &[&ClinicalDocument]) -> Vec<f64> {
    let texts: Vec<String> = docs.iter().map(|d| normalize(&d.text).text).collect();
    let mut counts = vec![0usize; space.len()];
    for (i, code) in space.classes.iter().enumerate() {
        if code == NOT_DOCUMENTED {
            continue;
        }
        let Some(aliases) = lexicon.get(code) else { continue };
        for alias in aliases {
            let alias = alias.to_lowercase();
            counts[i] += texts.iter().map(|t| alias_count(t, &alias)).sum::<usize>();
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        let mut probs = vec![0.0; space.len()];
        match space.index_of(NOT_DOCUMENTED) {
            Some(nd) => probs[nd] = 1.0,
            None => probs.iter_mut().for_each(|p| *p = 1.0 / space.len() as f64),
        }
        return probs;
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alias_matches_respect_word_boundaries() {
        assert_eq!(alias_count("the sigmoid colon and sigmoidoscopy", "sigmoid"), 1);
        assert_eq!(alias_count("uoq, uoq; uoq", "uoq"), 3);
        assert_eq!(alias_count("liver", ""), 0);
    }
}
