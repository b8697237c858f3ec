use super::normalize::normalize;

/// A sentence within a document, in original-text byte offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceSpan {
    pub doc_id: String,
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

/// Abbreviations that never end a sentence.
const TITLE_GUARD: &[&str] = &["dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "vs.", "e.g.", "i.e.", "approx.", "fig."];
/// Abbreviations that end a sentence unless a number follows ("no. 2", "3 cm. 4").
const NUMERIC_GUARD: &[&str] = &["no.", "cm.", "mm."];

fn is_terminator(c: u8) -> bool {
    matches!(c, b'.' | b'!' | b'?' | b';')
}

/// Splits normalized text into sentence byte ranges.
///
/// A sentence ends at `.`, `!`, `?` or `;` followed by whitespace or the end of
/// text, unless the word ending there is a guarded abbreviation.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let b = text.as_bytes();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..b.len() {
        if b[i].is_ascii_whitespace() {
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        let at_boundary = i + 1 == b.len() || b[i + 1].is_ascii_whitespace();
        if !(is_terminator(b[i]) && at_boundary) {
            continue;
        }
        if b[i] == b'.' {
            let word_start = text[..i].rfind(|c: char| c.is_whitespace()).map_or(0, |p| p + 1);
            let word = &text[word_start..=i];
            if TITLE_GUARD.contains(&word) {
                continue;
            }
            if NUMERIC_GUARD.contains(&word) {
                let next = text[i + 1..].trim_start();
                if next.starts_with(|c: char| c.is_ascii_digit()) {
                    continue;
                }
            }
        }
        if let Some(s) = start.take() {
            spans.push((s, i + 1));
        }
    }
    if let Some(s) = start {
        let end = text.trim_end().len();
        spans.push((s, end));
    }
    spans
}

/// Sentences of a raw document, mapped back to original-text offsets.
pub fn document_sentences(doc_id: &str, text: &str) -> Vec<SentenceSpan> {
    let norm = normalize(text);
    split_sentences(&norm.text)
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| {
            let (cs, ce) = norm.original_span(s, e);
            SentenceSpan {
                doc_id: doc_id.to_string(),
                sentence_index: i,
                char_start: cs,
                char_end: ce,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_after_unit_when_no_number_follows() {
        assert_eq!(split_sentences("tumor is 2 cm. margins are clear.").len(), 2);
        assert_eq!(split_sentences("size 2 cm. 3 cm on repeat.").len(), 1);
    }

    #[test]
    fn title_abbreviations_never_split() {
        assert_eq!(split_sentences("seen by dr. smith today."), vec![(0, 24)]);
        assert_eq!(split_sentences("specimen no. 2 is labeled; margins free.").len(), 2);
    }

    #[test]
    fn trailing_text_without_terminator_is_a_sentence() {
        assert_eq!(split_sentences("a. b"), vec![(0, 2), (3, 4)]);
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("value 2.5 cm noted."), vec![(0, 19)]);
    }

    #[test]
    fn document_offsets_cover_original_sentences() {
        let text = "Radiology report.\nA  mass is seen.";
        let s = document_sentences("d", text);
        assert_eq!(s.len(), 2);
        assert_eq!(&text[s[1].char_start..s[1].char_end], "A  mass is seen.");
    }
}
