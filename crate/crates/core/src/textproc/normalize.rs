/// Normalized text plus the byte range in the original text that produced
/// each normalized byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    starts: Vec<usize>,
    ends: Vec<usize>,
}

impl Normalized {
    /// Original byte range covering normalized bytes `start..end`.
    pub fn original_span(&self, start: usize, end: usize) -> (usize, usize) {
        if start >= end || end > self.starts.len() {
            let at = self.starts.get(start).copied().unwrap_or_else(|| self.ends.last().copied().unwrap_or(0));
            return (at, at);
        }
        (self.starts[start], self.ends[end - 1])
    }
}

/// Lowercases, collapses whitespace runs to one space, and trims.
pub fn normalize(text: &str) -> Normalized {
    let mut out = String::with_capacity(text.len());
    let mut starts = Vec::with_capacity(text.len());
    let mut ends = Vec::with_capacity(text.len());
    let mut pending_space: Option<(usize, usize)> = None;
    for (i, c) in text.char_indices() {
        let end = i + c.len_utf8();
        if c.is_whitespace() {
            pending_space = Some(match pending_space {
                Some((s, _)) => (s, end),
                None => (i, end),
            });
            continue;
        }
        if let Some((s, e)) = pending_space.take() {
            if !out.is_empty() {
                out.push(' ');
                starts.push(s);
                ends.push(e);
            }
        }
        let before = out.len();
        out.extend(c.to_lowercase());
        for _ in before..out.len() {
            starts.push(i);
            ends.push(end);
        }
    }
    Normalized {
        text: out,
        starts,
        ends,
    }
}
