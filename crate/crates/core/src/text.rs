//! Shared text handling: value normalization, word tokenization with byte
//! offsets, and the normalized view used by content matching.

use std::ops::Range;

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_value(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// A word token with its byte range in the source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Range<usize>,
}

impl Token {
    pub fn lower(&self) -> String {
        self.text.to_lowercase()
    }
}

/// Splits text into maximal alphanumeric runs and single non-space symbols.
///
/// `"Roy : 25"` gives `["Roy", ":", "25"]`; whitespace never yields a token.
pub fn tokenize(s: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in s.char_indices() {
        if c.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
            continue;
        }
        if let Some(start) = run_start.take() {
            tokens.push(Token {
                text: s[start..i].to_string(),
                span: start..i,
            });
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            tokens.push(Token {
                text: s[i..end].to_string(),
                span: i..end,
            });
        }
    }
    if let Some(start) = run_start {
        tokens.push(Token {
            text: s[start..].to_string(),
            span: start..s.len(),
        });
    }
    tokens
}

/// Normalized (lowercased, whitespace-collapsed) text as a char vector, with
/// each char mapped back to the byte range of the source char it came from.
#[derive(Debug, Clone)]
pub struct NormalizedText {
    pub chars: Vec<char>,
    pub source: Vec<Range<usize>>,
}

impl NormalizedText {
    pub fn new(s: &str) -> Self {
        let mut chars = Vec::with_capacity(s.len());
        let mut source = Vec::with_capacity(s.len());
        let mut pending_space: Option<Range<usize>> = None;
        for (i, c) in s.char_indices() {
            let range = i..i + c.len_utf8();
            if c.is_whitespace() {
                if !chars.is_empty() && pending_space.is_none() {
                    pending_space = Some(range);
                }
                continue;
            }
            if let Some(sp) = pending_space.take() {
                chars.push(' ');
                source.push(sp);
            }
            for lc in c.to_lowercase() {
                chars.push(lc);
                source.push(range.clone());
            }
        }
        NormalizedText { chars, source }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// True when a match over `start..end` does not split an alphanumeric word
    /// at either edge.
    pub fn is_word_bounded(&self, start: usize, end: usize) -> bool {
        let splits = |a: usize, b: usize| {
            self.chars[a].is_alphanumeric() && self.chars[b].is_alphanumeric()
        };
        if start > 0 && splits(start - 1, start) {
            return false;
        }
        if end < self.chars.len() && end > 0 && splits(end - 1, end) {
            return false;
        }
        true
    }

    /// Byte range in the source covered by normalized chars `start..end`.
    pub fn source_span(&self, start: usize, end: usize) -> Range<usize> {
        self.source[start].start..self.source[end - 1].end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_and_lowercases() {
        assert_eq!(normalize_value("  Fox \t  Hunter "), "fox hunter");
        assert_eq!(normalize_value("Fox "), normalize_value("fox"));
        assert_eq!(normalize_value(""), "");
    }

    #[test]
    fn tokenize_offsets() {
        let q = "grid of bmw rider with > 200 laps";
        let toks = tokenize(q);
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(
            texts,
            ["grid", "of", "bmw", "rider", "with", ">", "200", "laps"]
        );
        for t in &toks {
            assert_eq!(&q[t.span.clone()], t.text);
        }
        let toks = tokenize("Charlie Freedman/Eddie Fletcher?");
        assert_eq!(toks.len(), 6);
        assert_eq!(toks[2].text, "/");
    }

    #[test]
    fn normalized_text_maps_back() {
        let q = "  Rafael   NADAL wins";
        let n = NormalizedText::new(q);
        let s: String = n.chars.iter().collect();
        assert_eq!(s, "rafael nadal wins");
        assert_eq!(&q[n.source_span(0, 12)], "Rafael   NADAL");
        assert!(n.is_word_bounded(0, 6));
        assert!(!n.is_word_bounded(0, 5));
        assert!(!n.is_word_bounded(1, 6));
    }
}
