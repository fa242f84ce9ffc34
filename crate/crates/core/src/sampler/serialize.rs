//! Encoder input layout:
//!
//! ```text
//! [CLS] q1 .. qn [SEP] H1 || s11 | s12 | ... [SEP] H2 || ... [SEP] ... Hc [SEP]
//! ```
//!
//! `||` separates a header from its samples, `|` separates samples, and
//! `[SEP]` closes each column block. A column without samples is just its
//! header. When the input exceeds the token budget, samples are dropped one at
//! a time from the column with the longest sample block (the rightmost such
//! column on ties), always its last sample; the question and headers are
//! never truncated.

use std::ops::Range;

use serde::Serialize;

use super::strategy::SampleSet;
use crate::error::{Error, Result};
use crate::sketch::TableSchema;
use crate::text::tokenize;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const HEADER_DELIM: &str = "||";
pub const SAMPLE_DELIM: &str = "|";
pub const DEFAULT_BUDGET: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Question,
    Header,
    Sample,
    Separator,
}

impl Segment {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SerialToken {
    pub text: String,
    pub segment: Segment,
    /// Column ordinal for header and sample tokens (and a column's
    /// delimiters).
    pub column: Option<usize>,
    /// Position of the sample within its column's list.
    pub sample: Option<usize>,
    /// Whitespace between the previous token of the same piece and this one.
    #[serde(skip_serializing_if = "String::is_empty")]
    pub gap: String,
    /// Whitespace after the last token of a piece.
    #[serde(skip_serializing_if = "String::is_empty")]
    pub trail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SerializedInput {
    pub tokens: Vec<SerialToken>,
    /// Byte span in the original question of each question token, in order.
    pub question_spans: Vec<Range<usize>>,
    pub n_columns: usize,
    pub dropped_samples: usize,
}

fn piece_tokens(text: &str, segment: Segment, column: Option<usize>, sample: Option<usize>) -> Vec<SerialToken> {
    let toks = tokenize(text);
    let mut prev_end = 0;
    let last = toks.len().saturating_sub(1);
    toks.iter()
        .enumerate()
        .map(|(i, t)| {
            let gap = text[prev_end..t.span.start].to_string();
            prev_end = t.span.end;
            SerialToken {
                text: t.text.clone(),
                segment,
                column,
                sample,
                gap,
                trail: if i == last { text[t.span.end..].to_string() } else { String::new() },
            }
        })
        .collect()
}

fn delim(text: &str, column: Option<usize>) -> SerialToken {
    SerialToken {
        text: text.to_string(),
        segment: Segment::Separator,
        column,
        sample: None,
        gap: String::new(),
        trail: String::new(),
    }
}

fn rebuild<'a>(tokens: impl Iterator<Item = &'a SerialToken>) -> String {
    let mut s = String::new();
    for t in tokens {
        s.push_str(&t.gap);
        s.push_str(&t.text);
        s.push_str(&t.trail);
    }
    s
}

pub fn serialize_input(question: &str, schema: &TableSchema, samples: &SampleSet, budget: usize) -> Result<SerializedInput> {
    let n_cols = schema.n_columns();
    let question_toks = piece_tokens(question, Segment::Question, None, None);
    let header_toks: Vec<Vec<SerialToken>> = schema
        .headers
        .iter()
        .enumerate()
        .map(|(c, h)| piece_tokens(h, Segment::Header, Some(c), None))
        .collect();
    let mut sample_toks: Vec<Vec<Vec<SerialToken>>> = (0..n_cols)
        .map(|c| {
            samples
                .columns
                .get(c)
                .map(|list| {
                    list.iter()
                        .enumerate()
                        .map(|(i, s)| piece_tokens(s, Segment::Sample, Some(c), Some(i)))
                        .filter(|t| !t.is_empty())
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect();

    let fixed = 2 + question_toks.len() + header_toks.iter().map(|h| h.len() + 1).sum::<usize>();
    if fixed > budget {
        return Err(Error::Budget { needed: fixed, budget });
    }
    let block_len = |col: &Vec<Vec<SerialToken>>| {
        if col.is_empty() {
            0
        } else {
            col.iter().map(Vec::len).sum::<usize>() + col.len()
        }
    };
    let mut dropped = 0;
    loop {
        let total = fixed + sample_toks.iter().map(block_len).sum::<usize>();
        if total <= budget {
            break;
        }
        let widest = (0..n_cols)
            .max_by_key(|&c| (block_len(&sample_toks[c]), c))
            .expect("schemas have at least one column");
        sample_toks[widest].pop();
        dropped += 1;
    }

    let question_spans = tokenize(question).into_iter().map(|t| t.span).collect();
    let mut tokens = Vec::with_capacity(budget.min(1024));
    tokens.push(delim(CLS, None));
    tokens.extend(question_toks);
    tokens.push(delim(SEP, None));
    for (c, header) in header_toks.into_iter().enumerate() {
        tokens.extend(header);
        for (i, sample) in std::mem::take(&mut sample_toks[c]).into_iter().enumerate() {
            tokens.push(delim(if i == 0 { HEADER_DELIM } else { SAMPLE_DELIM }, Some(c)));
            tokens.extend(sample);
        }
        tokens.push(delim(SEP, Some(c)));
    }
    Ok(SerializedInput {
        tokens,
        question_spans,
        n_columns: n_cols,
        dropped_samples: dropped,
    })
}

impl SerializedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token positions of the question, which always start right after
    /// `[CLS]`.
    pub fn question_range(&self) -> Range<usize> {
        1..1 + self.question_spans.len()
    }

    pub fn header_positions(&self, column: usize) -> Vec<usize> {
        self.positions(|t| t.segment == Segment::Header && t.column == Some(column))
    }

    fn positions(&self, keep: impl Fn(&SerialToken) -> bool) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| keep(t))
            .map(|(i, _)| i)
            .collect()
    }

    /// Header text of each column, recovered from the labelled tokens.
    pub fn headers(&self) -> Vec<String> {
        (0..self.n_columns)
            .map(|c| rebuild(self.tokens.iter().filter(|t| t.segment == Segment::Header && t.column == Some(c))))
            .collect()
    }

    /// Sample texts of each column, recovered from the labelled tokens.
    pub fn samples(&self) -> Vec<Vec<String>> {
        (0..self.n_columns)
            .map(|c| {
                let mut out: Vec<String> = Vec::new();
                let mut current = None;
                for t in self.tokens.iter().filter(|t| t.segment == Segment::Sample && t.column == Some(c)) {
                    if t.sample != current {
                        out.push(String::new());
                        current = t.sample;
                    }
                    let last = out.last_mut().expect("pushed above");
                    last.push_str(&t.gap);
                    last.push_str(&t.text);
                    last.push_str(&t.trail);
                }
                out
            })
            .collect()
    }

    /// Debug rendering of the layout, pieces joined by single spaces.
    pub fn display(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        let mut i = 0;
        while i < self.tokens.len() {
            let t = &self.tokens[i];
            if t.segment == Segment::Separator {
                parts.push(t.text.clone());
                i += 1;
                continue;
            }
            let key = (t.segment, t.column, t.sample);
            let mut j = i;
            while j < self.tokens.len() {
                let u = &self.tokens[j];
                if (u.segment, u.column, u.sample) != key || u.segment == Segment::Separator {
                    break;
                }
                j += 1;
            }
            parts.push(rebuild(self.tokens[i..j].iter()).trim().to_string());
            i = j;
        }
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::strategy::Strategy;

    fn samples(table_id: &str, columns: Vec<Vec<&str>>) -> SampleSet {
        SampleSet {
            table_id: table_id.into(),
            strategy: Strategy::Random,
            k: 3,
            seed: 0,
            columns: columns
                .into_iter()
                .map(|c| c.into_iter().map(String::from).collect())
                .collect(),
        }
    }

    fn rider_schema() -> TableSchema {
        TableSchema::text("2-14125739-3", &["Rider", "Manufacturer", "Laps", "Grid"]).unwrap()
    }

    #[test]
    fn rider_layout() {
        let s = samples(
            "2-14125739-3",
            vec![
                vec!["Nicolas Terol", "Mike Di Meglio", "Stevie Bonsey"],
                vec!["Derbi", "Honda", "KTM"],
                vec!["1", "24", "0"],
                vec!["20", "29", "25"],
            ],
        );
        let input = serialize_input("grid of bmw rider with > 200 laps", &rider_schema(), &s, 512).unwrap();
        assert_eq!(
            input.display(),
            "[CLS] grid of bmw rider with > 200 laps [SEP] Rider || Nicolas Terol | Mike Di Meglio | Stevie Bonsey \
             [SEP] Manufacturer || Derbi | Honda | KTM [SEP] Laps || 1 | 24 | 0 [SEP] Grid || 20 | 29 | 25 [SEP]"
        );
        assert_eq!(input.question_range(), 1..9);
        assert_eq!(input.headers(), ["Rider", "Manufacturer", "Laps", "Grid"]);
        assert_eq!(input.samples()[1], ["Derbi", "Honda", "KTM"]);
        assert_eq!(input.header_positions(0).len(), 1);
    }

    #[test]
    fn no_samples_degenerate_form() {
        let s = SampleSet {
            columns: vec![vec![]; 4],
            ..samples("x", vec![])
        };
        let input = serialize_input("grid of bmw", &rider_schema(), &s, 512).unwrap();
        assert_eq!(
            input.display(),
            "[CLS] grid of bmw [SEP] Rider [SEP] Manufacturer [SEP] Laps [SEP] Grid [SEP]"
        );
    }

    #[test]
    fn truncation_drops_widest_last_samples() {
        let schema = TableSchema::text("t", &["A", "B"]).unwrap();
        // A block: || x | y = 4 tokens; B block: || p q | r s | t u = 9 tokens.
        let s = samples("t", vec![vec!["x", "y"], vec!["p q", "r s", "t u"]]);
        let full = serialize_input("q", &schema, &s, 512).unwrap();
        // [CLS] q [SEP] A ... [SEP] B ... [SEP]
        assert_eq!(full.len(), 3 + 2 + 2 + 4 + 9);
        // Budget forcing two drops: both come off B (9 -> 6 -> 3 tokens).
        let cut = serialize_input("q", &schema, &s, full.len() - 5).unwrap();
        assert_eq!(cut.dropped_samples, 2);
        assert_eq!(cut.samples(), vec![vec!["x", "y"], vec!["p q"]]);
        // One more token forces a third drop; now A is widest (4 > 3).
        let cut = serialize_input("q", &schema, &s, full.len() - 7).unwrap();
        assert_eq!(cut.samples(), vec![vec!["x"], vec!["p q"]]);
        assert!(cut.len() <= full.len() - 7);
    }

    #[test]
    fn budget_too_small_for_headers() {
        let s = SampleSet::empty(
            &crate::sketch::Table::new(rider_schema(), vec![]).unwrap(),
        );
        let err = serialize_input("grid of bmw", &rider_schema(), &s, 8).unwrap_err();
        assert!(matches!(err, Error::Budget { needed: 13, budget: 8 }));
    }

    #[test]
    fn exact_recovery_with_odd_whitespace() {
        let schema = TableSchema::text("t", &["  Semi-Finalist  #1 ", "Leading scorer"]).unwrap();
        let s = samples("t", vec![vec!["Miami "], vec!["Roy : 25", " x"]]);
        let input = serialize_input("visitor roy : 25", &schema, &s, 512).unwrap();
        assert_eq!(input.headers(), schema.headers);
        assert_eq!(input.samples(), vec![vec!["Miami "], vec!["Roy : 25", " x"]]);
    }
}
