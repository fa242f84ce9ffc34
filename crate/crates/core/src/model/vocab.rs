use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::sampler::{CLS, HEADER_DELIM, SAMPLE_DELIM, SEP};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const SPECIALS: [&str; 6] = [PAD, UNK, CLS, SEP, HEADER_DELIM, SAMPLE_DELIM];

/// Lowercased token vocabulary. Unknown tokens hash into a fixed number of
/// extra buckets so that equal unseen strings still share an embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    oov_buckets: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Vocab {
    /// Specials first, then tokens seen at least `min_count` times in
    /// lexicographic order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize, oov_buckets: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t.to_lowercase()).or_default() += 1;
        }
        let mut list: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        list.extend(
            counts
                .into_iter()
                .filter(|(t, n)| *n >= min_count.max(1) && !SPECIALS.contains(&t.as_str()))
                .map(|(t, _)| t),
        );
        Self::from_tokens(list, oov_buckets)
    }

    pub fn from_tokens(tokens: Vec<String>, oov_buckets: usize) -> Self {
        let mut v = Vocab {
            tokens,
            oov_buckets,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup table, e.g. after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn known(&self) -> usize {
        self.tokens.len()
    }

    pub fn oov_buckets(&self) -> usize {
        self.oov_buckets
    }

    /// Rows needed in the embedding table.
    pub fn size(&self) -> usize {
        self.tokens.len() + self.oov_buckets
    }

    pub fn id(&self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let lower = token.to_lowercase();
        if let Some(&i) = self.index.get(&lower) {
            return i;
        }
        if self.oov_buckets == 0 {
            1
        } else {
            self.tokens.len() + (fnv1a(&lower) % self.oov_buckets as u64) as usize
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}
