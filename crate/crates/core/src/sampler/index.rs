//! Keyword automaton over a table's distinct cell values.
//!
//! Patterns are the normalized cell strings (lowercase, whitespace collapsed).
//! The trie carries failure and dictionary-suffix links, so one left-to-right
//! pass over the question reports every occurrence of every pattern. Matches
//! that split an alphanumeric word are discarded, then overlaps are resolved
//! leftmost-first, longest-first.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::mem::size_of;
use std::ops::Range;
use std::time::Instant;

use crate::sketch::Table;
use crate::text::{normalize_value, NormalizedText};

const NONE: u32 = u32::MAX;
const ROOT: u32 = 0;

#[derive(Debug, Clone, Copy)]
struct Node {
    ch: char,
    first_child: u32,
    next_sibling: u32,
    fail: u32,
    /// Nearest node on the failure chain that ends a pattern.
    dict: u32,
    pattern: u32,
}

impl Node {
    fn new(ch: char) -> Self {
        Node {
            ch,
            first_child: NONE,
            next_sibling: NONE,
            fail: ROOT,
            dict: NONE,
            pattern: NONE,
        }
    }
}

/// A cell found in a question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentMatch {
    pub column: usize,
    pub cell: String,
    /// Byte range in the original question.
    pub span: Range<usize>,
}

/// Distinct non-empty cells per column, in first-occurrence order.
pub fn distinct_values(table: &Table) -> Vec<Vec<String>> {
    (0..table.schema.n_columns())
        .map(|c| {
            let mut seen = std::collections::HashSet::new();
            table
                .column(c)
                .filter(|cell| !cell.trim().is_empty() && seen.insert(*cell))
                .map(str::to_string)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ContentIndex {
    nodes: Vec<Node>,
    /// Pattern length in normalized chars.
    pattern_len: Vec<u32>,
    /// `entries[entry_offsets[p]..entry_offsets[p + 1]]` are the
    /// `(column, distinct index)` cells normalizing to pattern `p`.
    entry_offsets: Vec<u32>,
    entries: Vec<(u32, u32)>,
    distinct: Vec<Vec<String>>,
    cell_count: usize,
    build_seconds: f64,
}

impl ContentIndex {
    pub fn build(table: &Table) -> Self {
        let started = Instant::now();
        let distinct = distinct_values(table);
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut pattern_len = Vec::new();
        let mut raw_entries: Vec<(u32, u32, u32)> = Vec::new();
        let mut nodes = vec![Node::new('\0')];

        for (col, values) in distinct.iter().enumerate() {
            for (i, cell) in values.iter().enumerate() {
                let norm = normalize_value(cell);
                let id = match ids.get(&norm) {
                    Some(&id) => id,
                    None => {
                        let id = pattern_len.len() as u32;
                        pattern_len.push(norm.chars().count() as u32);
                        insert(&mut nodes, &norm, id);
                        ids.insert(norm, id);
                        id
                    }
                };
                raw_entries.push((id, col as u32, i as u32));
            }
        }
        drop(ids);
        raw_entries.sort_unstable();
        let mut entry_offsets = vec![0u32; pattern_len.len() + 1];
        for &(id, _, _) in &raw_entries {
            entry_offsets[id as usize + 1] += 1;
        }
        for i in 0..pattern_len.len() {
            entry_offsets[i + 1] += entry_offsets[i];
        }
        let entries: Vec<(u32, u32)> = raw_entries.into_iter().map(|(_, c, i)| (c, i)).collect();
        link(&mut nodes);
        nodes.shrink_to_fit();

        ContentIndex {
            nodes,
            pattern_len,
            entry_offsets,
            entries,
            distinct,
            cell_count: table.rows.len() * table.schema.n_columns(),
            build_seconds: started.elapsed().as_secs_f64(),
        }
    }

    pub fn n_patterns(&self) -> usize {
        self.pattern_len.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn build_seconds(&self) -> f64 {
        self.build_seconds
    }

    pub fn n_columns(&self) -> usize {
        self.distinct.len()
    }

    pub fn distinct(&self, column: usize) -> &[String] {
        &self.distinct[column]
    }

    /// Heap bytes held by the index.
    pub fn memory_bytes(&self) -> usize {
        let strings: usize = self
            .distinct
            .iter()
            .map(|col| col.capacity() * size_of::<String>() + col.iter().map(String::capacity).sum::<usize>())
            .sum();
        self.nodes.capacity() * size_of::<Node>()
            + self.pattern_len.capacity() * size_of::<u32>()
            + self.entry_offsets.capacity() * size_of::<u32>()
            + self.entries.capacity() * size_of::<(u32, u32)>()
            + self.distinct.capacity() * size_of::<Vec<String>>()
            + strings
    }

    /// Word-bounded, non-overlapping cell matches in question order. A pattern
    /// shared by several cells yields one match per cell.
    pub fn extract_matches(&self, question: &str) -> Vec<ContentMatch> {
        let text = NormalizedText::new(question);
        let mut candidates: Vec<(usize, usize, u32)> = Vec::new();
        let mut state = ROOT;
        for (i, &c) in text.chars.iter().enumerate() {
            loop {
                if let Some(next) = child(&self.nodes, state, c) {
                    state = next;
                    break;
                }
                if state == ROOT {
                    break;
                }
                state = self.nodes[state as usize].fail;
            }
            let mut out = if self.nodes[state as usize].pattern != NONE {
                state
            } else {
                self.nodes[state as usize].dict
            };
            while out != NONE {
                let p = self.nodes[out as usize].pattern;
                let end = i + 1;
                let start = end - self.pattern_len[p as usize] as usize;
                if text.is_word_bounded(start, end) {
                    candidates.push((start, end, p));
                }
                out = self.nodes[out as usize].dict;
            }
        }
        candidates.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));

        let mut matches = Vec::new();
        let mut cursor = 0;
        for (start, end, p) in candidates {
            if start < cursor {
                continue;
            }
            cursor = end;
            let span = text.source_span(start, end);
            let lo = self.entry_offsets[p as usize] as usize;
            let hi = self.entry_offsets[p as usize + 1] as usize;
            for &(col, i) in &self.entries[lo..hi] {
                matches.push(ContentMatch {
                    column: col as usize,
                    cell: self.distinct[col as usize][i as usize].clone(),
                    span: span.clone(),
                });
            }
        }
        matches
    }
}

fn child(nodes: &[Node], parent: u32, c: char) -> Option<u32> {
    let mut cur = nodes[parent as usize].first_child;
    while cur != NONE {
        let n = &nodes[cur as usize];
        if n.ch == c {
            return Some(cur);
        }
        cur = n.next_sibling;
    }
    None
}

fn insert(nodes: &mut Vec<Node>, pattern: &str, id: u32) {
    let mut state = ROOT;
    for c in pattern.chars() {
        state = match child(nodes, state, c) {
            Some(next) => next,
            None => {
                let idx = nodes.len() as u32;
                let mut node = Node::new(c);
                node.next_sibling = nodes[state as usize].first_child;
                nodes.push(node);
                nodes[state as usize].first_child = idx;
                idx
            }
        };
    }
    nodes[state as usize].pattern = id;
}

/// Breadth-first computation of failure and dictionary links.
fn link(nodes: &mut [Node]) {
    let mut queue = VecDeque::new();
    let mut cur = nodes[ROOT as usize].first_child;
    while cur != NONE {
        nodes[cur as usize].fail = ROOT;
        queue.push_back(cur);
        cur = nodes[cur as usize].next_sibling;
    }
    while let Some(u) = queue.pop_front() {
        let mut v = nodes[u as usize].first_child;
        while v != NONE {
            let c = nodes[v as usize].ch;
            let mut f = nodes[u as usize].fail;
            let target = loop {
                if let Some(t) = child(nodes, f, c) {
                    break t;
                }
                if f == ROOT {
                    break ROOT;
                }
                f = nodes[f as usize].fail;
            };
            nodes[v as usize].fail = target;
            nodes[v as usize].dict = if nodes[target as usize].pattern != NONE {
                target
            } else {
                nodes[target as usize].dict
            };
            queue.push_back(v);
            v = nodes[v as usize].next_sibling;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::TableSchema;

    pub(crate) fn table(headers: &[&str], rows: &[&[&str]]) -> Table {
        Table::new(
            TableSchema::text("t", headers).unwrap(),
            rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect(),
        )
        .unwrap()
    }

    fn tennis() -> Table {
        table(
            &["Result", "Court", "Player"],
            &[
                &["winner", "clay", "Rafael Nadal"],
                &["runner-up", "grass", "Novak Djokovic"],
                &["winner", "hard", "Jarkko Nieminen"],
            ],
        )
    }

    #[test]
    fn tennis_index_contents() {
        let idx = ContentIndex::build(&tennis());
        // winner, runner-up, clay, grass, hard, and three players.
        assert_eq!(idx.n_patterns(), 8);
        assert_eq!(idx.distinct(0), ["winner", "runner-up"]);
        assert_eq!(idx.cell_count(), 9);
        let m = idx.extract_matches("rafael nadal");
        assert_eq!(m, vec![ContentMatch { column: 2, cell: "Rafael Nadal".into(), span: 0..12 }]);
    }

    #[test]
    fn tennis_question_matches() {
        let idx = ContentIndex::build(&tennis());
        let q = "courts with Rafael Nadal as winner";
        let m = idx.extract_matches(q);
        let got: Vec<_> = m.iter().map(|m| (m.column, m.cell.as_str(), &q[m.span.clone()])).collect();
        assert_eq!(got, vec![(2, "Rafael Nadal", "Rafael Nadal"), (0, "winner", "winner")]);
    }

    #[test]
    fn no_match_for_unknown_league() {
        let t = table(&["Country", "League"], &[&["USA", "NHL"], &["USA", "MLB"], &["USA", "NBA"]]);
        let idx = ContentIndex::build(&t);
        assert!(idx.extract_matches("Which countries hosted the MHL league?").is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let t = table(&["City"], &[&["York"], &["New York"]]);
        let idx = ContentIndex::build(&t);
        let m = idx.extract_matches("flights to new york today");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].cell, "New York");
    }

    #[test]
    fn word_boundaries_and_empty() {
        let t = table(&["Code"], &[&["ab"], &["b"], &[""]]);
        let idx = ContentIndex::build(&t);
        assert_eq!(idx.n_patterns(), 2);
        assert!(idx.extract_matches("cab abc").is_empty());
        assert_eq!(idx.extract_matches("b-ab").len(), 2);
        let empty = ContentIndex::build(&table(&["a"], &[]));
        assert_eq!(empty.n_patterns(), 0);
        assert!(empty.extract_matches("anything").is_empty());
    }

    #[test]
    fn duplicates_collapse_and_case_variants_share_pattern() {
        let t = table(&["Result", "Species"], &[&["winner", "Fox"], &["winner", "fox"]]);
        let idx = ContentIndex::build(&t);
        assert_eq!(idx.distinct(0), ["winner"]);
        assert_eq!(idx.n_patterns(), 2);
        let m = idx.extract_matches("fox tv series female");
        let cells: Vec<_> = m.iter().map(|m| m.cell.as_str()).collect();
        assert_eq!(cells, ["Fox", "fox"]);
    }

    #[test]
    fn failure_links_find_suffix_patterns() {
        // "he" inside "she" is not word-bounded, but "he" after a failed
        // "hers" prefix must still be found.
        let t = table(&["w"], &[&["he"], &["hers"], &["she"]]);
        let idx = ContentIndex::build(&t);
        let m = idx.extract_matches("she said he hero");
        let cells: Vec<_> = m.iter().map(|m| m.cell.as_str()).collect();
        assert_eq!(cells, ["she", "he"]);
    }
}
