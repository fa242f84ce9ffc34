use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::{distinct_values, ContentIndex};
use crate::error::{Error, Result};
use crate::sketch::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// No table content.
    None,
    /// Question-agnostic random samples, drawn once per table.
    #[serde(rename = "rand")]
    Random,
    /// Matched cells first, random fill for the rest.
    #[serde(rename = "rel")]
    Relevance,
    /// At most one exactly matched cell per column, no fill.
    #[serde(rename = "em1")]
    ExactMatchOne,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Random => "rand",
            Strategy::Relevance => "rel",
            Strategy::ExactMatchOne => "em1",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Strategy::None),
            "rand" | "random" => Ok(Strategy::Random),
            "rel" | "relevance" => Ok(Strategy::Relevance),
            "em1" | "em:1" => Ok(Strategy::ExactMatchOne),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// A strategy with its per-column sample count, written `rand:3`, `rel:3`,
/// `em1`, or `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SamplingSpec {
    pub strategy: Strategy,
    pub k: usize,
}

impl SamplingSpec {
    pub const NONE: SamplingSpec = SamplingSpec {
        strategy: Strategy::None,
        k: 0,
    };

    pub fn new(strategy: Strategy, k: usize) -> Self {
        let k = match strategy {
            Strategy::None => 0,
            Strategy::ExactMatchOne => 1,
            _ => k,
        };
        SamplingSpec { strategy, k }
    }
}

impl fmt::Display for SamplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Strategy::None | Strategy::ExactMatchOne => write!(f, "{}", self.strategy),
            s => write!(f, "{s}:{}", self.k),
        }
    }
}

impl From<SamplingSpec> for String {
    fn from(s: SamplingSpec) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SamplingSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SamplingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = match s.split_once(':') {
            Some((name, k)) if name != "em" => {
                let k = k
                    .parse()
                    .map_err(|_| Error::Config(format!("bad sample count in `{s}`")))?;
                (name, k)
            }
            _ => (s, 3),
        };
        Ok(SamplingSpec::new(name.parse()?, k))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub table_id: String,
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    /// Samples per column, each list free of duplicates.
    pub columns: Vec<Vec<String>>,
}

impl SampleSet {
    pub fn empty(table: &Table) -> Self {
        SampleSet {
            table_id: table.id().to_string(),
            strategy: Strategy::None,
            k: 0,
            seed: 0,
            columns: vec![Vec::new(); table.schema.n_columns()],
        }
    }

    pub fn memory_bytes(&self) -> usize {
        self.columns
            .iter()
            .map(|c| std::mem::size_of::<Vec<String>>() + c.iter().map(|s| s.capacity() + 24).sum::<usize>())
            .sum()
    }
}

fn column_rng(seed: u64, column: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (column as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Up to `need` values of `pool` not in `taken`, drawn without replacement.
fn fill(pool: &[String], taken: &HashSet<&str>, need: usize, rng: &mut impl Rng) -> Vec<String> {
    if need == 0 {
        return Vec::new();
    }
    if pool.len() <= 4 * (need + taken.len()) {
        let free: Vec<&String> = pool.iter().filter(|v| !taken.contains(v.as_str())).collect();
        let n = need.min(free.len());
        return index::sample(rng, free.len(), n).into_iter().map(|i| free[i].clone()).collect();
    }
    // Large pool: rejection sampling keeps the cost independent of its size.
    let mut picked = HashSet::new();
    let mut out = Vec::with_capacity(need);
    while out.len() < need {
        let i = rng.gen_range(0..pool.len());
        if !taken.contains(pool[i].as_str()) && picked.insert(i) {
            out.push(pool[i].clone());
        }
    }
    out
}

/// Question-agnostic samples: per column, `min(k, distinct)` distinct
/// non-empty cells drawn without replacement.
pub fn sample_random(table: &Table, k: usize, seed: u64) -> SampleSet {
    let distinct = distinct_values(table);
    sample_random_from(table.id(), &distinct, k, seed)
}

pub(crate) fn sample_random_from(table_id: &str, distinct: &[Vec<String>], k: usize, seed: u64) -> SampleSet {
    let empty = HashSet::new();
    let columns = distinct
        .iter()
        .enumerate()
        .map(|(c, pool)| fill(pool, &empty, k, &mut column_rng(seed, c)))
        .collect();
    SampleSet {
        table_id: table_id.to_string(),
        strategy: Strategy::Random,
        k,
        seed,
        columns,
    }
}

/// Matched cells first (question order, truncated at `k`), then a seeded
/// random fill from the column's remaining distinct values.
pub fn sample_relevance(table: &Table, index: &ContentIndex, question: &str, k: usize, seed: u64) -> SampleSet {
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); index.n_columns()];
    for m in index.extract_matches(question) {
        let col = &mut columns[m.column];
        if col.len() < k && !col.contains(&m.cell) {
            col.push(m.cell);
        }
    }
    for (c, col) in columns.iter_mut().enumerate() {
        let need = k - col.len();
        let taken: HashSet<&str> = col.iter().map(String::as_str).collect();
        let extra = fill(index.distinct(c), &taken, need, &mut column_rng(seed, c));
        col.extend(extra);
    }
    SampleSet {
        table_id: table.id().to_string(),
        strategy: Strategy::Relevance,
        k,
        seed,
        columns,
    }
}

/// The earliest exact match per column, if any; no random fill.
pub fn sample_exact_match_one(table: &Table, index: &ContentIndex, question: &str) -> SampleSet {
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); index.n_columns()];
    for m in index.extract_matches(question) {
        if columns[m.column].is_empty() {
            columns[m.column].push(m.cell);
        }
    }
    SampleSet {
        table_id: table.id().to_string(),
        strategy: Strategy::ExactMatchOne,
        k: 1,
        seed: 0,
        columns,
    }
}

pub fn write_sample_sets<'a>(path: impl AsRef<Path>, sets: impl IntoIterator<Item = &'a SampleSet>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sets {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sample_sets(path: impl AsRef<Path>) -> Result<Vec<SampleSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::TableSchema;

    fn table(headers: &[&str], rows: &[&[&str]]) -> Table {
        Table::new(
            TableSchema::text("t", headers).unwrap(),
            rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect(),
        )
        .unwrap()
    }

    fn league() -> Table {
        table(
            &["Country", "League"],
            &[&["USA", "NHL"], &["USA", "MLB"], &["Canada", "NBA"], &["USA", "NHL"]],
        )
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

    fn sorted(v: &[String]) -> Vec<&str> {
        let mut s: Vec<&str> = v.iter().map(String::as_str).collect();
        s.sort();
        s
    }

    #[test]
    fn random_sampling_rules() {
        let t = league();
        let zero = sample_random(&t, 0, 1);
        assert!(zero.columns.iter().all(Vec::is_empty));
        let all = sample_random(&t, 5, 1);
        assert_eq!(sorted(&all.columns[1]), ["MLB", "NBA", "NHL"]);
        assert_eq!(sorted(&all.columns[0]), ["Canada", "USA"]);
        assert_eq!(sample_random(&t, 2, 9), sample_random(&t, 2, 9));
        let two = sample_random(&t, 2, 9);
        assert_eq!(two.columns[1].len(), 2);
    }

    #[test]
    fn relevance_falls_back_to_random() {
        let t = league();
        let idx = ContentIndex::build(&t);
        let s = sample_relevance(&t, &idx, "Which countries hosted the MHL league?", 3, 4);
        assert_eq!(sorted(&s.columns[1]), ["MLB", "NBA", "NHL"]);
    }

    #[test]
    fn relevance_puts_matches_first() {
        let t = table(
            &["Animal Name", "Species", "Gender"],
            &[
                &["Jack", "Badger", "male"],
                &["The Big Owl", "Owl", "female"],
                &["The Wild Boar", "Boar", "male"],
                &["Fenn", "Fox", "female"],
                &["Stoat", "Stoat", "male"],
            ],
        );
        let idx = ContentIndex::build(&t);
        let s = sample_relevance(&t, &idx, "fox tv series female", 3, 0);
        assert_eq!(s.columns[1][0], "Fox");
        assert_eq!(s.columns[2][0], "female");
        assert_eq!(s.columns[1].len(), 3);
    }

    #[test]
    fn relevance_capacity_rule() {
        let t = table(&["City"], &[&["york"], &["leeds"], &["bath"], &["hull"]]);
        let idx = ContentIndex::build(&t);
        let s = sample_relevance(&t, &idx, "hull bath leeds york", 2, 0);
        assert_eq!(s.columns[0], ["hull", "bath"]);
    }

    #[test]
    fn exact_match_one() {
        let t = league();
        let idx = ContentIndex::build(&t);
        let s = sample_exact_match_one(&t, &idx, "Which countries hosted the MHL league?");
        assert!(s.columns.iter().all(Vec::is_empty));

        let t = tennis();
        let idx = ContentIndex::build(&t);
        let s = sample_exact_match_one(&t, &idx, "courts with Rafael Nadal as winner");
        assert_eq!(s.columns, vec![vec!["winner".to_string()], vec![], vec!["Rafael Nadal".to_string()]]);

        let s = sample_exact_match_one(&t, &idx, "clay or hard courts");
        assert_eq!(s.columns[1], ["clay"]);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("rand:5".parse::<SamplingSpec>().unwrap(), SamplingSpec::new(Strategy::Random, 5));
        assert_eq!("rel:3".parse::<SamplingSpec>().unwrap().to_string(), "rel:3");
        assert_eq!("em1".parse::<SamplingSpec>().unwrap(), SamplingSpec::new(Strategy::ExactMatchOne, 1));
        assert_eq!("em:1".parse::<SamplingSpec>().unwrap().strategy, Strategy::ExactMatchOne);
        assert_eq!("none".parse::<SamplingSpec>().unwrap(), SamplingSpec::NONE);
        assert!("bogus".parse::<SamplingSpec>().is_err());
        assert!("rand:x".parse::<SamplingSpec>().is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let t = league();
        let sets = vec![sample_random(&t, 2, 1), SampleSet::empty(&t)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        write_sample_sets(&path, &sets).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"table_id":"t","strategy":"rand","k":2,"seed":1,"columns":"#));
        assert_eq!(read_sample_sets(&path).unwrap(), sets);
    }
}
