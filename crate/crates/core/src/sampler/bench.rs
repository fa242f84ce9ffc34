//! Setup time, memory, and per-query latency of the sampling strategies over
//! a ladder of synthetic table sizes.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::index::{distinct_values, ContentIndex};
use super::serialize::serialize_input;
use super::strategy::{sample_exact_match_one, sample_random_from, sample_relevance, SampleSet, Strategy};
use crate::sketch::{ColumnType, Table, TableSchema};

const ADJECTIVES: &[&str] = &[
    "silent", "crimson", "lost", "golden", "broken", "hidden", "last", "dark", "bright", "wild", "frozen", "burning",
    "quiet", "electric", "distant", "secret", "lonely", "savage", "gentle", "iron", "paper", "glass", "midnight",
    "northern", "southern", "eastern", "western", "final", "first", "little", "grand", "sweet", "bitter", "blue",
    "red", "green", "black", "white", "silver", "velvet",
];
const NOUNS: &[&str] = &[
    "river", "city", "dream", "heart", "road", "storm", "garden", "empire", "shadow", "island", "kingdom", "window",
    "mountain", "forest", "ocean", "station", "machine", "letter", "promise", "journey", "harbor", "mirror", "signal",
    "summer", "winter", "horizon", "bridge", "castle", "desert", "valley", "frontier", "planet", "circus", "academy",
    "hotel", "factory", "theater", "orchard", "lantern", "compass",
];
const GENRES: &[&str] = &[
    "drama", "comedy", "thriller", "horror", "western", "musical", "documentary", "animation", "romance", "crime",
    "fantasy", "mystery", "war", "biography", "sport", "history", "family", "adventure", "noir", "action",
];
const FIRST: &[&str] = &[
    "anna", "ben", "carla", "dev", "elena", "farid", "greta", "hugo", "iris", "jonas", "kira", "luca", "mona", "nils",
    "olga", "pablo", "rosa", "sami", "tara", "umar",
];
const LAST: &[&str] = &[
    "adams", "brandt", "cruz", "dietz", "evans", "fischer", "garcia", "horvat", "ito", "jensen", "kovac", "lopez",
    "meyer", "novak", "ortiz", "petrov", "quinn", "rossi", "schmidt", "tanaka",
];

/// Movie-metadata-like table with `rows` rows over five columns.
pub fn bench_table(rows: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = TableSchema::new(
        format!("bench-{rows}"),
        ["Title", "Year", "Genre", "Director", "Votes"].map(String::from).to_vec(),
        vec![ColumnType::Text, ColumnType::Real, ColumnType::Text, ColumnType::Text, ColumnType::Real],
    )
    .expect("static schema");
    let data = (0..rows)
        .map(|_| {
            vec![
                format!("{} {}", ADJECTIVES.choose(&mut rng).unwrap(), NOUNS.choose(&mut rng).unwrap()),
                rng.gen_range(1900..=2023).to_string(),
                GENRES.choose(&mut rng).unwrap().to_string(),
                format!("{} {}", FIRST.choose(&mut rng).unwrap(), LAST.choose(&mut rng).unwrap()),
                rng.gen_range(0..rows.max(10) as u64 * 2).to_string(),
            ]
        })
        .collect();
    Table::new(schema, data).expect("rows match schema")
}

/// Keyword questions mentioning one or two cells of the table, sometimes with
/// a value that is not in it.
pub fn bench_questions(table: &Table, n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let row = &table.rows[rng.gen_range(0..table.rows.len())];
            let target = &table.schema.headers[rng.gen_range(0..row.len())];
            let a = &row[rng.gen_range(0..row.len())];
            if rng.gen_bool(0.5) {
                let b = &row[rng.gen_range(0..row.len())];
                format!("{} {} with {}", target.to_lowercase(), a.to_lowercase(), b.to_lowercase())
            } else {
                format!("{} of {} unknown entry", target.to_lowercase(), a.to_lowercase())
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub rows: Vec<usize>,
    pub strategy: Strategy,
    pub k: usize,
    pub n_queries: usize,
    pub budget: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            rows: vec![1_000, 100_000, 1_000_000],
            strategy: Strategy::Relevance,
            k: 3,
            n_queries: 200,
            budget: super::serialize::DEFAULT_BUDGET,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub rows: usize,
    pub cells: usize,
    /// Index build time; `None` when the strategy needs no index.
    pub setup_seconds: Option<f64>,
    /// Heap bytes held by the index; `None` when there is none.
    pub peak_memory_bytes: Option<usize>,
    /// Offline sample generation for the random strategy.
    pub offline_sampling_seconds: Option<f64>,
    pub sample_set_bytes: Option<usize>,
    pub patterns: Option<usize>,
    /// Median over the queries; `None` when no queries were run.
    pub per_query_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub strategy: Strategy,
    pub k: usize,
    pub n_queries: usize,
    pub rows: Vec<BenchRow>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[mid] } else { 0.5 * (xs[mid - 1] + xs[mid]) })
}

pub fn bench_one(table: &Table, config: &BenchConfig) -> BenchRow {
    let questions = bench_questions(table, config.n_queries, config.seed);
    let mut row = BenchRow {
        rows: table.rows.len(),
        cells: table.rows.len() * table.schema.n_columns(),
        setup_seconds: None,
        peak_memory_bytes: None,
        offline_sampling_seconds: None,
        sample_set_bytes: None,
        patterns: None,
        per_query_seconds: None,
    };
    let mut times = Vec::with_capacity(questions.len());
    match config.strategy {
        Strategy::None | Strategy::Random => {
            let samples = if config.strategy == Strategy::Random {
                let started = Instant::now();
                let distinct = distinct_values(table);
                let s = sample_random_from(table.id(), &distinct, config.k, config.seed);
                row.offline_sampling_seconds = Some(started.elapsed().as_secs_f64());
                row.sample_set_bytes = Some(s.memory_bytes());
                s
            } else {
                SampleSet::empty(table)
            };
            for q in &questions {
                let started = Instant::now();
                let input = serialize_input(q, &table.schema, &samples, config.budget);
                std::hint::black_box(&input);
                times.push(started.elapsed().as_secs_f64());
            }
        }
        Strategy::Relevance | Strategy::ExactMatchOne => {
            let index = ContentIndex::build(table);
            row.setup_seconds = Some(index.build_seconds());
            row.peak_memory_bytes = Some(index.memory_bytes());
            row.patterns = Some(index.n_patterns());
            for (i, q) in questions.iter().enumerate() {
                let started = Instant::now();
                let samples = if config.strategy == Strategy::Relevance {
                    sample_relevance(table, &index, q, config.k, config.seed.wrapping_add(i as u64))
                } else {
                    sample_exact_match_one(table, &index, q)
                };
                let input = serialize_input(q, &table.schema, &samples, config.budget);
                std::hint::black_box(&input);
                times.push(started.elapsed().as_secs_f64());
            }
        }
    }
    row.per_query_seconds = median(times);
    row
}

/// Runs the ladder; tables are generated and dropped one size at a time.
pub fn bench_sampling(config: &BenchConfig) -> BenchReport {
    let rows = config
        .rows
        .iter()
        .map(|&n| {
            let table = bench_table(n.max(1), config.seed);
            bench_one(&table, config)
        })
        .collect();
    BenchReport {
        strategy: config.strategy,
        k: config.k,
        n_queries: config.n_queries,
        rows,
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_queries_reports_setup_only() {
        let cfg = BenchConfig {
            rows: vec![200],
            n_queries: 0,
            ..BenchConfig::default()
        };
        let report = bench_sampling(&cfg);
        let row = &report.rows[0];
        assert!(row.setup_seconds.is_some());
        assert!(row.peak_memory_bytes.unwrap() > 0);
        assert!(row.per_query_seconds.is_none());
        assert_eq!(row.cells, 1000);
    }

    #[test]
    fn random_reports_no_index() {
        let cfg = BenchConfig {
            rows: vec![100],
            strategy: Strategy::Random,
            n_queries: 5,
            ..BenchConfig::default()
        };
        let row = &bench_sampling(&cfg).rows[0];
        assert!(row.setup_seconds.is_none());
        assert!(row.peak_memory_bytes.is_none());
        assert!(row.offline_sampling_seconds.is_some());
        assert!(row.per_query_seconds.is_some());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<_> = [1.0, 10.0, 100.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(0.8))).collect();
        assert!((log_log_slope(&pts) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn bench_questions_mention_cells() {
        let t = bench_table(50, 1);
        let idx = ContentIndex::build(&t);
        let qs = bench_questions(&t, 20, 2);
        assert!(qs.iter().all(|q| !idx.extract_matches(q).is_empty()));
    }
}
