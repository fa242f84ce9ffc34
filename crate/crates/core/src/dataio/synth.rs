//! Deterministic synthetic tables and questions for desk-scale experiments.
//!
//! Every gold sketch yields two questions: a verbose, full-sentence one and a
//! short keyword-style one. Columns draw values from archetype pools; a
//! configurable share of columns get a neutral header ("Entry", "Label", ...)
//! that says nothing about their content, so the only way to resolve a value
//! in such a column is to look at the table.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Corpus, Split, TableMap};
use crate::executor::execute;
use crate::sketch::{AggOp, ColumnType, CondOp, Condition, Example, Provenance, SqlSketch, Table, TableSchema};
use crate::text::normalize_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Person,
    Brand,
    SmallInt,
    Year,
    Category,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Person,
        Archetype::Brand,
        Archetype::SmallInt,
        Archetype::Year,
        Archetype::Category,
    ];

    pub fn is_numeric(self) -> bool {
        matches!(self, Archetype::SmallInt | Archetype::Year)
    }
}

#[derive(Debug, Clone)]
pub struct ValuePools {
    pub first_names: Vec<String>,
    pub last_names: Vec<String>,
    pub brands: Vec<String>,
    pub categories: Vec<String>,
    pub small_int_max: u32,
    pub years: (u32, u32),
    /// Headers per archetype; column headers are drawn without repeats.
    pub headers: BTreeMap<Archetype, Vec<String>>,
    pub neutral_headers: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for ValuePools {
    fn default() -> Self {
        let headers = BTreeMap::from([
            (Archetype::Person, strings(&["Player", "Rider", "Driver", "Owner", "Coach", "Artist", "Director"])),
            (Archetype::Brand, strings(&["Manufacturer", "Team", "Sponsor", "Label", "Make", "Supplier"])),
            (Archetype::SmallInt, strings(&["Laps", "Grid", "Jersey", "Points", "Goals", "Wins", "Rank"])),
            (Archetype::Year, strings(&["Year", "Season", "Founded", "Debut"])),
            (Archetype::Category, strings(&["Result", "Court", "Position", "Status", "Region", "Surface"])),
        ]);
        ValuePools {
            first_names: strings(&[
                "rafael", "novak", "maria", "nicolas", "mike", "stevie", "charlie", "eddie", "roger", "andy",
                "serena", "venus", "marco", "lena", "oscar", "ines", "tomas", "julia", "pavel", "nina",
            ]),
            last_names: strings(&[
                "nadal", "djokovic", "herrera", "terol", "meglio", "bonsey", "freedman", "fletcher", "federer",
                "murray", "williams", "rossi", "berg", "silva", "costa", "novak", "kowalski", "tanaka", "dubois",
                "moreau",
            ]),
            brands: strings(&[
                "honda", "ktm", "derbi", "bmw", "yamaha", "ducati", "aprilia", "suzuki", "gilera", "kawasaki",
                "acme", "zenith", "orion", "vertex", "nova", "apex", "summit", "falcon", "titan", "comet",
            ]),
            categories: strings(&[
                "winner", "runner-up", "clay", "grass", "hard", "carpet", "forward", "guard", "center", "north",
                "south", "east", "west", "active", "retired", "pending", "gold", "silver", "bronze", "indoor",
            ]),
            small_int_max: 99,
            years: (1950, 2023),
            headers,
            neutral_headers: strings(&[
                "Entry", "Item", "Field", "Detail", "Info", "Tag", "Attribute", "Record", "Note", "Key",
            ]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_tables: usize,
    pub rows_per_table: usize,
    pub min_columns: usize,
    pub max_columns: usize,
    pub questions_per_table: usize,
    /// Upper bound on WHERE conditions per generated sketch.
    pub max_conds: usize,
    /// Probability that a column gets a neutral, content-free header.
    pub neutral_header_rate: f64,
    /// Probability that a keyword question drops a where-column header.
    pub omit_where_header_rate: f64,
    /// Distinct values available to one column (a per-column slice of the
    /// archetype pool).
    pub values_per_column: usize,
    pub pools: ValuePools,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tables: 20,
            rows_per_table: 12,
            min_columns: 3,
            max_columns: 5,
            questions_per_table: 8,
            max_conds: 2,
            neutral_header_rate: 0.0,
            omit_where_header_rate: 0.5,
            values_per_column: 8,
            pools: ValuePools::default(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let counts = [
            ("n_tables", self.n_tables),
            ("rows_per_table", self.rows_per_table),
            ("min_columns", self.min_columns),
            ("max_columns", self.max_columns),
            ("questions_per_table", self.questions_per_table),
            ("values_per_column", self.values_per_column),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(crate::Error::Config(format!("{name} must be at least 1")));
        }
        if self.min_columns > self.max_columns {
            return Err(crate::Error::Config("min_columns exceeds max_columns".into()));
        }
        for (name, p) in [
            ("neutral_header_rate", self.neutral_header_rate),
            ("omit_where_header_rate", self.omit_where_header_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(crate::Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnInfo {
    pub header: String,
    pub archetype: Archetype,
    pub neutral_header: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub tables: BTreeMap<String, Vec<ColumnInfo>>,
    pub archetype_counts: BTreeMap<Archetype, usize>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Full-sentence questions.
    pub verbose: Corpus,
    /// Short keyword questions, one per verbose example, same gold sketches.
    pub keyword: Corpus,
    pub tables: TableMap,
    pub manifest: SynthManifest,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

struct GenTable {
    table: Table,
    columns: Vec<ColumnInfo>,
}

impl<'a> Generator<'a> {
    fn column_pool(&mut self, archetype: Archetype) -> Vec<String> {
        let p = &self.cfg.pools;
        let n = self.cfg.values_per_column;
        match archetype {
            Archetype::Person => {
                let mut out = Vec::with_capacity(n);
                let mut guard = 0;
                while out.len() < n && guard < n * 50 {
                    guard += 1;
                    let name = format!(
                        "{} {}",
                        p.first_names.choose(&mut self.rng).unwrap(),
                        p.last_names.choose(&mut self.rng).unwrap()
                    );
                    if !out.contains(&name) {
                        out.push(name);
                    }
                }
                out
            }
            Archetype::Brand => p.brands.choose_multiple(&mut self.rng, n).cloned().collect(),
            Archetype::Category => p.categories.choose_multiple(&mut self.rng, n).cloned().collect(),
            Archetype::SmallInt => (0..n).map(|_| self.rng.gen_range(0..=p.small_int_max).to_string()).collect(),
            Archetype::Year => (0..n)
                .map(|_| self.rng.gen_range(p.years.0..=p.years.1).to_string())
                .collect(),
        }
    }

    fn table(&mut self, index: usize) -> GenTable {
        let n_cols = self.rng.gen_range(self.cfg.min_columns..=self.cfg.max_columns);
        let mut columns: Vec<ColumnInfo> = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            let archetype = *Archetype::ALL.choose(&mut self.rng).unwrap();
            let neutral = self.rng.gen_bool(self.cfg.neutral_header_rate);
            let pool = if neutral {
                &self.cfg.pools.neutral_headers
            } else {
                &self.cfg.pools.headers[&archetype]
            };
            let free: Vec<&String> = pool
                .iter()
                .filter(|h| columns.iter().all(|c| &c.header != *h))
                .collect();
            // Pools are large enough for the default column counts; fall back
            // to a numbered header if one runs dry.
            let header = match free.choose(&mut self.rng) {
                Some(h) => (*h).clone(),
                None => format!("{} {}", pool[0], columns.len() + 1),
            };
            columns.push(ColumnInfo {
                header,
                archetype,
                neutral_header: neutral,
            });
        }
        let pools: Vec<Vec<String>> = columns.iter().map(|c| self.column_pool(c.archetype)).collect();
        let rows = (0..self.cfg.rows_per_table)
            .map(|_| pools.iter().map(|p| p.choose(&mut self.rng).unwrap().clone()).collect())
            .collect();
        let schema = TableSchema::new(
            format!("s-{}-{index}", self.cfg.seed),
            columns.iter().map(|c| c.header.clone()).collect(),
            columns
                .iter()
                .map(|c| if c.archetype.is_numeric() { ColumnType::Real } else { ColumnType::Text })
                .collect(),
        )
        .expect("generated schemas are valid");
        GenTable {
            table: Table::new(schema, rows).expect("generated rows match the schema"),
            columns,
        }
    }

    fn agg_for(&mut self, numeric: bool) -> AggOp {
        let r: f64 = self.rng.gen();
        if numeric {
            match r {
                r if r < 0.5 => AggOp::None,
                r if r < 0.6 => AggOp::Count,
                r if r < 0.7 => AggOp::Max,
                r if r < 0.8 => AggOp::Min,
                r if r < 0.9 => AggOp::Sum,
                _ => AggOp::Avg,
            }
        } else if r < 0.8 {
            AggOp::None
        } else {
            AggOp::Count
        }
    }

    /// Draws a gold sketch. `where_filter` restricts which columns may carry
    /// conditions; `eq_only` forbids ordering conditions.
    fn sketch(
        &mut self,
        g: &GenTable,
        n_conds: usize,
        where_filter: &dyn Fn(usize) -> bool,
        eq_only: bool,
    ) -> Option<SqlSketch> {
        let n_cols = g.columns.len();
        let select = self.rng.gen_range(0..n_cols);
        let mut candidates: Vec<usize> = (0..n_cols).filter(|&c| c != select && where_filter(c)).collect();
        if candidates.len() < n_conds {
            return None;
        }
        candidates.shuffle(&mut self.rng);
        let anchor = self.rng.gen_range(0..g.table.rows.len());
        let mut conds = Vec::with_capacity(n_conds);
        for &col in &candidates[..n_conds] {
            let cell = &g.table.rows[anchor][col];
            let numeric = g.columns[col].archetype.is_numeric();
            let cond = if numeric && !eq_only && self.rng.gen_bool(0.3) {
                let x: i64 = cell.parse().expect("numeric archetypes hold integers");
                if self.rng.gen_bool(0.5) {
                    Condition::new(col, CondOp::Gt, (x - self.rng.gen_range(1..=5)).to_string())
                } else {
                    Condition::new(col, CondOp::Lt, (x + self.rng.gen_range(1..=5)).to_string())
                }
            } else {
                Condition::new(col, CondOp::Eq, cell.clone())
            };
            conds.push(cond);
        }
        let agg = self.agg_for(g.columns[select].archetype.is_numeric());
        Some(SqlSketch::new(select, agg, conds))
    }

    fn n_conds(&mut self) -> usize {
        let r: f64 = self.rng.gen();
        let n = if r < 0.15 {
            0
        } else if r < 0.7 {
            1
        } else if r < 0.92 {
            2
        } else {
            3
        };
        n.min(self.cfg.max_conds)
    }

    fn verbose_question(&mut self, sketch: &SqlSketch, schema: &TableSchema) -> String {
        let h = |c: usize| schema.headers[c].to_lowercase();
        let sel = h(sketch.select);
        let subject = match sketch.agg {
            AggOp::None => format!("the {sel}"),
            AggOp::Count => format!("the number of {sel}"),
            AggOp::Max => format!("the highest {sel}"),
            AggOp::Min => format!("the lowest {sel}"),
            AggOp::Sum => format!("the total {sel}"),
            AggOp::Avg => format!("the average {sel}"),
        };
        let style = self.rng.gen_range(0..3);
        let conds: Vec<String> = sketch
            .conds
            .iter()
            .map(|c| {
                let v = c.value.to_lowercase();
                let relation = match c.op {
                    CondOp::Eq => match style {
                        0 => "is".to_string(),
                        1 => "equals".to_string(),
                        _ => "of".to_string(),
                    },
                    CondOp::Gt => ["is more than", "is larger than", "is bigger than", "is over"]
                        .choose(&mut self.rng)
                        .unwrap()
                        .to_string(),
                    CondOp::Lt => ["is less than", "is smaller than", "is under", "is fewer than"]
                        .choose(&mut self.rng)
                        .unwrap()
                        .to_string(),
                };
                if style == 2 && c.op == CondOp::Eq {
                    format!("a {} {relation} {v}", h(c.column))
                } else {
                    format!("the {} {relation} {v}", h(c.column))
                }
            })
            .collect();
        if conds.is_empty() {
            return match style {
                0 => format!("what is {subject} of all entries?"),
                1 => format!("list {subject} across the table"),
                _ => format!("tell me {subject} overall"),
            };
        }
        let joined = conds.join(" and ");
        match style {
            0 => format!("what is {subject} when {joined}?"),
            1 => format!("tell me {subject} where {joined}"),
            _ => format!("which is {subject} that has {joined}?"),
        }
    }

    fn keyword_question(&mut self, sketch: &SqlSketch, schema: &TableSchema, omit_rate: f64) -> String {
        let h = |c: usize| schema.headers[c].to_lowercase();
        let sel = h(sketch.select);
        let subject = match sketch.agg {
            AggOp::None => sel,
            AggOp::Count => format!("number of {sel}"),
            AggOp::Max => format!("highest {sel}"),
            AggOp::Min => format!("lowest {sel}"),
            AggOp::Sum => format!("total {sel}"),
            AggOp::Avg => format!("average {sel}"),
        };
        let conds: Vec<String> = sketch
            .conds
            .iter()
            .map(|c| {
                let v = c.value.to_lowercase();
                match c.op {
                    CondOp::Eq if self.rng.gen_bool(omit_rate) => v,
                    CondOp::Eq if self.rng.gen_bool(0.5) => format!("{} {v}", h(c.column)),
                    CondOp::Eq => format!("{v} {}", h(c.column)),
                    op => format!("{} {op} {v}", h(c.column)),
                }
            })
            .collect();
        if conds.is_empty() {
            return subject;
        }
        let joined = conds.join(" ");
        match self.rng.gen_range(0..3) {
            0 => format!("{subject} {joined}"),
            1 => format!("{joined} {subject}"),
            _ => format!("{subject} with {joined}"),
        }
    }
}

fn example(question: String, table: &Table, gold: SqlSketch) -> Example {
    Example {
        question,
        table_id: table.id().to_string(),
        gold,
        provenance: Provenance::Original,
    }
}

fn manifest_for(seed: u64, generated: &[GenTable]) -> SynthManifest {
    let mut manifest = SynthManifest {
        seed,
        ..Default::default()
    };
    for g in generated {
        for c in &g.columns {
            *manifest.archetype_counts.entry(c.archetype).or_default() += 1;
        }
        manifest.tables.insert(g.table.id().to_string(), g.columns.clone());
    }
    manifest
}

fn assert_executes(gold: &SqlSketch, table: &Table) {
    debug_assert!(execute(gold, table).is_ok(), "generated sketch failed to execute");
}

/// Generates tables plus paired verbose/keyword questions. A pure function of
/// the configuration.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> SynthCorpus {
    let mut gen = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let generated: Vec<GenTable> = (0..cfg.n_tables).map(|i| gen.table(i)).collect();
    let mut verbose = Vec::new();
    let mut keyword = Vec::new();
    for g in &generated {
        for _ in 0..cfg.questions_per_table {
            let n = gen.n_conds().min(g.columns.len() - 1);
            let gold = gen
                .sketch(g, n, &|_| true, false)
                .expect("n is bounded by the column count");
            assert_executes(&gold, &g.table);
            let vq = gen.verbose_question(&gold, &g.table.schema);
            let kq = gen.keyword_question(&gold, &g.table.schema, cfg.omit_where_header_rate);
            verbose.push(example(vq, &g.table, gold.clone()));
            keyword.push(example(kq, &g.table, gold));
        }
    }
    SynthCorpus {
        verbose: Corpus::new(Split::Train, verbose),
        keyword: Corpus::new(Split::Train, keyword),
        tables: generated.iter().map(|g| (g.table.id().to_string(), g.table.clone())).collect(),
        manifest: manifest_for(cfg.seed, &generated),
    }
}

/// Keyword questions whose single where column can only be identified from
/// table content: the column has a neutral header, the header is dropped from
/// the question, another column shares its archetype, and the value occurs
/// in no other column of the table.
///
/// `neutral_header_rate` of the config is raised to at least 0.5 so enough
/// columns qualify. Both returned corpora hold the same probe questions.
pub fn generate_ambiguity_probe(cfg: &SynthConfig) -> SynthCorpus {
    let cfg = SynthConfig {
        neutral_header_rate: cfg.neutral_header_rate.max(0.5),
        ..cfg.clone()
    };
    let mut gen = Generator {
        cfg: &cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_a4b1),
    };
    let mut generated = Vec::new();
    let mut probes = Vec::new();
    let mut index = 0;
    while generated.len() < cfg.n_tables && index < cfg.n_tables * 100 {
        let g = gen.table(index);
        index += 1;
        if !g.columns.iter().any(|c| c.neutral_header) {
            continue;
        }
        let unique_to = |col: usize, value: &str| {
            let norm = normalize_value(value);
            (0..g.columns.len())
                .filter(|&c| c != col)
                .all(|c| g.table.column(c).all(|cell| normalize_value(cell) != norm))
        };
        let mut made = 0;
        let mut attempts = 0;
        while made < cfg.questions_per_table && attempts < cfg.questions_per_table * 20 {
            attempts += 1;
            let Some(gold) = gen.sketch(&g, 1, &|c| g.columns[c].neutral_header, true) else {
                break;
            };
            let cond = &gold.conds[0];
            if !unique_to(cond.column, &cond.value) {
                continue;
            }
            // The select header must not be neutral, or the question names
            // nothing at all.
            if g.columns[gold.select].neutral_header {
                continue;
            }
            // A sibling of the same archetype keeps the value's shape from
            // giving the column away.
            let arch = g.columns[cond.column].archetype;
            let has_sibling = (0..g.columns.len())
                .any(|c| c != cond.column && c != gold.select && g.columns[c].archetype == arch);
            if !has_sibling {
                continue;
            }
            assert_executes(&gold, &g.table);
            let q = gen.keyword_question(&gold, &g.table.schema, 1.0);
            probes.push(example(q, &g.table, gold));
            made += 1;
        }
        if made > 0 {
            generated.push(g);
        }
    }
    let corpus = Corpus::new(Split::Test, probes);
    SynthCorpus {
        verbose: corpus.clone(),
        keyword: corpus,
        tables: generated.iter().map(|g| (g.table.id().to_string(), g.table.clone())).collect(),
        manifest: manifest_for(cfg.seed, &generated),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{validate_corpus, write_examples, write_tables};

    #[test]
    fn same_seed_gives_identical_bytes() {
        let cfg = SynthConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let mut blobs = Vec::new();
        for run in 0..2 {
            let c = generate_synthetic_corpus(&cfg);
            let ex = dir.path().join(format!("ex{run}.jsonl"));
            let tb = dir.path().join(format!("tb{run}.jsonl"));
            write_examples(&ex, &c.verbose).unwrap();
            write_tables(&tb, c.tables.values()).unwrap();
            blobs.push((std::fs::read(ex).unwrap(), std::fs::read(tb).unwrap()));
        }
        assert_eq!(blobs[0], blobs[1]);
        let other = generate_synthetic_corpus(&SynthConfig { seed: 8, ..cfg });
        let c = generate_synthetic_corpus(&SynthConfig::default());
        assert_ne!(other.verbose.examples, c.verbose.examples);
    }

    #[test]
    fn table_shape_follows_config() {
        let cfg = SynthConfig {
            rows_per_table: 3,
            min_columns: 3,
            max_columns: 3,
            ..SynthConfig::default()
        };
        let c = generate_synthetic_corpus(&cfg);
        for t in c.tables.values() {
            assert_eq!(t.rows.len(), 3);
            assert!(t.rows.iter().all(|r| r.len() == 3));
        }
    }

    #[test]
    fn every_gold_executes_and_values_appear() {
        let c = generate_synthetic_corpus(&SynthConfig {
            n_tables: 30,
            ..SynthConfig::default()
        });
        assert_eq!(c.verbose.len(), c.keyword.len());
        for corpus in [&c.verbose, &c.keyword] {
            for ex in &corpus.examples {
                let t = &c.tables[&ex.table_id];
                execute(&ex.gold, t).unwrap();
                for cond in &ex.gold.conds {
                    assert!(
                        ex.question.contains(&cond.value.to_lowercase()),
                        "{} / {}",
                        ex.question,
                        cond.value
                    );
                }
            }
        }
        let report = validate_corpus(&c.verbose, &c.tables, 4);
        assert!(report.is_clean());
        assert!(report.conds_histogram.len() <= 5);
        assert_eq!(c.manifest.tables.len(), 30);
    }

    #[test]
    fn probe_questions_need_content() {
        let c = generate_ambiguity_probe(&SynthConfig {
            n_tables: 10,
            ..SynthConfig::default()
        });
        assert!(!c.keyword.is_empty());
        for ex in &c.keyword.examples {
            let cols = &c.manifest.tables[&ex.table_id];
            let cond = &ex.gold.conds[0];
            assert!(cols[cond.column].neutral_header);
            assert!(!ex.question.contains(&cols[cond.column].header.to_lowercase()));
            let siblings = (0..cols.len())
                .filter(|&i| i != cond.column && i != ex.gold.select && cols[i].archetype == cols[cond.column].archetype)
                .count();
            assert!(siblings > 0);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SynthConfig {
            n_tables: 0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }
}
