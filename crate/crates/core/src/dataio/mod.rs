//! Line-delimited corpus and table files.
//!
//! Example records: `{"question": ..., "table_id": ..., "sql": {"sel": int,
//! "agg": int, "conds": [[col, op, value], ...]}}`, with an optional
//! `"provenance"` tag. Table records: `{"id": ..., "header": [...], "types":
//! [...], "rows": [[...], ...]}`. Unknown fields are ignored in both.

mod synth;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{validate_sketch, AggOp, ColumnType, Example, Provenance, SqlSketch, Table, TableSchema};
use crate::text::tokenize;

pub use synth::{
    generate_ambiguity_probe, generate_synthetic_corpus, Archetype, SynthConfig, SynthCorpus,
    SynthManifest, ValuePools,
};

pub type TableMap = BTreeMap<String, Table>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub split: Split,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn new(split: Split, examples: Vec<Example>) -> Self {
        Corpus { split, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Any malformed line fails the whole load.
    #[default]
    Strict,
    /// Malformed lines are skipped and reported as warnings.
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    question: String,
    table_id: String,
    sql: SqlSketch,
    #[serde(default, skip_serializing_if = "is_original")]
    provenance: Provenance,
}

fn is_original(p: &Provenance) -> bool {
    *p == Provenance::Original
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    id: String,
    header: Vec<String>,
    #[serde(default)]
    types: Vec<String>,
    #[serde(default)]
    rows: Vec<Vec<serde_json::Value>>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_example(line: &str) -> std::result::Result<Example, String> {
    let rec: ExampleRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.question.trim().is_empty() {
        return Err("empty question".into());
    }
    if let Some(i) = rec.sql.conds.iter().position(|c| c.value.trim().is_empty()) {
        return Err(format!("condition {i} has an empty value"));
    }
    Ok(Example {
        question: rec.question,
        table_id: rec.table_id,
        gold: rec.sql,
        provenance: rec.provenance,
    })
}

pub fn load_examples(path: impl AsRef<Path>, split: Split, mode: LoadMode) -> Result<Loaded<Corpus>> {
    let path = path.as_ref();
    let mut warnings = Vec::new();
    let mut examples = Vec::new();
    let lines = read_lines(path)?;
    if lines.is_empty() {
        let msg = format!("{}: no records", path.display());
        warn!("{msg}");
        warnings.push(msg);
    }
    for (lineno, line) in lines {
        match parse_example(&line) {
            Ok(ex) => examples.push(ex),
            Err(message) => match mode {
                LoadMode::Strict => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        message,
                    })
                }
                LoadMode::Lenient => {
                    let msg = format!("{}:{lineno}: skipped: {message}", path.display());
                    warn!("{msg}");
                    warnings.push(msg);
                }
            },
        }
    }
    Ok(Loaded {
        value: Corpus::new(split, examples),
        warnings,
    })
}

fn cell_string(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn parse_table(line: &str, warnings: &mut Vec<String>) -> std::result::Result<Table, String> {
    let rec: TableRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let types = if rec.types.is_empty() {
        vec![ColumnType::Text; rec.header.len()]
    } else {
        rec.types
            .iter()
            .map(|t| match t.as_str() {
                "text" => ColumnType::Text,
                "real" => ColumnType::Real,
                other => {
                    warnings.push(format!("table {}: unknown column type `{other}` read as text", rec.id));
                    ColumnType::Text
                }
            })
            .collect()
    };
    let schema = TableSchema::new(rec.id, rec.header, types).map_err(|e| e.to_string())?;
    let rows = rec
        .rows
        .into_iter()
        .map(|r| r.into_iter().map(cell_string).collect())
        .collect();
    Table::new(schema, rows).map_err(|e| e.to_string())
}

/// Loads a table file. Arity mismatches and duplicate ids are always errors.
pub fn load_tables(path: impl AsRef<Path>) -> Result<Loaded<TableMap>> {
    let path = path.as_ref();
    let mut warnings = Vec::new();
    let mut tables = TableMap::new();
    for (lineno, line) in read_lines(path)? {
        let table = parse_table(&line, &mut warnings).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        })?;
        if tables.contains_key(table.id()) {
            return Err(Error::DuplicateTable(table.id().to_string()));
        }
        tables.insert(table.id().to_string(), table);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Loaded {
        value: tables,
        warnings,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn example_to_json(ex: &Example) -> serde_json::Value {
    serde_json::to_value(ExampleRecord {
        question: ex.question.clone(),
        table_id: ex.table_id.clone(),
        sql: ex.gold.clone(),
        provenance: ex.provenance,
    })
    .expect("example records always serialize")
}

pub fn table_to_json(t: &Table) -> serde_json::Value {
    let types = t
        .schema
        .types
        .iter()
        .map(|ty| match ty {
            ColumnType::Text => "text".to_string(),
            ColumnType::Real => "real".to_string(),
        })
        .collect();
    serde_json::to_value(TableRecord {
        id: t.schema.table_id.clone(),
        header: t.schema.headers.clone(),
        types,
        rows: t
            .rows
            .iter()
            .map(|r| r.iter().map(|c| serde_json::Value::String(c.clone())).collect())
            .collect(),
    })
    .expect("table records always serialize")
}

fn write_lines<'a>(path: &Path, records: impl Iterator<Item = serde_json::Value>) -> Result<()> {
    let mut w = create(path)?;
    for rec in records {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_examples(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    write_lines(path.as_ref(), corpus.examples.iter().map(example_to_json))
}

pub fn write_tables<'a>(path: impl AsRef<Path>, tables: impl IntoIterator<Item = &'a Table>) -> Result<()> {
    write_lines(path.as_ref(), tables.into_iter().map(table_to_json))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleViolation {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CorpusReport {
    pub n_examples: usize,
    pub violations: Vec<ExampleViolation>,
    pub agg_histogram: BTreeMap<String, usize>,
    /// `conds_histogram[n]` counts examples with `n` conditions.
    pub conds_histogram: Vec<usize>,
    /// Question length in word tokens → count.
    pub question_length_histogram: BTreeMap<usize, usize>,
}

impl CorpusReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_corpus(corpus: &Corpus, tables: &TableMap, max_conds: usize) -> CorpusReport {
    let mut report = CorpusReport {
        n_examples: corpus.len(),
        ..Default::default()
    };
    for agg in AggOp::ALL {
        report.agg_histogram.insert(format!("{agg:?}").to_uppercase(), 0);
    }
    for (index, ex) in corpus.examples.iter().enumerate() {
        *report
            .agg_histogram
            .entry(format!("{:?}", ex.gold.agg).to_uppercase())
            .or_default() += 1;
        let n = ex.gold.conds.len();
        if report.conds_histogram.len() <= n {
            report.conds_histogram.resize(n + 1, 0);
        }
        report.conds_histogram[n] += 1;
        *report
            .question_length_histogram
            .entry(tokenize(&ex.question).len())
            .or_default() += 1;

        match tables.get(&ex.table_id) {
            None => report.violations.push(ExampleViolation {
                index,
                message: format!("dangling table id `{}`", ex.table_id),
            }),
            Some(t) => {
                for v in validate_sketch(&ex.gold, &t.schema, max_conds) {
                    report.violations.push(ExampleViolation {
                        index,
                        message: v.to_string(),
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::CondOp;

    fn file_with(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_example_line() {
        let f = file_with(
            r#"{"question":"how many winning drivers for 5?","table_id":"t1","sql":{"sel":6,"agg":3,"conds":[[0,0,"5"]]}}"#,
        );
        let c = load_examples(f.path(), Split::Dev, LoadMode::Strict).unwrap().value;
        assert_eq!(c.len(), 1);
        let ex = &c.examples[0];
        assert_eq!(ex.gold.agg, AggOp::Count);
        assert_eq!(ex.gold.select, 6);
        assert_eq!(ex.gold.conds[0].column, 0);
        assert_eq!(ex.gold.conds[0].op, CondOp::Eq);
        assert_eq!(ex.gold.conds[0].value, "5");
    }

    #[test]
    fn empty_file_warns() {
        let f = file_with("");
        let loaded = load_examples(f.path(), Split::Train, LoadMode::Strict).unwrap();
        assert!(loaded.value.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn bad_op_index_strict_and_lenient() {
        let good = r#"{"question":"q","table_id":"t","sql":{"sel":0,"agg":0,"conds":[]}}"#;
        let bad = r#"{"question":"q","table_id":"t","sql":{"sel":0,"agg":0,"conds":[[0,5,"x"]]}}"#;
        let f = file_with(&format!("{good}\n{bad}\n"));
        match load_examples(f.path(), Split::Train, LoadMode::Strict) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("op index 5 out of range"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let loaded = load_examples(f.path(), Split::Train, LoadMode::Lenient).unwrap();
        assert_eq!(loaded.value.len(), 1);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn load_tennis_table() {
        let f = file_with(
            r#"{"id":"tennis","header":["Result","Court","Player"],"types":["text","text","text"],"rows":[["winner","clay","Rafael Nadal"],["runner-up","grass","Novak Djokovic"],["winner","hard","Jarkko Nieminen"]]}
{"id":"empty","header":["a"],"types":["real"],"rows":[]}
{"id":"nums","header":["a","b"],"types":["real","date"],"rows":[[1,2.5]]}"#,
        );
        let loaded = load_tables(f.path()).unwrap();
        let t = &loaded.value["tennis"];
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0][2], "Rafael Nadal");
        assert!(loaded.value["empty"].rows.is_empty());
        assert_eq!(loaded.value["nums"].rows[0], vec!["1".to_string(), "2.5".to_string()]);
        assert_eq!(loaded.value["nums"].schema.types[1], ColumnType::Text);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn table_errors() {
        let f = file_with(r#"{"id":"t","header":["a","b","c"],"types":["text","text","text"],"rows":[["x","y"]]}"#);
        assert!(matches!(load_tables(f.path()), Err(Error::Parse { line: 1, .. })));
        let dup = r#"{"id":"t","header":["a"],"rows":[]}"#;
        let f = file_with(&format!("{dup}\n{dup}\n"));
        assert!(matches!(load_tables(f.path()), Err(Error::DuplicateTable(_))));
    }

    #[test]
    fn validation_report() {
        let tables = generate_synthetic_corpus(&SynthConfig {
            n_tables: 3,
            questions_per_table: 5,
            ..SynthConfig::default()
        })
        .tables;
        let t = tables.values().next().unwrap();
        let ok = Example {
            question: "q".into(),
            table_id: t.id().to_string(),
            gold: SqlSketch::new(0, AggOp::None, vec![]),
            provenance: Provenance::Original,
        };
        let mut dangling = ok.clone();
        dangling.table_id = "nope".into();
        let report = validate_corpus(&Corpus::new(Split::Dev, vec![ok.clone()]), &tables, 4);
        assert!(report.is_clean());
        let report = validate_corpus(&Corpus::new(Split::Dev, vec![ok, dangling]), &tables, 4);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].index, 1);
        assert_eq!(report.conds_histogram, vec![2]);
    }

    #[test]
    fn write_then_load_round_trip() {
        let synth = generate_synthetic_corpus(&SynthConfig {
            n_tables: 4,
            questions_per_table: 6,
            ..SynthConfig::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let ex_path = dir.path().join("train.jsonl");
        let tab_path = dir.path().join("tables.jsonl");
        write_examples(&ex_path, &synth.verbose).unwrap();
        write_tables(&tab_path, synth.tables.values()).unwrap();
        let corpus = load_examples(&ex_path, Split::Train, LoadMode::Strict).unwrap().value;
        let tables = load_tables(&tab_path).unwrap().value;
        assert_eq!(corpus.examples, synth.verbose.examples);
        assert_eq!(tables, synth.tables);
    }
}
