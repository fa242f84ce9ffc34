//! Short-question synthesis from gold sketches and relational-symbol rewriting.
//!
//! Short questions are built from the gold slots alone: the select header at
//! the front or the back, each condition as its value, `header value`, or
//! `value header`, and the conditions in any order. Gold sketches are never
//! touched.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Corpus, TableMap};
use crate::error::{Error, Result};
use crate::sketch::{AggOp, CondOp, Example, Provenance, TableSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Cap on short variants generated per source example.
    pub variants_per_example: usize,
    pub include_select_prefix: bool,
    pub include_select_suffix: bool,
    pub shuffle_conditions: bool,
    /// Allow `value header` in addition to `header value`.
    pub swap_column_value: bool,
    pub symbol_substitution_probability: f64,
    /// Augmented examples added, as a fraction of the original count.
    pub mix_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            variants_per_example: 4,
            include_select_prefix: true,
            include_select_suffix: true,
            shuffle_conditions: true,
            swap_column_value: true,
            symbol_substitution_probability: 0.5,
            mix_ratio: 0.5,
            seed: 13,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.symbol_substitution_probability) {
            return Err(Error::Config("symbol_substitution_probability must lie in [0, 1]".into()));
        }
        if !(self.mix_ratio >= 0.0 && self.mix_ratio.is_finite()) {
            return Err(Error::Config("mix_ratio must be a non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub pattern: String,
    pub op: CondOp,
    pub symbol: String,
}

/// Relational ngrams and the operator symbol replacing them, longest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplacementMap {
    entries: Vec<Replacement>,
}

impl Default for ReplacementMap {
    fn default() -> Self {
        let gt = ["bigger than", "larger than", "more than", "greater than", "over"];
        let lt = ["less than", "smaller than", "fewer than", "under"];
        let entries = gt
            .iter()
            .map(|p| (p, CondOp::Gt, ">"))
            .chain(lt.iter().map(|p| (p, CondOp::Lt, "<")))
            .map(|(p, op, s)| Replacement {
                pattern: p.to_string(),
                op,
                symbol: s.to_string(),
            })
            .collect();
        ReplacementMap::new(entries).expect("default map is valid")
    }
}

impl ReplacementMap {
    pub fn new(mut entries: Vec<Replacement>) -> Result<Self> {
        for e in &mut entries {
            let p = e.pattern.trim().to_lowercase();
            if p.is_empty() {
                return Err(Error::Config("empty replacement pattern".into()));
            }
            e.pattern = p;
        }
        entries.sort_by(|a, b| b.pattern.chars().count().cmp(&a.pattern.chars().count()));
        Ok(ReplacementMap { entries })
    }

    pub fn entries(&self) -> &[Replacement] {
        &self.entries
    }

    /// Parses `pattern <TAB> op <TAB> symbol` lines. `op` is `GT`/`LT`/`EQ` or
    /// the operator symbol; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [pattern, op, symbol] = fields.as_slice() else {
                return Err(Error::Config(format!("replacement map line {}: expected 3 tab-separated fields", i + 1)));
            };
            let op = match op.trim() {
                "GT" | "gt" => CondOp::Gt,
                "LT" | "lt" => CondOp::Lt,
                "EQ" | "eq" => CondOp::Eq,
                s => CondOp::from_symbol(s)
                    .ok_or_else(|| Error::Config(format!("replacement map line {}: unknown op `{s}`", i + 1)))?,
            };
            entries.push(Replacement {
                pattern: pattern.to_string(),
                op,
                symbol: symbol.trim().to_string(),
            });
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn agg_prefix(agg: AggOp) -> Option<&'static str> {
    match agg {
        AggOp::None => None,
        AggOp::Count => Some("number of"),
        AggOp::Max => Some("highest"),
        AggOp::Min => Some("lowest"),
        AggOp::Sum => Some("total"),
        AggOp::Avg => Some("average"),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CondForm {
    ValueOnly,
    HeaderValue,
    ValueHeader,
}

impl CondForm {
    /// Header omission is as likely as inclusion; the two inclusion orders
    /// split the remaining half.
    fn weight(self, swap_allowed: bool) -> f64 {
        match (self, swap_allowed) {
            (CondForm::ValueOnly, _) => 0.5,
            (_, true) => 0.25,
            (_, false) => 0.5,
        }
    }
}

fn cartesian<T: Clone>(choices: &[Vec<T>]) -> Vec<Vec<T>> {
    choices.iter().fold(vec![Vec::new()], |acc, opts| {
        acc.iter()
            .flat_map(|prefix| {
                opts.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.push(o.clone());
                    v
                })
            })
            .collect()
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Short NLS-style variants of `example`, at most `variants_per_example`,
/// deduplicated, with the gold sketch unchanged.
///
/// All template combinations are enumerated and drawn by weighted sampling
/// without replacement, so small caps favour header-less conditions as often
/// as header-bearing ones.
pub fn synthesize_short_questions(
    example: &Example,
    schema: &TableSchema,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> Vec<Example> {
    let gold = &example.gold;
    let header = |c: usize| schema.headers[c].to_lowercase();
    let mut select = header(gold.select);
    if let Some(prefix) = agg_prefix(gold.agg) {
        select = format!("{prefix} {select}");
    }
    let mut placements = Vec::new();
    if config.include_select_prefix || !config.include_select_suffix {
        placements.push(true);
    }
    if config.include_select_suffix {
        placements.push(false);
    }
    let mut forms = vec![CondForm::ValueOnly, CondForm::HeaderValue];
    if config.swap_column_value {
        forms.push(CondForm::ValueHeader);
    }
    let orders = if config.shuffle_conditions {
        permutations(gold.conds.len())
    } else {
        vec![(0..gold.conds.len()).collect()]
    };
    let form_choices = vec![forms; gold.conds.len()];

    let piece = |i: usize, form: CondForm| {
        let c = &gold.conds[i];
        let value = match c.op {
            CondOp::Eq => c.value.to_lowercase(),
            op => format!("{} {}", op.symbol(), c.value.to_lowercase()),
        };
        match form {
            CondForm::ValueOnly => value,
            CondForm::HeaderValue => format!("{} {value}", header(c.column)),
            CondForm::ValueHeader => format!("{value} {}", header(c.column)),
        }
    };

    let mut keyed: Vec<(f64, String)> = Vec::new();
    for &front in &placements {
        for form_combo in cartesian(&form_choices) {
            for order in &orders {
                let weight: f64 = form_combo.iter().map(|f| f.weight(config.swap_column_value)).product();
                let mut parts: Vec<String> = order.iter().map(|&i| piece(i, form_combo[i])).collect();
                if front {
                    parts.insert(0, select.clone());
                } else {
                    parts.push(select.clone());
                }
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                keyed.push((u.powf(1.0 / weight), parts.join(" ")));
            }
        }
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, q) in keyed {
        if out.len() >= config.variants_per_example {
            break;
        }
        if seen.insert(q.clone()) {
            out.push(Example {
                question: q,
                table_id: example.table_id.clone(),
                gold: gold.clone(),
                provenance: Provenance::Synthesized,
            });
        }
    }
    out
}

/// Replaces relational ngrams with operator symbols, but only ngrams whose
/// operator occurs in the gold sketch; each occurrence fires independently
/// with `probability`.
pub fn substitute_relational_symbols(
    example: &Example,
    map: &ReplacementMap,
    probability: f64,
    rng: &mut impl Rng,
) -> Example {
    let ops: HashSet<CondOp> = example.gold.conds.iter().map(|c| c.op).collect();
    let eligible: Vec<&Replacement> = map.entries().iter().filter(|r| ops.contains(&r.op)).collect();
    let mut out = example.clone();
    if eligible.is_empty() || probability <= 0.0 {
        return out;
    }
    let chars: Vec<char> = example.question.chars().collect();
    let lower: Vec<char> = example.question.to_lowercase().chars().collect();
    if lower.len() != chars.len() {
        // Case folding changed the length; offsets would not line up.
        return out;
    }
    let bounded = |s: usize, e: usize| {
        (s == 0 || !(lower[s - 1].is_alphanumeric() && lower[s].is_alphanumeric()))
            && (e == lower.len() || !(lower[e - 1].is_alphanumeric() && lower[e].is_alphanumeric()))
    };
    let mut result = String::with_capacity(example.question.len());
    let mut fired = false;
    let mut i = 0;
    'scan: while i < chars.len() {
        for r in &eligible {
            let p: Vec<char> = r.pattern.chars().collect();
            let end = i + p.len();
            if end <= lower.len() && lower[i..end] == p[..] && bounded(i, end) {
                if rng.gen_bool(probability) {
                    result.push_str(&r.symbol);
                    fired = true;
                } else {
                    result.extend(&chars[i..end]);
                }
                i = end;
                continue 'scan;
            }
        }
        result.push(chars[i]);
        i += 1;
    }
    if fired {
        out.question = result;
        out.provenance = Provenance::SymbolSubstituted;
    }
    out
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AugmentStats {
    pub originals: usize,
    pub candidates: usize,
    pub added: usize,
    pub by_provenance: BTreeMap<String, usize>,
    pub skipped_missing_table: usize,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub corpus: Corpus,
    pub stats: AugmentStats,
}

/// Originals plus `round(mix_ratio * n)` augmented examples drawn from the
/// variant pool, shuffled deterministically.
pub fn augment_corpus(corpus: &Corpus, tables: &TableMap, config: &AugmentConfig) -> Result<Augmented> {
    augment_corpus_with(corpus, tables, config, &ReplacementMap::default())
}

pub fn augment_corpus_with(
    corpus: &Corpus,
    tables: &TableMap,
    config: &AugmentConfig,
    map: &ReplacementMap,
) -> Result<Augmented> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stats = AugmentStats {
        originals: corpus.len(),
        ..Default::default()
    };
    let mut pool = Vec::new();
    for ex in &corpus.examples {
        let Some(table) = tables.get(&ex.table_id) else {
            stats.skipped_missing_table += 1;
            continue;
        };
        pool.extend(synthesize_short_questions(ex, &table.schema, config, &mut rng));
        let sub = substitute_relational_symbols(ex, map, config.symbol_substitution_probability, &mut rng);
        if sub.provenance == Provenance::SymbolSubstituted {
            pool.push(sub);
        }
    }
    stats.candidates = pool.len();
    let want = ((config.mix_ratio * corpus.len() as f64).round() as usize).min(pool.len());
    pool.shuffle(&mut rng);
    pool.truncate(want);
    stats.added = pool.len();

    let mut examples = corpus.examples.clone();
    examples.extend(pool);
    examples.shuffle(&mut rng);
    for ex in &examples {
        let key = serde_json::to_value(ex.provenance)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *stats.by_provenance.entry(key).or_default() += 1;
    }
    Ok(Augmented {
        corpus: Corpus::new(corpus.split, examples),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic_corpus, SynthConfig};
    use crate::sketch::{lf_equal, Condition, SqlSketch};

    fn player_example() -> (Example, TableSchema) {
        let schema = TableSchema::text("t", &["Player", "Jersey", "Nationality"]).unwrap();
        let ex = Example {
            question: "Who is the player of Australian nationality that wears jersey number 42?".into(),
            table_id: "t".into(),
            gold: SqlSketch::new(
                0,
                AggOp::None,
                vec![
                    Condition::new(1, CondOp::Eq, "42"),
                    Condition::new(2, CondOp::Eq, "australian"),
                ],
            ),
            provenance: Provenance::Original,
        };
        (ex, schema)
    }

    #[test]
    fn jersey_variants_include_known_forms() {
        let (ex, schema) = player_example();
        let cfg = AugmentConfig {
            variants_per_example: 1000,
            ..AugmentConfig::default()
        };
        let out = synthesize_short_questions(&ex, &schema, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let qs: HashSet<_> = out.iter().map(|e| e.question.as_str()).collect();
        assert!(qs.contains("player jersey 42 australian nationality"));
        assert!(qs.contains("42 jersey australian nationality player"));
        // 2 placements x 3^2 forms x 2 orders
        assert_eq!(qs.len(), 36);
        assert!(out.iter().all(|e| e.gold == ex.gold && e.provenance == Provenance::Synthesized));
    }

    #[test]
    fn zero_conditions_and_cap() {
        let schema = TableSchema::text("t", &["Accounts"]).unwrap();
        let ex = Example {
            question: "list all accounts".into(),
            table_id: "t".into(),
            gold: SqlSketch::new(0, AggOp::None, vec![]),
            provenance: Provenance::Original,
        };
        let out = synthesize_short_questions(&ex, &schema, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].question, "accounts");

        let (ex, schema) = player_example();
        for k in [0, 1, 3, 7] {
            let cfg = AugmentConfig {
                variants_per_example: k,
                ..AugmentConfig::default()
            };
            let out = synthesize_short_questions(&ex, &schema, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
            assert_eq!(out.len(), k);
        }
    }

    #[test]
    fn count_prefix() {
        let schema = TableSchema::text("t", &["Deals", "Year"]).unwrap();
        let ex = Example {
            question: "how many deals closed in 2019".into(),
            table_id: "t".into(),
            gold: SqlSketch::new(0, AggOp::Count, vec![Condition::new(1, CondOp::Eq, "2019")]),
            provenance: Provenance::Original,
        };
        let cfg = AugmentConfig {
            variants_per_example: 100,
            ..AugmentConfig::default()
        };
        let out = synthesize_short_questions(&ex, &schema, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(out.iter().any(|e| e.question == "number of deals year 2019"));
        assert!(out.iter().all(|e| e.question.contains("number of deals")));
    }

    fn laps_example(op: CondOp) -> Example {
        Example {
            question: "grid of bmw rider with more than 200 laps".into(),
            table_id: "t".into(),
            gold: SqlSketch::new(
                3,
                AggOp::None,
                vec![Condition::new(1, CondOp::Eq, "bmw"), Condition::new(2, op, "200")],
            ),
            provenance: Provenance::Original,
        }
    }

    #[test]
    fn symbol_substitution_rules() {
        let map = ReplacementMap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = substitute_relational_symbols(&laps_example(CondOp::Gt), &map, 1.0, &mut rng);
        assert_eq!(out.question, "grid of bmw rider with > 200 laps");
        assert_eq!(out.provenance, Provenance::SymbolSubstituted);

        let eq_only = laps_example(CondOp::Eq);
        let out = substitute_relational_symbols(&eq_only, &map, 1.0, &mut rng);
        assert_eq!(out, eq_only);

        let out = substitute_relational_symbols(&laps_example(CondOp::Gt), &map, 0.0, &mut rng);
        assert_eq!(out, laps_example(CondOp::Gt));
    }

    #[test]
    fn substitution_respects_word_boundaries() {
        let map = ReplacementMap::default();
        let mut ex = laps_example(CondOp::Gt);
        ex.question = "turnover over 5".into();
        let out = substitute_relational_symbols(&ex, &map, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.question, "turnover > 5");
    }

    #[test]
    fn replacement_map_file_format() {
        let map = ReplacementMap::parse("# comment\nover\tGT\t>\nat most\t<\t<\n").unwrap();
        assert_eq!(map.entries()[0].pattern, "at most");
        assert_eq!(map.entries()[1].op, CondOp::Gt);
        assert!(ReplacementMap::parse("over GT >").is_err());
        assert!(ReplacementMap::parse("over\tXX\t>").is_err());
    }

    #[test]
    fn augment_corpus_mixing() {
        let synth = generate_synthetic_corpus(&SynthConfig {
            n_tables: 10,
            questions_per_table: 10,
            ..SynthConfig::default()
        });
        let zero = augment_corpus(
            &synth.verbose,
            &synth.tables,
            &AugmentConfig {
                mix_ratio: 0.0,
                ..AugmentConfig::default()
            },
        )
        .unwrap();
        let mut a = zero.corpus.examples.clone();
        let mut b = synth.verbose.examples.clone();
        a.sort_by(|x, y| x.question.cmp(&y.question));
        b.sort_by(|x, y| x.question.cmp(&y.question));
        assert_eq!(a, b);

        let cfg = AugmentConfig::default();
        let half = augment_corpus(&synth.verbose, &synth.tables, &cfg).unwrap();
        assert_eq!(half.stats.added, 50);
        assert_eq!(half.corpus.len(), 150);
        let again = augment_corpus(&synth.verbose, &synth.tables, &cfg).unwrap();
        assert_eq!(half.corpus, again.corpus);

        // Every augmented example keeps a gold sketch from some original on
        // the same table.
        for ex in &half.corpus.examples {
            assert!(synth
                .verbose
                .examples
                .iter()
                .any(|o| o.table_id == ex.table_id && lf_equal(&o.gold, &ex.gold)));
        }
    }
}
