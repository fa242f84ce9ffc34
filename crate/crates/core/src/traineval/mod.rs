//! Training, evaluation and strategy comparison.
//!
//! Every example is sampled and serialized once up front; training then runs
//! mini-batches of per-example graphs whose gradients are summed before each
//! Adam step, so tables with different column counts never need padding.

mod eval;
mod optim;
mod train;

use std::collections::HashMap;

use serde::Serialize;

pub use eval::{
    compare_strategies, evaluate, read_predictions, report_from_records, score_predictions, write_predictions, Comparison, ComparisonRow,
    EvalCounts, EvalOptions, EvalReport, PredictionRecord, SubtaskAccuracy,
};
pub use optim::{clip_global_norm, Adam};
pub use train::{train, training_report, DevMetrics, EpochRecord, TrainConfig, TrainOutcome};

use crate::dataio::TableMap;
use crate::error::{Error, Result};
use crate::model::{align_gold, Alignment};
use crate::sampler::{
    sample_exact_match_one, sample_random, sample_relevance, serialize_input, ContentIndex, SampleSet, SamplingSpec,
    SerializedInput, Strategy,
};
use crate::sketch::Example;

/// Produces per-question samples for one strategy, caching per-table state
/// (content indexes, offline random samples).
pub struct SampleSource<'t> {
    tables: &'t TableMap,
    spec: SamplingSpec,
    seed: u64,
    indexes: HashMap<String, ContentIndex>,
    random: HashMap<String, SampleSet>,
}

impl<'t> SampleSource<'t> {
    pub fn new(tables: &'t TableMap, spec: SamplingSpec, seed: u64) -> Self {
        SampleSource {
            tables,
            spec,
            seed,
            indexes: HashMap::new(),
            random: HashMap::new(),
        }
    }

    pub fn spec(&self) -> SamplingSpec {
        self.spec
    }

    /// Samples for `question` over table `table_id`; `salt` varies the
    /// random fill of relevance sampling between questions.
    pub fn samples(&mut self, question: &str, table_id: &str, salt: u64) -> Result<SampleSet> {
        let table = self
            .tables
            .get(table_id)
            .ok_or_else(|| Error::MissingTable(table_id.to_string()))?;
        Ok(match self.spec.strategy {
            Strategy::None => SampleSet::empty(table),
            Strategy::Random => self
                .random
                .entry(table_id.to_string())
                .or_insert_with(|| sample_random(table, self.spec.k, self.seed))
                .clone(),
            Strategy::Relevance => {
                let index = self
                    .indexes
                    .entry(table_id.to_string())
                    .or_insert_with(|| ContentIndex::build(table));
                sample_relevance(table, index, question, self.spec.k, self.seed.wrapping_add(salt))
            }
            Strategy::ExactMatchOne => {
                let index = self
                    .indexes
                    .entry(table_id.to_string())
                    .or_insert_with(|| ContentIndex::build(table));
                sample_exact_match_one(table, index, question)
            }
        })
    }

    pub fn serialize(&mut self, ex: &Example, salt: u64, budget: usize) -> Result<SerializedInput> {
        let samples = self.samples(&ex.question, &ex.table_id, salt)?;
        let table = &self.tables[&ex.table_id];
        serialize_input(&ex.question, &table.schema, &samples, budget)
    }
}

/// A training example ready for the model.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Position in the source corpus.
    pub id: usize,
    pub example: Example,
    pub input: SerializedInput,
    pub alignment: Alignment,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrepStats {
    pub total: usize,
    pub kept: usize,
    pub unalignable: usize,
    pub too_many_conds: usize,
    pub over_budget: usize,
    /// Kept examples with a where value occurring more than once.
    pub ambiguous_values: usize,
}

/// Samples, serializes and aligns a corpus for training. Examples whose
/// values cannot be aligned, that exceed `max_conds`, or whose question and
/// headers exceed the budget are dropped and counted.
pub fn prepare_examples(
    examples: &[Example],
    source: &mut SampleSource<'_>,
    budget: usize,
    max_conds: usize,
) -> Result<(Vec<Prepared>, PrepStats)> {
    let mut stats = PrepStats {
        total: examples.len(),
        ..PrepStats::default()
    };
    let mut out = Vec::with_capacity(examples.len());
    for (id, ex) in examples.iter().enumerate() {
        if ex.gold.conds.len() > max_conds {
            stats.too_many_conds += 1;
            continue;
        }
        let alignment = match align_gold(&ex.question, &ex.gold) {
            Ok(a) => a,
            Err(Error::Unalignable { .. }) => {
                stats.unalignable += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let input = match source.serialize(ex, id as u64, budget) {
            Ok(i) => i,
            Err(Error::Budget { .. }) => {
                stats.over_budget += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let n_cols = input.n_columns;
        if ex.gold.select >= n_cols || ex.gold.conds.iter().any(|c| c.column >= n_cols) {
            return Err(Error::InvalidSketch(format!(
                "example {id} refers to a column outside table {}",
                ex.table_id
            )));
        }
        if alignment.ambiguous > 0 {
            stats.ambiguous_values += 1;
        }
        out.push(Prepared {
            id,
            example: ex.clone(),
            input,
            alignment,
        });
    }
    stats.kept = out.len();
    Ok((out, stats))
}
