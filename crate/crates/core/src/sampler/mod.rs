//! Table-content sampling for the encoder input.
//!
//! Three strategies pick per-column content samples: question-agnostic random
//! samples drawn once per table, relevance samples that put cells matched in
//! the question first and fill the rest at random, and a single exact match
//! per column with no fill. [`serialize_input`] lays the question, headers and
//! samples out as one token sequence under a length budget.

pub mod bench;
mod index;
mod serialize;
mod strategy;

pub use index::{distinct_values, ContentIndex, ContentMatch};
pub use serialize::{
    serialize_input, Segment, SerialToken, SerializedInput, CLS, DEFAULT_BUDGET, HEADER_DELIM, SAMPLE_DELIM, SEP,
};
pub use strategy::{
    read_sample_sets, sample_exact_match_one, sample_random, sample_relevance, write_sample_sets, SampleSet,
    SamplingSpec, Strategy,
};
