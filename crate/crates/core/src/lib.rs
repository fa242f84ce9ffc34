//! Sketch-based text-to-SQL for short, colloquial, search-style questions.
//!
//! The crate covers the whole pipeline: corpus loading and synthesis
//! ([`dataio`]), question augmentation ([`augment`]), table-content sampling
//! and encoder-input serialization ([`sampler`]), an in-memory single-table
//! executor ([`executor`]), a small transformer with six sketch heads
//! ([`model`]), and training/evaluation ([`traineval`]).

pub mod augment;
pub mod dataio;
pub mod error;
pub mod executor;
pub mod model;
pub mod sampler;
pub mod sketch;
pub mod text;
pub mod traineval;

pub use error::{Error, Result};
pub use sketch::{
    lf_equal, render_sql, validate_sketch, AggOp, ColumnType, CondOp, Condition, Example,
    Provenance, SqlSketch, Table, TableSchema, Violation,
};
