//! Table-linking text-to-SQL pipeline.
//!
//! The crate turns a natural-language question plus a SQLite database into a
//! SQL query through four LLM-backed stages:
//!
//! 1. table-level schema linking ([`pipeline::Session::link_schema`]),
//! 2. candidate generation over the linked tables,
//! 3. two independent revisions over the *full* schema (plain M-Schema and
//!    M-Schema with sample rows),
//! 4. a DAG of pairwise merge revisions that short-circuits whenever the two
//!    inputs already execute to the same result set.
//!
//! Around the pipeline sit the pieces needed to run and measure it offline:
//! database introspection ([`catalog`]), prompt serializations
//! ([`schema`]), a replayable chat-completion gateway ([`llm`]), SQL
//! extraction and table resolution ([`sql`]), sandboxed execution and
//! execution-accuracy matching ([`exec`]), fine-tuning corpus preparation
//! ([`trainprep`]) and benchmark evaluation ([`bench`]).
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod bench;
pub mod catalog;
pub mod cli;
pub mod demo;
pub mod exec;
pub mod llm;
pub mod pipeline;
pub mod schema;
pub mod sql;
pub mod trainprep;

pub use catalog::{CatalogStore, ColumnInfo, DatabaseCatalog, SamplingOptions, TableInfo};
pub use exec::{ExecResult, ExecStatus, Scalar};
pub use llm::{ChatRequest, ChatResponse, Gateway, StageTag};
pub use pipeline::{CandidateSql, LinkingPrediction, PipelineConfig, Task};
pub use schema::{SchemaSubset, SerializationKind};
