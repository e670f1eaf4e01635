//! Fine-tuning corpora for the linking and generation stages.
//!
//! Generation samples can carry table noise: with probability `noise_rate`
//! one or two non-gold tables are appended after the gold tables, so the
//! fine-tuned generator learns to ignore surplus schema.

use std::io::{self, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{CatalogError, CatalogStore, DatabaseCatalog};
use crate::pipeline::{prompts, Task};
use crate::schema::{render, SchemaSubset, SerializationKind};
use crate::sql::tables_only;

pub const DEFAULT_NOISE_RATE: f64 = 0.10;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("task {0} has no gold SQL")]
    MissingGold(String),
    #[error("task {0}: no catalog table could be derived from the gold SQL")]
    GoldParseFailure(String),
    #[error("task {question_id}: {source}")]
    Catalog {
        question_id: String,
        #[source]
        source: CatalogError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SampleKind {
    Linking,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub task_kind: SampleKind,
    pub question_id: String,
    pub db_id: String,
    pub prompt: String,
    pub completion: String,
    pub noise_applied: bool,
    /// Schema tables in prompt order: gold first, then any noise tables.
    pub tables: Vec<String>,
    pub noise_tables: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepOptions {
    pub linking_serialization: SerializationKind,
    pub generation_serialization: SerializationKind,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            linking_serialization: SerializationKind::MSchemaWithSample,
            generation_serialization: SerializationKind::MSchemaWithSample,
            noise_rate: DEFAULT_NOISE_RATE,
            seed: 0,
        }
    }
}

/// Samples plus the tasks that were skipped and why.
#[derive(Debug, Default)]
pub struct Corpus {
    pub samples: Vec<SftSample>,
    pub skipped: Vec<PrepError>,
}

impl Corpus {
    /// SHA-256 over the JSONL rendering.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &self.samples).expect("writing to memory");
        hex::encode(Sha256::digest(&buf))
    }

    pub fn noise_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let noisy = self.samples.iter().filter(|s| s.noise_applied).count();
        noisy as f64 / self.samples.len() as f64
    }
}

/// Gold tables of `task` in catalog order.
pub fn gold_tables(task: &Task, catalog: &DatabaseCatalog) -> Result<Vec<String>, PrepError> {
    let gold = task
        .gold_sql
        .as_deref()
        .ok_or_else(|| PrepError::MissingGold(task.question_id.clone()))?;
    let found = tables_only(gold, catalog);
    if found.is_empty() {
        return Err(PrepError::GoldParseFailure(task.question_id.clone()));
    }
    let mut idx: Vec<usize> = found.iter().filter_map(|t| catalog.table_index(t)).collect();
    idx.sort_unstable();
    idx.dedup();
    Ok(idx.into_iter().map(|i| catalog.tables[i].name.clone()).collect())
}

fn catalog_for(
    store: &CatalogStore,
    task: &Task,
) -> Result<std::sync::Arc<DatabaseCatalog>, PrepError> {
    store.get(&task.db_id).map_err(|source| PrepError::Catalog {
        question_id: task.question_id.clone(),
        source,
    })
}

fn skip(corpus: &mut Corpus, err: PrepError) {
    warn!("skipping sample: {err}");
    corpus.skipped.push(err);
}

pub fn build_linking_samples(tasks: &[Task], store: &CatalogStore, opts: &PrepOptions) -> Corpus {
    let mut corpus = Corpus::default();
    for task in tasks {
        let result = catalog_for(store, task).and_then(|cat| {
            let gold = gold_tables(task, &cat)?;
            let schema = render(&SchemaSubset::full(&cat), opts.linking_serialization);
            Ok(SftSample {
                task_kind: SampleKind::Linking,
                question_id: task.question_id.clone(),
                db_id: task.db_id.clone(),
                prompt: prompts::linking(&schema, &task.question, task.evidence_text()),
                completion: serde_json::json!({ "tables": gold }).to_string(),
                noise_applied: false,
                tables: cat.tables.iter().map(|t| t.name.clone()).collect(),
                noise_tables: Vec::new(),
            })
        });
        match result {
            Ok(s) => corpus.samples.push(s),
            Err(e) => skip(&mut corpus, e),
        }
    }
    corpus
}

/// Draw the noise tables for one sample. Returns an empty list when the
/// sample is not selected or the complement of `gold` is empty.
pub fn draw_noise(
    rng: &mut impl Rng,
    catalog: &DatabaseCatalog,
    gold: &[String],
    noise_rate: f64,
) -> Vec<String> {
    // Both draws happen unconditionally so one sample's complement size
    // never shifts the stream for later samples.
    let selected = rng.random_bool(noise_rate.clamp(0.0, 1.0));
    let want = rng.random_range(1..=2usize);
    let mut complement: Vec<&str> = catalog
        .tables
        .iter()
        .map(|t| t.name.as_str())
        .filter(|n| !gold.iter().any(|g| g.eq_ignore_ascii_case(n)))
        .collect();
    if !selected || complement.is_empty() {
        return Vec::new();
    }
    let k = want.min(complement.len());
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let i = rng.random_range(0..complement.len());
        picked.push(complement.remove(i));
    }
    // Appended after the gold tables in catalog order.
    picked.sort_by_key(|n| catalog.table_index(n));
    picked.into_iter().map(str::to_string).collect()
}

pub fn build_generation_samples(tasks: &[Task], store: &CatalogStore, opts: &PrepOptions) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut corpus = Corpus::default();
    for task in tasks {
        let result = catalog_for(store, task).and_then(|cat| {
            let gold = gold_tables(task, &cat)?;
            let noise = draw_noise(&mut rng, &cat, &gold, opts.noise_rate);
            let tables: Vec<String> = gold.iter().chain(&noise).cloned().collect();
            let subset = SchemaSubset::ordered(&cat, &tables)
                .expect("gold and noise tables come from the catalog");
            let schema = render(&subset, opts.generation_serialization);
            Ok(SftSample {
                task_kind: SampleKind::Generation,
                question_id: task.question_id.clone(),
                db_id: task.db_id.clone(),
                prompt: prompts::generation(&schema, &task.question, task.evidence_text()),
                completion: task.gold_sql.clone().unwrap_or_default(),
                noise_applied: !noise.is_empty(),
                tables,
                noise_tables: noise,
            })
        });
        match result {
            Ok(s) => corpus.samples.push(s),
            Err(e) => skip(&mut corpus, e),
        }
    }
    corpus
}

#[derive(Serialize)]
struct JsonlMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct JsonlRow<'a> {
    messages: [JsonlMessage<'a>; 1],
    completion: &'a str,
    meta: JsonlMeta<'a>,
}

#[derive(Serialize)]
struct JsonlMeta<'a> {
    task_kind: SampleKind,
    question_id: &'a str,
    db_id: &'a str,
    noise_applied: bool,
    noise_tables: &'a [String],
}

pub fn write_jsonl(mut out: impl Write, samples: &[SftSample]) -> io::Result<()> {
    for s in samples {
        let row = JsonlRow {
            messages: [JsonlMessage {
                role: "user",
                content: &s.prompt,
            }],
            completion: &s.completion,
            meta: JsonlMeta {
                task_kind: s.task_kind,
                question_id: &s.question_id,
                db_id: &s.db_id,
                noise_applied: s.noise_applied,
                noise_tables: &s.noise_tables,
            },
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// LoRA settings handed to the external trainer; nothing here reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub learning_rate: f64,
    pub max_length: u32,
    pub batch_size: u32,
    pub noise_rate: f64,
    pub seed: u64,
    pub linking_samples: usize,
    pub generation_samples: usize,
}

impl TrainingMeta {
    pub fn new(opts: &PrepOptions, linking_samples: usize, generation_samples: usize) -> Self {
        Self {
            lora_rank: 32,
            lora_alpha: 16,
            lora_dropout: 0.1,
            learning_rate: 4e-5,
            max_length: 4096,
            batch_size: 8,
            noise_rate: opts.noise_rate,
            seed: opts.seed,
            linking_samples,
            generation_samples,
        }
    }
}

/// Write `linking.jsonl`, `generation.jsonl` and `training_meta.json`
/// into `out_dir`.
pub fn write_corpus_dir(
    out_dir: &Path,
    linking: &Corpus,
    generation: &Corpus,
    opts: &PrepOptions,
) -> Result<(), PrepError> {
    std::fs::create_dir_all(out_dir)?;
    let open = |name: &str| std::fs::File::create(out_dir.join(name)).map(io::BufWriter::new);
    write_jsonl(open("linking.jsonl")?, &linking.samples)?;
    write_jsonl(open("generation.jsonl")?, &generation.samples)?;
    let meta = TrainingMeta::new(opts, linking.samples.len(), generation.samples.len());
    let mut f = open("training_meta.json")?;
    serde_json::to_writer_pretty(&mut f, &meta).map_err(io::Error::from)?;
    f.write_all(b"\n")?;
    Ok(())
}
