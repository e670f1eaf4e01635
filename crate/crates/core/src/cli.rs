//! Command-line front end. The binary only forwards to [`main_with_args`].
//!
//! Exit codes: 0 on success, 1 when a run finished but recorded failures,
//! 2 on configuration or input errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bench::{self, BenchFormat, EvalOptions};
use crate::catalog::{attach_descriptions, introspect, CatalogStore, SamplingOptions};
use crate::demo;
use crate::llm::{
    ChatBackend, Endpoint, Gateway, OpenAiBackend, ReplayBackend, ReplayStore, ReplayWriter,
    StageTag,
};
use crate::pipeline::{LinkingPrediction, Pipeline, PipelineConfig, Preset, Task};
use crate::schema::{render, SchemaSubset, SerializationKind};
use crate::trainprep::{self, PrepOptions};

const DEFAULT_ENDPOINT: &str = "http://localhost:8000";

#[derive(Debug, Parser)]
#[command(name = "nl2sql", version, about = "Table-linking text-to-SQL pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Ablation preset; overrides --config.
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Answer model calls from this replay file.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    /// Append every model exchange to this replay file.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Default chat-completions server for slots without a base_url.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Answer every stage with the task's gold SQL (offline smoke runs).
    #[arg(long, global = true)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct QuestionArgs {
    /// Database root in `<db_id>/<db_id>.sqlite` layout.
    #[arg(long)]
    pub db_root: PathBuf,
    #[arg(long)]
    pub db_id: Option<String>,
    #[arg(long, conflicts_with = "bench")]
    pub question: Option<String>,
    #[arg(long)]
    pub evidence: Option<String>,
    /// Gold SQL for a single --question (used by --oracle).
    #[arg(long)]
    pub gold: Option<String>,
    /// Benchmark JSON file.
    #[arg(long)]
    pub bench: Option<PathBuf>,
    #[arg(long, default_value = "bird")]
    pub format: BenchFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print one serialization of a database schema.
    Schema {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value = "m-schema-with-sample")]
        kind: SerializationKind,
        /// Comma-separated table subset.
        #[arg(long, value_delimiter = ',')]
        tables: Vec<String>,
        /// BIRD `database_description` directory.
        #[arg(long)]
        descriptions: Option<PathBuf>,
    },
    /// Table linking; with --bench, prints linking metrics.
    Link {
        #[command(flatten)]
        q: QuestionArgs,
    },
    /// Linking plus candidate generation (SQL1).
    Generate {
        #[command(flatten)]
        q: QuestionArgs,
    },
    /// Full pipeline for one question or a batch.
    Run {
        #[command(flatten)]
        q: QuestionArgs,
        /// Directory for per-question trace JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execution-accuracy evaluation over a benchmark.
    Eval {
        #[command(flatten)]
        q: QuestionArgs,
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
    },
    /// Fine-tuning corpora for linking and generation.
    PrepSft {
        #[arg(long)]
        db_root: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value = "bird")]
        format: BenchFormat,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = trainprep::DEFAULT_NOISE_RATE)]
        noise_rate: f64,
    },
    /// Run the pipeline against a live endpoint, recording every exchange
    /// to --record.
    ReplayRecord {
        #[command(flatten)]
        q: QuestionArgs,
    },
    /// Write the demo databases and benchmark to a directory.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn pipeline_config(g: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    if let Some(p) = g.preset {
        return Ok(p.config());
    }
    match &g.config {
        Some(path) => PipelineConfig::from_toml_file(path).map_err(input),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_tasks(q: &QuestionArgs) -> Result<Vec<Task>, CliError> {
    if let Some(path) = &q.bench {
        return bench::load_benchmark(path, q.format).map_err(input);
    }
    match (&q.db_id, &q.question) {
        (Some(db), Some(question)) => Ok(vec![Task {
            evidence: q.evidence.clone(),
            gold_sql: q.gold.clone(),
            ..Task::new("cli", db.clone(), question.clone())
        }]),
        _ => Err(input("give either --bench or both --db-id and --question")),
    }
}

fn gateway(g: &GlobalArgs, cfg: &PipelineConfig, tasks: &[Task]) -> Result<Gateway, CliError> {
    let backend: Box<dyn ChatBackend> = if let Some(path) = &g.replay {
        Box::new(ReplayBackend::new(ReplayStore::load(path).map_err(input)?))
    } else if g.oracle {
        Box::new(demo::oracle_for(tasks))
    } else {
        let default = g
            .endpoint
            .clone()
            .or_else(|| cfg.models.coder.base_url.clone())
            .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
        let mut live = OpenAiBackend::new(Endpoint::new(default)).map_err(input)?;
        for stage in StageTag::ALL {
            if let Some(url) = &cfg.models.slot(stage).base_url {
                live = live.with_stage_endpoint(stage, Endpoint::new(url.clone()));
            }
        }
        Box::new(live)
    };
    let mut gw = Gateway::new(backend).with_parallelism(g.jobs);
    if let Some(path) = &g.record {
        gw = gw.with_recorder(ReplayWriter::create(path).map_err(input)?);
    }
    Ok(gw)
}

fn store(q: &QuestionArgs, seed: u64) -> Result<CatalogStore, CliError> {
    if !q.db_root.is_dir() {
        return Err(input(format!("database root {} is not a directory", q.db_root.display())));
    }
    Ok(CatalogStore::new(
        &q.db_root,
        SamplingOptions {
            seed,
            ..Default::default()
        },
    ))
}

fn json_line(out: &mut dyn Write, v: &impl serde::Serialize) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, v).map_err(runtime)?;
    writeln!(out).map_err(runtime)
}

fn link_or_fallback(
    session: &mut crate::pipeline::Session<'_, '_>,
    cfg: &PipelineConfig,
) -> Result<LinkingPrediction, CliError> {
    if !cfg.linking_enabled {
        return Ok(LinkingPrediction::all_tables(
            session.catalog(),
            String::new(),
            false,
        ));
    }
    session.link_schema().map_err(runtime)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Schema {
            db,
            kind,
            tables,
            descriptions,
        } => {
            let opts = SamplingOptions {
                seed: g.seed,
                ..Default::default()
            };
            let mut catalog = introspect(db, &opts).map_err(input)?;
            if let Some(dir) = descriptions {
                catalog = attach_descriptions(catalog, dir);
            }
            let subset = if tables.is_empty() {
                SchemaSubset::full(&catalog)
            } else {
                SchemaSubset::new(&catalog, tables).map_err(input)?
            };
            write!(out, "{}", render(&subset, *kind)).map_err(runtime)?;
            Ok(0)
        }
        Command::Link { q } => {
            let cfg = pipeline_config(g)?;
            let tasks = load_tasks(q)?;
            let store = store(q, g.seed)?;
            let gw = gateway(g, &cfg, &tasks)?;
            let pipeline = Pipeline::new(&gw, cfg).map_err(input)?;
            if q.bench.is_some() {
                let report = bench::evaluate_linking(&tasks, &store, &pipeline, g.jobs);
                write!(out, "{}", bench::linking_table(&[("linker", &report.metrics)])).map_err(runtime)?;
                for (qid, why) in &report.skipped {
                    eprintln!("skipped {qid}: {why}");
                }
                return Ok(if report.skipped.is_empty() { 0 } else { 1 });
            }
            let catalog = store.get(&tasks[0].db_id).map_err(input)?;
            let mut session = pipeline.session(&tasks[0], &catalog).map_err(input)?;
            let pred = session.link_schema().map_err(runtime)?;
            json_line(out, &pred)?;
            Ok(0)
        }
        Command::Generate { q } => {
            let cfg = pipeline_config(g)?;
            let tasks = load_tasks(q)?;
            let store = store(q, g.seed)?;
            let gw = gateway(g, &cfg, &tasks)?;
            let pipeline = Pipeline::new(&gw, cfg.clone()).map_err(input)?;
            let mut failed = false;
            for task in &tasks {
                let result = (|| {
                    let catalog = store.get(&task.db_id).map_err(input)?;
                    let mut session = pipeline.session(task, &catalog).map_err(input)?;
                    let linked = link_or_fallback(&mut session, &cfg)?;
                    let id = session.generate_candidate(&linked).map_err(runtime)?;
                    Ok::<_, CliError>(session.candidate(id).clone())
                })();
                match result {
                    Ok(c) => json_line(
                        out,
                        &serde_json::json!({
                            "question_id": task.question_id,
                            "sql": c.sql,
                            "status": c.exec.map(|e| e.status),
                        }),
                    )?,
                    Err(e) => {
                        eprintln!("{}: {e}", task.question_id);
                        failed = true;
                    }
                }
            }
            Ok(failed as i32)
        }
        Command::Run { q, out: trace_dir } => {
            let cfg = pipeline_config(g)?;
            let tasks = load_tasks(q)?;
            let store = store(q, g.seed)?;
            let gw = gateway(g, &cfg, &tasks)?;
            let pipeline = Pipeline::new(&gw, cfg).map_err(input)?;
            if let Some(dir) = trace_dir {
                std::fs::create_dir_all(dir).map_err(input)?;
            }
            let mut failed = false;
            for task in &tasks {
                let catalog = store.get(&task.db_id).map_err(input)?;
                let trace = match pipeline.run(task, &catalog) {
                    Ok(run) => {
                        json_line(
                            out,
                            &serde_json::json!({
                                "question_id": task.question_id,
                                "sql": run.final_candidate.sql,
                                "calls": run.trace.call_count(),
                            }),
                        )?;
                        run.trace
                    }
                    Err(f) => {
                        eprintln!("{f}");
                        failed = true;
                        *f.trace
                    }
                };
                if let Some(dir) = trace_dir {
                    write_json(&dir.join(format!("{}.json", task.question_id)), &trace)?;
                }
            }
            Ok(failed as i32)
        }
        Command::Eval { q, out: dir } => {
            if q.bench.is_none() {
                return Err(input("eval needs --bench"));
            }
            let cfg = pipeline_config(g)?;
            let tasks = load_tasks(q)?;
            let store = store(q, g.seed)?;
            let gw = gateway(g, &cfg, &tasks)?;
            let pipeline = Pipeline::new(&gw, cfg).map_err(input)?;
            let opts = EvalOptions {
                jobs: g.jobs,
                match_options: pipeline.config().match_options,
                ..Default::default()
            };
            let eval = bench::evaluate(&tasks, &store, &pipeline, &opts);
            bench::write_report_files(dir, &eval).map_err(runtime)?;
            write!(out, "{}", bench::report_text(&eval.report)).map_err(runtime)?;
            Ok(if eval.report.failures == 0 { 0 } else { 1 })
        }
        Command::PrepSft {
            db_root,
            bench: bench_path,
            format,
            out: dir,
            noise_rate,
        } => {
            if !(0.0..=1.0).contains(noise_rate) {
                return Err(input("--noise-rate must lie in [0, 1]"));
            }
            let tasks = bench::load_benchmark(bench_path, *format).map_err(input)?;
            let store = CatalogStore::new(
                db_root,
                SamplingOptions {
                    seed: g.seed,
                    ..Default::default()
                },
            );
            let cfg = pipeline_config(g)?;
            let opts = PrepOptions {
                linking_serialization: cfg.linking_serialization,
                generation_serialization: cfg.generation_serialization,
                noise_rate: *noise_rate,
                seed: g.seed,
            };
            let linking = trainprep::build_linking_samples(&tasks, &store, &opts);
            let generation = trainprep::build_generation_samples(&tasks, &store, &opts);
            trainprep::write_corpus_dir(dir, &linking, &generation, &opts).map_err(runtime)?;
            writeln!(
                out,
                "linking {} samples, generation {} samples ({:.1}% noisy), {} skipped",
                linking.samples.len(),
                generation.samples.len(),
                generation.noise_fraction() * 100.0,
                linking.skipped.len()
            )
            .map_err(runtime)?;
            Ok(if linking.skipped.is_empty() { 0 } else { 1 })
        }
        Command::ReplayRecord { q } => {
            let Some(path) = &g.record else {
                return Err(input("replay-record needs --record <file>"));
            };
            if g.replay.is_some() {
                return Err(input("replay-record cannot read from --replay"));
            }
            let cfg = pipeline_config(g)?;
            let tasks = load_tasks(q)?;
            let store = store(q, g.seed)?;
            let gw = gateway(g, &cfg, &tasks)?;
            let pipeline = Pipeline::new(&gw, cfg).map_err(input)?;
            let eval = bench::evaluate(
                &tasks,
                &store,
                &pipeline,
                &EvalOptions {
                    jobs: g.jobs,
                    ..Default::default()
                },
            );
            writeln!(
                out,
                "recorded {} exchanges for {} questions to {}",
                gw.call_count(None),
                tasks.len(),
                path.display()
            )
            .map_err(runtime)?;
            Ok(if eval.report.failures == 0 { 0 } else { 1 })
        }
        Command::Demo { out: dir } => {
            let d = demo::Demo::create(dir).map_err(runtime)?;
            d.write_benchmark(&dir.join("bench.json")).map_err(runtime)?;
            writeln!(out, "wrote {} databases and bench.json to {}", demo::DB_IDS.len(), dir.display())
                .map_err(runtime)?;
            Ok(0)
        }
    }
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(runtime)?;
    std::fs::write(path, text + "\n").map_err(runtime)
}
