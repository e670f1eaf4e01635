use std::collections::BTreeMap;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{linking_metrics_sets, LinkingMetrics};
use crate::catalog::CatalogStore;
use crate::exec::{self, results_match_with, MatchOptions, DEFAULT_ROW_CAP, EVAL_TIMEOUT_MS};
use crate::pipeline::{Pipeline, PipelineTrace, Task};
use crate::trainprep::gold_tables;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Questions in flight at once.
    pub jobs: usize,
    pub timeout_ms: u64,
    pub row_cap: usize,
    pub match_options: MatchOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            timeout_ms: EVAL_TIMEOUT_MS,
            row_cap: DEFAULT_ROW_CAP,
            match_options: MatchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    pub db_id: String,
    pub difficulty: Option<String>,
    pub final_sql: Option<String>,
    pub ex_match: bool,
    pub call_count: usize,
    pub elapsed_ms: u64,
    /// Pipeline or comparison failure, if any.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStat {
    pub n: usize,
    pub correct: usize,
    pub ex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_question: Vec<QuestionOutcome>,
    pub aggregate_ex: f64,
    /// Empty when no task carries a difficulty label.
    pub splits: BTreeMap<String, SplitStat>,
    pub mean_calls: f64,
    pub min_calls: usize,
    pub max_calls: usize,
    pub failures: usize,
    pub config_fingerprint: String,
}

impl EvalReport {
    fn from_outcomes(per_question: Vec<QuestionOutcome>, config_fingerprint: String) -> Self {
        let n = per_question.len();
        let ratio = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        let correct = per_question.iter().filter(|q| q.ex_match).count();
        let mut splits: BTreeMap<String, SplitStat> = BTreeMap::new();
        for q in &per_question {
            if let Some(d) = &q.difficulty {
                let s = splits.entry(d.clone()).or_insert(SplitStat {
                    n: 0,
                    correct: 0,
                    ex: 0.0,
                });
                s.n += 1;
                s.correct += q.ex_match as usize;
            }
        }
        for s in splits.values_mut() {
            s.ex = ratio(s.correct, s.n);
        }
        let calls: Vec<usize> = per_question.iter().map(|q| q.call_count).collect();
        Self {
            aggregate_ex: ratio(correct, n),
            splits,
            mean_calls: ratio(calls.iter().sum(), n),
            min_calls: calls.iter().copied().min().unwrap_or(0),
            max_calls: calls.iter().copied().max().unwrap_or(0),
            failures: per_question.iter().filter(|q| q.error.is_some()).count(),
            per_question,
            config_fingerprint,
        }
    }

    pub fn correct(&self) -> usize {
        self.per_question.iter().filter(|q| q.ex_match).count()
    }

    /// SHA-256 of the report with timings zeroed.
    pub fn content_hash(&self) -> String {
        let mut r = self.clone();
        for q in &mut r.per_question {
            q.elapsed_ms = 0;
        }
        hex::encode(Sha256::digest(serde_json::to_vec(&r).expect("report serializes")))
    }
}

/// Report plus the per-question traces, in task order.
#[derive(Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub traces: Vec<PipelineTrace>,
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("building evaluation thread pool")
}

fn eval_one(task: &Task, store: &CatalogStore, pipeline: &Pipeline<'_>, opts: &EvalOptions) -> (QuestionOutcome, PipelineTrace) {
    let started = Instant::now();
    let mut outcome = QuestionOutcome {
        question_id: task.question_id.clone(),
        db_id: task.db_id.clone(),
        difficulty: task.difficulty.clone(),
        final_sql: None,
        ex_match: false,
        call_count: 0,
        elapsed_ms: 0,
        error: None,
    };
    let catalog = match store.get(&task.db_id) {
        Ok(c) => c,
        Err(e) => {
            outcome.error = Some(e.to_string());
            let trace = PipelineTrace::failed(task, e.to_string());
            return (outcome, trace);
        }
    };
    let trace = match pipeline.run(task, &catalog) {
        Ok(run) => {
            outcome.final_sql = Some(run.final_candidate.sql.clone());
            outcome.call_count = run.trace.call_count();
            match compare(&run.final_candidate.sql, task, &catalog.source_path, opts) {
                Ok(m) => outcome.ex_match = m,
                Err(e) => outcome.error = Some(e),
            }
            run.trace
        }
        Err(failure) => {
            warn!("{failure}");
            outcome.call_count = failure.trace.call_count();
            outcome.error = Some(failure.error.to_string());
            *failure.trace
        }
    };
    outcome.elapsed_ms = started.elapsed().as_millis() as u64;
    (outcome, trace)
}

fn compare(sql: &str, task: &Task, db: &std::path::Path, opts: &EvalOptions) -> Result<bool, String> {
    let gold = task
        .gold_sql
        .as_deref()
        .ok_or_else(|| "task has no gold SQL".to_string())?;
    if sql.trim().is_empty() {
        return Ok(false);
    }
    let run = |s: &str| exec::execute(db, s, opts.timeout_ms, opts.row_cap).map_err(|e| e.to_string());
    let gold_res = run(gold)?;
    if !gold_res.is_ok() {
        return Err(format!(
            "gold SQL failed: {}",
            gold_res.error_message.unwrap_or_default()
        ));
    }
    let pred_res = run(sql)?;
    results_match_with(&pred_res, &gold_res, &opts.match_options).map_err(|e| e.to_string())
}

/// Run the pipeline on every task and score the final SQL by execution
/// accuracy. Pipeline failures count as misses.
pub fn evaluate(tasks: &[Task], store: &CatalogStore, pipeline: &Pipeline<'_>, opts: &EvalOptions) -> Evaluation {
    let results: Vec<(QuestionOutcome, PipelineTrace)> = pool(opts.jobs).install(|| {
        tasks
            .par_iter()
            .map(|t| eval_one(t, store, pipeline, opts))
            .collect()
    });
    let (outcomes, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Evaluation {
        report: EvalReport::from_outcomes(outcomes, pipeline.config().fingerprint()),
        traces,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingOutcome {
    pub question_id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingReport {
    pub metrics: LinkingMetrics,
    pub per_question: Vec<LinkingOutcome>,
    /// Questions left out because linking or gold derivation failed.
    pub skipped: Vec<(String, String)>,
}

/// Run only the linking stage and score it against the gold SQL's tables.
pub fn evaluate_linking(tasks: &[Task], store: &CatalogStore, pipeline: &Pipeline<'_>, jobs: usize) -> LinkingReport {
    let cfg = pipeline.config();
    let results: Vec<Result<LinkingOutcome, (String, String)>> = pool(jobs).install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let fail = |e: String| (task.question_id.clone(), e);
                let catalog = store.get(&task.db_id).map_err(|e| fail(e.to_string()))?;
                let gold = gold_tables(task, &catalog).map_err(|e| fail(e.to_string()))?;
                let mut session = pipeline.session(task, &catalog).map_err(|e| fail(e.to_string()))?;
                let pred = if cfg.voting_linkers.is_empty() {
                    session.link_schema()
                } else {
                    let models: Vec<String> = std::iter::once(cfg.models.coder.model.clone())
                        .chain(cfg.voting_linkers.iter().map(|s| s.model.clone()))
                        .collect();
                    session.link_schema_voting(&models)
                }
                .map_err(|e| fail(e.to_string()))?;
                Ok(LinkingOutcome {
                    question_id: task.question_id.clone(),
                    predicted: pred.predicted_tables,
                    gold,
                    fallback_used: pred.fallback_used,
                })
            })
            .collect()
    });
    let mut per_question = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(o) => per_question.push(o),
            Err(s) => skipped.push(s),
        }
    }
    let preds: Vec<Vec<&String>> = per_question.iter().map(|o| o.predicted.iter().collect()).collect();
    let golds: Vec<Vec<&String>> = per_question.iter().map(|o| o.gold.iter().collect()).collect();
    let metrics = linking_metrics_sets(&preds, &golds).expect("lengths agree by construction");
    LinkingReport {
        metrics,
        per_question,
        skipped,
    }
}
