//! Benchmark loading, schema-linking metrics and execution-accuracy runs.

mod eval;
mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pipeline::{LinkingPrediction, Task};

pub use eval::{
    evaluate, evaluate_linking, EvalOptions, EvalReport, Evaluation, LinkingOutcome, LinkingReport,
    QuestionOutcome, SplitStat,
};
pub use report::{ablation_table, linking_table, report_text, write_report_files};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("reading {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("benchmark file is not a JSON array")]
    NotAnArray,
    #[error("row {row}: missing or invalid field `{field}`")]
    SchemaMismatch { field: &'static str, row: usize },
    #[error("{preds} predictions but {golds} gold sets")]
    LengthMismatch { preds: usize, golds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BenchFormat {
    Bird,
    Spider,
}

impl fmt::Display for BenchFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchFormat::Bird => "bird",
            BenchFormat::Spider => "spider",
        })
    }
}

impl FromStr for BenchFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bird" => Ok(BenchFormat::Bird),
            "spider" => Ok(BenchFormat::Spider),
            _ => Err(format!("unknown benchmark format `{s}` (expected bird or spider)")),
        }
    }
}

pub fn load_benchmark(path: &Path, format: BenchFormat) -> Result<Vec<Task>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Read {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_benchmark(&text, format).map_err(|e| match e {
        BenchError::Read { reason, .. } => BenchError::Read {
            path: path.to_path_buf(),
            reason,
        },
        e => e,
    })
}

pub fn parse_benchmark(text: &str, format: BenchFormat) -> Result<Vec<Task>, BenchError> {
    let value: Value = serde_json::from_str(text).map_err(|e| BenchError::Read {
        path: PathBuf::new(),
        reason: e.to_string(),
    })?;
    let rows = value.as_array().ok_or(BenchError::NotAnArray)?;
    rows.iter()
        .enumerate()
        .map(|(row, v)| parse_row(v, row, format))
        .collect()
}

fn parse_row(v: &Value, row: usize, format: BenchFormat) -> Result<Task, BenchError> {
    let text = |field: &'static str| -> Result<String, BenchError> {
        v.get(field)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or(BenchError::SchemaMismatch { field, row })
    };
    let optional = |field: &'static str| -> Result<Option<String>, BenchError> {
        match v.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(BenchError::SchemaMismatch { field, row }),
        }
    };
    if !v.is_object() {
        return Err(BenchError::SchemaMismatch { field: "<row>", row });
    }
    let db_id = text("db_id")?;
    let question = text("question")?;
    match format {
        BenchFormat::Bird => {
            let question_id = match v.get("question_id") {
                Some(Value::Number(n)) => n.to_string(),
                Some(Value::String(s)) => s.clone(),
                None => row.to_string(),
                Some(_) => {
                    return Err(BenchError::SchemaMismatch {
                        field: "question_id",
                        row,
                    })
                }
            };
            Ok(Task {
                question_id,
                db_id,
                question,
                evidence: optional("evidence")?,
                gold_sql: Some(text("SQL")?),
                difficulty: optional("difficulty")?,
            })
        }
        BenchFormat::Spider => Ok(Task {
            question_id: row.to_string(),
            db_id,
            question,
            evidence: None,
            gold_sql: Some(text("query")?),
            difficulty: None,
        }),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkingMetrics {
    /// Fraction with prediction equal to gold.
    pub accuracy: f64,
    /// Fraction with prediction a superset of gold.
    pub recall: f64,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub avg_f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleScores {
    pub exact: bool,
    pub superset: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn normalize<S: AsRef<str>>(set: impl IntoIterator<Item = S>) -> BTreeSet<String> {
    set.into_iter().map(|s| s.as_ref().to_lowercase()).collect()
}

/// Scores of one prediction. An empty prediction has precision 1 against an
/// empty gold set and 0 otherwise; an empty gold set has recall 1.
pub fn example_scores(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> ExampleScores {
    let hit = pred.intersection(gold).count() as f64;
    let precision = if pred.is_empty() {
        if gold.is_empty() { 1.0 } else { 0.0 }
    } else {
        hit / pred.len() as f64
    };
    let recall = if gold.is_empty() { 1.0 } else { hit / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ExampleScores {
        exact: pred == gold,
        superset: pred.is_superset(gold),
        precision,
        recall,
        f1,
    }
}

pub fn linking_metrics_sets<S: AsRef<str>>(
    preds: &[Vec<S>],
    golds: &[Vec<S>],
) -> Result<LinkingMetrics, BenchError> {
    if preds.len() != golds.len() {
        return Err(BenchError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let n = preds.len();
    let mut m = LinkingMetrics {
        n,
        ..Default::default()
    };
    if n == 0 {
        return Ok(m);
    }
    for (p, g) in preds.iter().zip(golds) {
        let s = example_scores(&normalize(p), &normalize(g));
        m.accuracy += s.exact as u8 as f64;
        m.recall += s.superset as u8 as f64;
        m.avg_precision += s.precision;
        m.avg_recall += s.recall;
        m.avg_f1 += s.f1;
    }
    let n = n as f64;
    m.accuracy /= n;
    m.recall /= n;
    m.avg_precision /= n;
    m.avg_recall /= n;
    m.avg_f1 /= n;
    Ok(m)
}

pub fn linking_metrics(
    preds: &[LinkingPrediction],
    golds: &[BTreeSet<String>],
) -> Result<LinkingMetrics, BenchError> {
    let p: Vec<Vec<&str>> = preds
        .iter()
        .map(|p| p.predicted_tables.iter().map(String::as_str).collect())
        .collect();
    let g: Vec<Vec<&str>> = golds
        .iter()
        .map(|g| g.iter().map(String::as_str).collect())
        .collect();
    linking_metrics_sets(&p, &g)
}
