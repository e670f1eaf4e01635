//! Read-only SQL execution with a wall-clock timeout and a row cap, plus the
//! execution-accuracy comparator.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::hooks::{AuthAction, AuthContext, Authorization};
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::format_real;

pub const EVAL_TIMEOUT_MS: u64 = 30_000;
pub const PIPELINE_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_ROW_CAP: usize = 10_000;
pub const PROMPT_MAX_ROWS: usize = 10;
pub const PROMPT_MAX_CHARS: usize = 2_000;

const TIMEOUT_MESSAGE: &str = "timeout";
pub const NO_SQL_MESSAGE: &str = "no sql produced";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("database file not found: {0}")]
    InvalidDbPath(PathBuf),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot compare truncated execution results")]
pub struct TruncatedComparison;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Scalar {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    /// Hex SHA-256 of the blob bytes.
    Blob(String),
}

/// Hashable, totally ordered form of a [`Scalar`] after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarKey {
    Null,
    Integer(i64),
    Real(u64),
    Text(String),
    Blob(String),
}

impl Scalar {
    fn from_value(value: ValueRef<'_>) -> Self {
        match value {
            ValueRef::Null => Scalar::Null,
            ValueRef::Integer(i) => Scalar::Integer(i),
            ValueRef::Real(f) => Scalar::Real(f),
            ValueRef::Text(t) => Scalar::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Scalar::Blob(hex::encode(Sha256::digest(b))),
        }
    }

    /// Integral reals collapse onto integers; everything else is kept.
    pub fn key(&self) -> ScalarKey {
        match self {
            Scalar::Null => ScalarKey::Null,
            Scalar::Integer(i) => ScalarKey::Integer(*i),
            Scalar::Real(f) => {
                if f.fract() == 0.0 && *f >= i64::MIN as f64 && *f < i64::MAX as f64 {
                    ScalarKey::Integer(*f as i64)
                } else {
                    ScalarKey::Real(f.to_bits())
                }
            }
            Scalar::Text(s) => ScalarKey::Text(s.clone()),
            Scalar::Blob(d) => ScalarKey::Blob(d.clone()),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Integer(i) => Some(*i as f64),
            Scalar::Real(f) => Some(*f),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Scalar::Null => "NULL".to_string(),
            Scalar::Integer(i) => i.to_string(),
            Scalar::Real(f) => format_real(*f),
            Scalar::Text(s) => s.clone(),
            Scalar::Blob(d) => format!("<blob {}>", &d[..d.len().min(12)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub error_message: Option<String>,
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<Scalar>>,
    pub truncated: bool,
    pub elapsed_ms: u64,
}

impl ExecResult {
    pub fn ok(column_names: Vec<String>, rows: Vec<Vec<Scalar>>) -> Self {
        Self {
            status: ExecStatus::Ok,
            error_message: None,
            column_names,
            rows,
            truncated: false,
            elapsed_ms: 0,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::Error,
            error_message: Some(message.into()),
            column_names: Vec::new(),
            rows: Vec::new(),
            truncated: false,
            elapsed_ms: 0,
        }
    }

    pub fn timeout() -> Self {
        Self {
            status: ExecStatus::Timeout,
            error_message: Some(TIMEOUT_MESSAGE.to_string()),
            ..Self::error("")
        }
    }

    /// Result attached to a candidate whose model response held no SQL.
    pub fn no_sql() -> Self {
        Self::error(NO_SQL_MESSAGE)
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    fn with_elapsed(mut self, started: Instant) -> Self {
        self.elapsed_ms = started.elapsed().as_millis() as u64;
        self
    }
}

/// First keyword is SELECT, WITH or VALUES, skipping comments and parentheses.
fn starts_as_query(sql: &str) -> bool {
    let mut rest = sql;
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == '(');
        if let Some(r) = rest.strip_prefix("--") {
            rest = r.split_once('\n').map_or("", |(_, r)| r);
        } else if let Some(r) = rest.strip_prefix("/*") {
            rest = r.split_once("*/").map_or("", |(_, r)| r);
        } else {
            break;
        }
    }
    let word: String = rest.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    ["SELECT", "WITH", "VALUES"].iter().any(|k| word.eq_ignore_ascii_case(k))
}

/// Run one statement against the database at `db_path`, read-only.
///
/// SQL-level failures are reported in-band through [`ExecResult::status`];
/// only a missing database file is an `Err`.
pub fn execute(
    db_path: &Path,
    sql: &str,
    timeout_ms: u64,
    row_cap: usize,
) -> Result<ExecResult, ExecError> {
    if !db_path.is_file() {
        return Err(ExecError::InvalidDbPath(db_path.to_path_buf()));
    }
    let started = Instant::now();
    if sql.trim().trim_matches(';').trim().is_empty() {
        return Ok(ExecResult::error("empty statement").with_elapsed(started));
    }
    let conn = match Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    ) {
        Ok(c) => c,
        Err(e) => return Ok(ExecResult::error(e.to_string()).with_elapsed(started)),
    };
    if let Err(e) = conn.pragma_update(None, "query_only", true) {
        return Ok(ExecResult::error(e.to_string()).with_elapsed(started));
    }
    // REINDEX on a database without indexes reports itself read-only.
    conn.authorizer(Some(|ctx: AuthContext<'_>| match ctx.action {
        AuthAction::Select
        | AuthAction::Read { .. }
        | AuthAction::Function { .. }
        | AuthAction::Recursive => Authorization::Allow,
        _ => Authorization::Deny,
    }));
    let deadline = started + Duration::from_millis(timeout_ms);
    conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));

    let failed = |e: rusqlite::Error| {
        if Instant::now() >= deadline {
            ExecResult::timeout()
        } else {
            ExecResult::error(e.to_string())
        }
    };

    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return Ok(failed(e).with_elapsed(started)),
    };
    if !stmt.readonly() || !starts_as_query(sql) {
        return Ok(
            ExecResult::error("only read-only statements may be executed").with_elapsed(started)
        );
    }
    let column_names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let arity = column_names.len();
    let mut rows = match stmt.query([]) {
        Ok(r) => r,
        Err(e) => return Ok(failed(e).with_elapsed(started)),
    };
    let mut out = Vec::new();
    let mut truncated = false;
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                if out.len() == row_cap {
                    truncated = true;
                    break;
                }
                let mut tuple = Vec::with_capacity(arity);
                for i in 0..arity {
                    match row.get_ref(i) {
                        Ok(v) => tuple.push(Scalar::from_value(v)),
                        Err(e) => return Ok(failed(e).with_elapsed(started)),
                    }
                }
                out.push(tuple);
            }
            Ok(None) => break,
            Err(e) => return Ok(failed(e).with_elapsed(started)),
        }
    }
    let mut result = ExecResult::ok(column_names, out);
    result.truncated = truncated;
    Ok(result.with_elapsed(started))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchOptions {
    /// Compare row multiplicities instead of distinct rows.
    pub multiset: bool,
    /// Absolute tolerance for numeric cells; exact when `None`.
    pub real_epsilon: Option<f64>,
}

/// Execution-accuracy match under the default (set, exact) semantics.
pub fn results_match(pred: &ExecResult, gold: &ExecResult) -> Result<bool, TruncatedComparison> {
    results_match_with(pred, gold, &MatchOptions::default())
}

pub fn results_match_with(
    pred: &ExecResult,
    gold: &ExecResult,
    opts: &MatchOptions,
) -> Result<bool, TruncatedComparison> {
    if pred.truncated || gold.truncated {
        return Err(TruncatedComparison);
    }
    if !pred.is_ok() || !gold.is_ok() {
        return Ok(false);
    }
    if let Some(eps) = opts.real_epsilon {
        return Ok(approx_match(&pred.rows, &gold.rows, eps, opts.multiset));
    }
    let keyed = |rows: &[Vec<Scalar>]| -> Vec<Vec<ScalarKey>> {
        rows.iter()
            .map(|r| r.iter().map(Scalar::key).collect())
            .collect()
    };
    let (p, g) = (keyed(&pred.rows), keyed(&gold.rows));
    if opts.multiset {
        let (mut p, mut g) = (p, g);
        p.sort();
        g.sort();
        Ok(p == g)
    } else {
        let p: HashSet<_> = p.into_iter().collect();
        let g: HashSet<_> = g.into_iter().collect();
        Ok(p == g)
    }
}

fn cells_close(a: &Scalar, b: &Scalar, eps: f64) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => (x - y).abs() <= eps,
        _ => a.key() == b.key(),
    }
}

fn rows_close(a: &[Scalar], b: &[Scalar], eps: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_close(x, y, eps))
}

fn approx_match(p: &[Vec<Scalar>], g: &[Vec<Scalar>], eps: f64, multiset: bool) -> bool {
    if multiset {
        if p.len() != g.len() {
            return false;
        }
        let mut used = vec![false; g.len()];
        return p.iter().all(|row| {
            match (0..g.len()).find(|&j| !used[j] && rows_close(row, &g[j], eps)) {
                Some(j) => {
                    used[j] = true;
                    true
                }
                None => false,
            }
        });
    }
    p.iter().all(|r| g.iter().any(|s| rows_close(r, s, eps)))
        && g.iter().all(|s| p.iter().any(|r| rows_close(r, s, eps)))
}

/// Compact text form of a result for inclusion in a prompt.
pub fn format_for_prompt(res: &ExecResult, max_rows: usize, max_chars: usize) -> String {
    let text = match res.status {
        ExecStatus::Ok => {
            let mut out = res.column_names.join(" | ");
            for row in res.rows.iter().take(max_rows) {
                out.push('\n');
                let cells: Vec<String> = row.iter().map(Scalar::render).collect();
                out.push_str(&cells.join(" | "));
            }
            if res.rows.len() > max_rows || res.truncated {
                let plus = if res.truncated { "+" } else { "" };
                let _ = write!(out, "\n... ({}{plus} rows total)", res.rows.len());
            }
            out
        }
        ExecStatus::Error | ExecStatus::Timeout => format!(
            "Error: {}",
            res.error_message.as_deref().unwrap_or("unknown error")
        ),
    };
    cap_chars(&text, max_chars)
}

fn cap_chars(text: &str, max_chars: usize) -> String {
    const TAIL: &str = "...";
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let keep = max_chars.saturating_sub(TAIL.len());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TAIL);
    out
}
