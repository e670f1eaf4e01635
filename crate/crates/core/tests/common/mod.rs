#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nl2sql::demo::Demo;
use nl2sql::exec::Scalar;
use nl2sql::llm::stub::{question_of, FnBackend};
use nl2sql::llm::{ChatBackend, ChatRequest, ChatResponse, GatewayError, StageTag};
use nl2sql::Task;
use proptest::prelude::*;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

pub fn demo() -> (TempDir, Demo) {
    let dir = TempDir::new().unwrap();
    let demo = Demo::create(dir.path()).unwrap();
    (dir, demo)
}

pub fn gold_by_question(tasks: &[Task]) -> HashMap<String, String> {
    tasks
        .iter()
        .map(|t| (t.question.clone(), t.gold_sql.clone().unwrap()))
        .collect()
}

/// Per-stage scripted responses. Generation returns gold; the two
/// revisions and every merge return SQL that executes to pairwise distinct
/// results, so no merge can short-circuit.
pub fn disagreeing_backend(tasks: &[Task]) -> impl ChatBackend {
    let gold = gold_by_question(tasks);
    let merges = AtomicUsize::new(0);
    FnBackend::new(move |req: &ChatRequest| {
        let prompt = req.prompt_text();
        let q = question_of(&prompt).unwrap_or_default();
        Ok(match req.stage_tag {
            StageTag::Linking => "{\"tables\": []}".to_string(),
            StageTag::Generation => gold[q].clone(),
            StageTag::Revision if prompt.contains("sample rows") => "SELECT 'revised-with-samples'".into(),
            StageTag::Revision => "SELECT 'revised-plain'".into(),
            StageTag::Merge => {
                let n = merges.fetch_add(1, Ordering::SeqCst);
                format!("SELECT 'merged-{n}'")
            }
        })
    })
}

/// Echo backend: the question's gold SQL everywhere except linking, which
/// fails to parse.
pub fn gold_everywhere(tasks: &[Task]) -> impl ChatBackend {
    let gold = gold_by_question(tasks);
    FnBackend::new(move |req: &ChatRequest| {
        let prompt = req.prompt_text();
        let q = question_of(&prompt).unwrap_or_default();
        gold.get(q)
            .cloned()
            .ok_or_else(|| GatewayError::Backend(format!("no gold for {q}")))
    })
}

/// Records every prompt it sees, keyed by stage.
pub struct Spy<B> {
    pub inner: B,
    pub seen: std::sync::Mutex<Vec<(StageTag, String)>>,
}

impl<B> Spy<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            seen: Default::default(),
        }
    }
}

impl<B: ChatBackend> ChatBackend for Spy<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.seen
            .lock()
            .unwrap()
            .push((req.stage_tag, req.prompt_text()));
        self.inner.complete(req)
    }
}

pub fn scalar() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        Just(Scalar::Null),
        (-3i64..4).prop_map(Scalar::Integer),
        prop::sample::select(vec![-1.0, 0.0, 0.5, 1.0, 2.0, 2.5, 3.25]).prop_map(Scalar::Real),
        prop::sample::select(vec!["", "a", "b", "A", "1"]).prop_map(|s| Scalar::Text(s.into())),
    ]
}

pub fn rows(arity: usize) -> impl Strategy<Value = Vec<Vec<Scalar>>> {
    prop::collection::vec(prop::collection::vec(scalar(), arity), 0..=20)
}

/// Canonical text of a cell, written independently of the library's key.
pub fn canon(s: &Scalar) -> String {
    match s {
        Scalar::Null => "null".into(),
        Scalar::Integer(i) => format!("num:{i}"),
        Scalar::Real(f) if f.fract() == 0.0 => format!("num:{}", *f as i64),
        Scalar::Real(f) => format!("real:{f:?}"),
        Scalar::Text(t) => format!("text:{t}"),
        Scalar::Blob(b) => format!("blob:{b}"),
    }
}

/// Sort/dedup oracle for set-semantics result equality.
pub fn oracle_match(a: &[Vec<Scalar>], b: &[Vec<Scalar>]) -> bool {
    let norm = |rows: &[Vec<Scalar>]| {
        let mut v: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(canon).collect()).collect();
        v.sort();
        v.dedup();
        v
    };
    norm(a) == norm(b)
}

/// Straight-line linking metrics used as an oracle.
pub fn brute_linking(preds: &[Vec<String>], golds: &[Vec<String>]) -> [f64; 5] {
    let n = preds.len() as f64;
    let mut acc = [0.0; 5];
    for (p, g) in preds.iter().zip(golds) {
        let mut p: Vec<String> = p.iter().map(|s| s.to_lowercase()).collect();
        let mut g: Vec<String> = g.iter().map(|s| s.to_lowercase()).collect();
        p.sort();
        p.dedup();
        g.sort();
        g.dedup();
        let inter = p.iter().filter(|x| g.contains(x)).count() as f64;
        let exact = p == g;
        let superset = g.iter().all(|x| p.contains(x));
        let prec = match (p.len(), g.len()) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (np, _) => inter / np as f64,
        };
        let rec = if g.is_empty() { 1.0 } else { inter / g.len() as f64 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        acc[0] += exact as i32 as f64;
        acc[1] += superset as i32 as f64;
        acc[2] += prec;
        acc[3] += rec;
        acc[4] += f1;
    }
    acc.map(|x| if n > 0.0 { x / n } else { 0.0 })
}

pub fn table_sets() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    let names = prop::sample::subsequence(vec!["a", "b", "c", "d", "e", "F"], 0..=6);
    (names.clone(), names).prop_map(|(p, g)| {
        (
            p.into_iter().map(String::from).collect(),
            g.into_iter().map(String::from).collect(),
        )
    })
}

pub const MALICIOUS: &[&str] = &[
    "DROP TABLE schools",
    "DELETE FROM students",
    "UPDATE students SET gpa = 0",
    "INSERT INTO schools VALUES (9, 'x', 'y', 2000)",
    "CREATE TABLE pwned (a)",
    "CREATE INDEX i ON students(name)",
    "ALTER TABLE schools ADD COLUMN z",
    "REPLACE INTO schools VALUES (1, 'x', 'y', 1)",
    "WITH t AS (SELECT 1) DELETE FROM scores",
    "SELECT 1; DROP TABLE schools",
    "PRAGMA user_version = 7",
    "PRAGMA journal_mode = WAL",
    "VACUUM",
    "REINDEX",
    "ANALYZE",
    "BEGIN IMMEDIATE",
    "ATTACH DATABASE 'evil.sqlite' AS evil",
];

pub fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                out.insert(path.display().to_string(), hex::encode(digest));
            }
        }
    }
    out
}
