//! Per-question orchestration: table linking, candidate generation, two
//! full-schema revisions and the merge-revision DAG.
//!
//! A [`Pipeline`] holds the shared gateway and configuration. Each question
//! runs in its own [`Session`], which owns the candidate arena and the trace.
//! Candidates reference their parents by [`CandidateId`].

mod config;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    default_merge_topology, ConfigError, MergeStep, ModelSlot, PipelineConfig, Preset,
    RevisionKinds, StageModels, SQL1, SQL2, SQL3,
};

use crate::catalog::DatabaseCatalog;
use crate::exec::{self, format_for_prompt, results_match_with, ExecError, ExecResult};
use crate::llm::{ChatRequest, Gateway, GatewayError, StageTag};
use crate::schema::{render, SchemaSubset, SerializationKind};
use crate::sql::{extract_sql, tables_only};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("task {0}: question is empty")]
    EmptyQuestion(String),
    #[error("task {task} targets database `{task_db}` but catalog is `{catalog_db}`")]
    DatabaseMismatch {
        task: String,
        task_db: String,
        catalog_db: String,
    },
    #[error("unknown candidate label `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub question_id: String,
    pub db_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: Option<String>,
    #[serde(default)]
    pub gold_sql: Option<String>,
    #[serde(default)]
    pub difficulty: Option<String>,
}

impl Task {
    pub fn new(question_id: impl Into<String>, db_id: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            db_id: db_id.into(),
            question: question.into(),
            evidence: None,
            gold_sql: None,
            difficulty: None,
        }
    }

    pub fn evidence_text(&self) -> &str {
        self.evidence.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkingPrediction {
    /// Catalog spellings, in catalog order.
    pub predicted_tables: Vec<String>,
    pub raw_output: String,
    pub parse_ok: bool,
    pub fallback_used: bool,
    /// Names the model produced that are not catalog tables.
    pub dropped: Vec<String>,
}

impl LinkingPrediction {
    pub fn all_tables(catalog: &DatabaseCatalog, raw_output: String, parse_ok: bool) -> Self {
        Self {
            predicted_tables: catalog.tables.iter().map(|t| t.name.clone()).collect(),
            raw_output,
            parse_ok,
            fallback_used: true,
            dropped: Vec::new(),
        }
    }

    pub fn table_set(&self) -> BTreeSet<String> {
        self.predicted_tables
            .iter()
            .map(|t| t.to_lowercase())
            .collect()
    }
}

/// Parse a `{"tables": [...]}` object out of a model response, tolerating
/// code fences and surrounding prose.
pub fn parse_linking_response(raw: &str) -> Option<Vec<String>> {
    for (i, _) in raw.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&raw[i..]).into_iter::<serde_json::Value>();
        let Some(Ok(serde_json::Value::Object(obj))) = stream.next() else {
            continue;
        };
        let Some(serde_json::Value::Array(items)) = obj.get("tables") else {
            continue;
        };
        return Some(
            items
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect(),
        );
    }
    None
}

fn resolve_linking(catalog: &DatabaseCatalog, raw: String) -> LinkingPrediction {
    let Some(names) = parse_linking_response(&raw) else {
        return LinkingPrediction::all_tables(catalog, raw, false);
    };
    let mut indices = BTreeSet::new();
    let mut dropped = Vec::new();
    for name in names {
        match catalog.table_index(name.trim()) {
            Some(i) => {
                indices.insert(i);
            }
            None => dropped.push(name),
        }
    }
    if !dropped.is_empty() {
        warn!("linking output names unknown tables {dropped:?}");
    }
    if indices.is_empty() {
        let mut pred = LinkingPrediction::all_tables(catalog, raw, true);
        pred.dropped = dropped;
        return pred;
    }
    LinkingPrediction {
        predicted_tables: indices
            .into_iter()
            .map(|i| catalog.tables[i].name.clone())
            .collect(),
        raw_output: raw,
        parse_ok: true,
        fallback_used: false,
        dropped,
    }
}

/// Union of member predictions, in catalog order.
pub fn union_predictions(catalog: &DatabaseCatalog, members: &[LinkingPrediction]) -> LinkingPrediction {
    let mut indices = BTreeSet::new();
    for m in members {
        for t in &m.predicted_tables {
            if let Some(i) = catalog.table_index(t) {
                indices.insert(i);
            }
        }
    }
    LinkingPrediction {
        predicted_tables: indices
            .into_iter()
            .map(|i| catalog.tables[i].name.clone())
            .collect(),
        raw_output: members
            .iter()
            .map(|m| m.raw_output.as_str())
            .collect::<Vec<_>>()
            .join("\n---\n"),
        parse_ok: members.iter().any(|m| m.parse_ok),
        fallback_used: members.iter().any(|m| m.fallback_used),
        dropped: members.iter().flat_map(|m| m.dropped.clone()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidateId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CandidateStage {
    Sql1Generation,
    Sql2RevisionPlain,
    Sql3RevisionSample,
    Merge(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSql {
    pub id: CandidateId,
    /// Empty when the model response held no SQL.
    pub sql: String,
    pub stage: CandidateStage,
    pub parents: Vec<CandidateId>,
    pub exec: Option<ExecResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCall {
    pub stage: StageTag,
    /// Candidate label or `LINKING`.
    pub label: String,
    pub model: String,
    pub prompt: String,
    pub response: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub label: String,
    pub left: CandidateId,
    pub right: CandidateId,
    pub short_circuited: bool,
    pub output: CandidateId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub question_id: String,
    pub db_id: String,
    pub linking: Option<LinkingPrediction>,
    pub calls: Vec<StageCall>,
    pub candidates: Vec<CandidateSql>,
    pub labels: BTreeMap<String, CandidateId>,
    pub merges: Vec<MergeRecord>,
    pub final_label: Option<String>,
    pub final_sql: Option<String>,
    pub error: Option<String>,
    pub elapsed_ms: u64,
}

impl PipelineTrace {
    fn new(task: &Task) -> Self {
        Self {
            question_id: task.question_id.clone(),
            db_id: task.db_id.clone(),
            linking: None,
            calls: Vec::new(),
            candidates: Vec::new(),
            labels: BTreeMap::new(),
            merges: Vec::new(),
            final_label: None,
            final_sql: None,
            error: None,
            elapsed_ms: 0,
        }
    }

    /// Trace of a question that never reached the first stage.
    pub fn failed(task: &Task, error: impl Into<String>) -> Self {
        let mut t = Self::new(task);
        t.error = Some(error.into());
        t
    }

    pub fn call_count(&self) -> usize {
        self.calls.len()
    }

    pub fn calls_for(&self, stage: StageTag) -> impl Iterator<Item = &StageCall> {
        self.calls.iter().filter(move |c| c.stage == stage)
    }

    pub fn candidate(&self, id: CandidateId) -> &CandidateSql {
        &self.candidates[id.0]
    }

    pub fn labelled(&self, label: &str) -> Option<&CandidateSql> {
        self.labels.get(label).map(|&id| self.candidate(id))
    }

    /// SHA-256 over the trace with all timings zeroed.
    pub fn content_hash(&self) -> String {
        let mut t = self.clone();
        t.elapsed_ms = 0;
        for c in &mut t.calls {
            c.latency_ms = 0;
        }
        for c in &mut t.candidates {
            if let Some(e) = &mut c.exec {
                e.elapsed_ms = 0;
            }
        }
        hex::encode(Sha256::digest(serde_json::to_vec(&t).expect("trace serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub final_candidate: CandidateSql,
    pub trace: PipelineTrace,
}

/// A question that aborted on an unrecoverable error, with the partial
/// trace.
#[derive(Debug, Error)]
#[error("question {}: {error}", trace.question_id)]
pub struct PipelineFailure {
    #[source]
    pub error: PipelineError,
    pub trace: Box<PipelineTrace>,
}

pub struct Pipeline<'g> {
    gateway: &'g Gateway,
    cfg: PipelineConfig,
}

impl<'g> Pipeline<'g> {
    pub fn new(gateway: &'g Gateway, cfg: PipelineConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self { gateway, cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn gateway(&self) -> &Gateway {
        self.gateway
    }

    pub fn session<'a>(
        &'a self,
        task: &'a Task,
        catalog: &'a DatabaseCatalog,
    ) -> Result<Session<'a, 'g>, PipelineError> {
        if task.question.trim().is_empty() {
            return Err(PipelineError::EmptyQuestion(task.question_id.clone()));
        }
        if !task.db_id.eq_ignore_ascii_case(&catalog.db_id) {
            return Err(PipelineError::DatabaseMismatch {
                task: task.question_id.clone(),
                task_db: task.db_id.clone(),
                catalog_db: catalog.db_id.clone(),
            });
        }
        Ok(Session {
            pipeline: self,
            task,
            catalog,
            trace: PipelineTrace::new(task),
        })
    }

    /// Run every configured stage for one question.
    pub fn run(&self, task: &Task, catalog: &DatabaseCatalog) -> Result<PipelineRun, PipelineFailure> {
        let started = Instant::now();
        let mut session = match self.session(task, catalog) {
            Ok(s) => s,
            Err(error) => {
                return Err(PipelineFailure {
                    trace: Box::new(PipelineTrace::failed(task, error.to_string())),
                    error,
                });
            }
        };
        let outcome = session.run_all();
        let mut trace = session.into_trace();
        trace.elapsed_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok(id) => {
                let final_candidate = trace.candidate(id).clone();
                trace.final_label = Some(self.cfg.final_label().to_string());
                trace.final_sql = Some(final_candidate.sql.clone());
                Ok(PipelineRun {
                    final_candidate,
                    trace,
                })
            }
            Err(error) => {
                trace.error = Some(error.to_string());
                Err(PipelineFailure {
                    error,
                    trace: Box::new(trace),
                })
            }
        }
    }
}

/// State of one question moving through the stages.
pub struct Session<'a, 'g> {
    pipeline: &'a Pipeline<'g>,
    task: &'a Task,
    catalog: &'a DatabaseCatalog,
    trace: PipelineTrace,
}

impl Session<'_, '_> {
    fn cfg(&self) -> &PipelineConfig {
        &self.pipeline.cfg
    }

    pub fn trace(&self) -> &PipelineTrace {
        &self.trace
    }

    pub fn catalog(&self) -> &DatabaseCatalog {
        self.catalog
    }

    pub fn into_trace(self) -> PipelineTrace {
        self.trace
    }

    pub fn candidate(&self, id: CandidateId) -> &CandidateSql {
        self.trace.candidate(id)
    }

    pub fn label(&self, label: &str) -> Result<CandidateId, PipelineError> {
        self.trace
            .labels
            .get(label)
            .copied()
            .ok_or_else(|| PipelineError::UnknownLabel(label.to_string()))
    }

    fn call(
        &mut self,
        stage: StageTag,
        model: &str,
        label: &str,
        prompt: String,
    ) -> Result<String, PipelineError> {
        let cfg = self.cfg();
        let req = ChatRequest {
            model_name: model.to_string(),
            messages: vec![crate::llm::ChatMessage::user(prompt.clone())],
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            stage_tag: stage,
        };
        let resp = self.pipeline.gateway.complete(&req)?;
        self.trace.calls.push(StageCall {
            stage,
            label: label.to_string(),
            model: model.to_string(),
            prompt,
            response: resp.content.clone(),
            latency_ms: resp.latency_ms,
        });
        Ok(resp.content)
    }

    fn render_full(&self, kind: SerializationKind) -> String {
        render(&SchemaSubset::full(self.catalog), kind)
    }

    fn execute(&self, sql: &str) -> Result<ExecResult, PipelineError> {
        let cfg = self.cfg();
        Ok(exec::execute(
            &self.catalog.source_path,
            sql,
            cfg.exec_timeout_ms,
            cfg.row_cap,
        )?)
    }

    fn push_candidate(
        &mut self,
        raw: &str,
        stage: CandidateStage,
        parents: Vec<CandidateId>,
    ) -> Result<CandidateId, PipelineError> {
        let (sql, exec) = match extract_sql(raw) {
            Ok(sql) => {
                let exec = self.execute(&sql)?;
                (sql, exec)
            }
            Err(_) => (String::new(), ExecResult::no_sql()),
        };
        let id = CandidateId(self.trace.candidates.len());
        self.trace.candidates.push(CandidateSql {
            id,
            sql,
            stage,
            parents,
            exec: Some(exec),
        });
        Ok(id)
    }

    fn link_with(&mut self, slot_model: &str) -> Result<LinkingPrediction, PipelineError> {
        let prompt = prompts::linking(
            &self.render_full(self.cfg().linking_serialization),
            &self.task.question,
            self.task.evidence_text(),
        );
        let raw = self.call(StageTag::Linking, slot_model, "LINKING", prompt)?;
        Ok(resolve_linking(self.catalog, raw))
    }

    /// One linking call over the full schema with the coder slot.
    pub fn link_schema(&mut self) -> Result<LinkingPrediction, PipelineError> {
        let model = self.cfg().models.coder.model.clone();
        let pred = self.link_with(&model)?;
        self.trace.linking = Some(pred.clone());
        Ok(pred)
    }

    /// Union of the predictions of every listed linker model.
    pub fn link_schema_voting(&mut self, models: &[String]) -> Result<LinkingPrediction, PipelineError> {
        let mut members = Vec::with_capacity(models.len());
        for m in models {
            members.push(self.link_with(m)?);
        }
        let pred = union_predictions(self.catalog, &members);
        self.trace.linking = Some(pred.clone());
        Ok(pred)
    }

    /// SQL1 over the linked tables.
    pub fn generate_candidate(&mut self, linked: &LinkingPrediction) -> Result<CandidateId, PipelineError> {
        let subset = SchemaSubset::new(self.catalog, &linked.predicted_tables)
            .unwrap_or_else(|_| SchemaSubset::full(self.catalog));
        let schema = render(&subset, self.cfg().generation_serialization);
        let prompt = prompts::generation(&schema, &self.task.question, self.task.evidence_text());
        let model = self.cfg().models.coder.model.clone();
        let raw = self.call(StageTag::Generation, &model, SQL1, prompt)?;
        let id = self.push_candidate(&raw, CandidateStage::Sql1Generation, Vec::new())?;
        self.trace.labels.insert(SQL1.to_string(), id);
        Ok(id)
    }

    /// Revise `cand` with the full schema rendered as `kind`.
    pub fn revise(
        &mut self,
        cand: CandidateId,
        kind: SerializationKind,
        stage: CandidateStage,
    ) -> Result<CandidateId, PipelineError> {
        let cfg = self.cfg();
        let parent = self.candidate(cand);
        let exec_text = match &parent.exec {
            Some(e) => format_for_prompt(e, cfg.prompt_max_rows, cfg.prompt_max_chars),
            None => format!("Error: {}", exec::NO_SQL_MESSAGE),
        };
        let prompt = prompts::revision(
            &self.render_full(kind),
            &self.task.question,
            self.task.evidence_text(),
            &parent.sql,
            &exec_text,
        );
        let label = match &stage {
            CandidateStage::Sql3RevisionSample => SQL3,
            _ => SQL2,
        };
        let model = cfg.models.revision.model.clone();
        let raw = self.call(StageTag::Revision, &model, label, prompt)?;
        self.push_candidate(&raw, stage, vec![cand])
    }

    fn consistent(&self, left: &CandidateSql, right: &CandidateSql) -> bool {
        let (Some(l), Some(r)) = (&left.exec, &right.exec) else {
            return false;
        };
        if !l.is_ok() && !r.is_ok() {
            return left.sql == right.sql;
        }
        results_match_with(l, r, &self.cfg().match_options).unwrap_or(false)
    }

    /// Merge two candidates. Returns `left` itself, with no model call, when
    /// both already agree on their execution result.
    pub fn merge_revise(
        &mut self,
        label: &str,
        left: CandidateId,
        right: CandidateId,
    ) -> Result<CandidateId, PipelineError> {
        let (l, r) = (self.candidate(left), self.candidate(right));
        if self.consistent(l, r) {
            self.trace.merges.push(MergeRecord {
                label: label.to_string(),
                left,
                right,
                short_circuited: true,
                output: left,
            });
            self.trace.labels.insert(label.to_string(), left);
            return Ok(left);
        }

        let mut tables = tables_only(&l.sql, self.catalog);
        tables.extend(tables_only(&r.sql, self.catalog));
        let subset = SchemaSubset::new(self.catalog, &tables)
            .unwrap_or_else(|_| SchemaSubset::full(self.catalog));
        let cfg = self.cfg();
        let fmt = |c: &CandidateSql| match &c.exec {
            Some(e) => format_for_prompt(e, cfg.prompt_max_rows, cfg.prompt_max_chars),
            None => format!("Error: {}", exec::NO_SQL_MESSAGE),
        };
        let prompt = prompts::merge(
            &render(&subset, cfg.merge_serialization),
            &self.task.question,
            self.task.evidence_text(),
            (&l.sql, &fmt(l)),
            (&r.sql, &fmt(r)),
        );
        let model = cfg.models.merge.model.clone();
        let raw = self.call(StageTag::Merge, &model, label, prompt)?;
        let id = self.push_candidate(&raw, CandidateStage::Merge(label.to_string()), vec![left, right])?;
        self.trace.merges.push(MergeRecord {
            label: label.to_string(),
            left,
            right,
            short_circuited: false,
            output: id,
        });
        self.trace.labels.insert(label.to_string(), id);
        Ok(id)
    }

    fn run_all(&mut self) -> Result<CandidateId, PipelineError> {
        let cfg = self.cfg().clone();
        let linked = if !cfg.linking_enabled {
            LinkingPrediction::all_tables(self.catalog, String::new(), false)
        } else if cfg.voting_linkers.is_empty() {
            self.link_schema()?
        } else {
            let models: Vec<String> = std::iter::once(cfg.models.coder.model.clone())
                .chain(cfg.voting_linkers.iter().map(|s| s.model.clone()))
                .collect();
            self.link_schema_voting(&models)?
        };

        let sql1 = self.generate_candidate(&linked)?;

        if cfg.revision_enabled {
            let kinds = cfg.revision_serializations;
            for (label, kind, stage) in [
                (SQL2, kinds.plain, CandidateStage::Sql2RevisionPlain),
                (SQL3, kinds.sample, CandidateStage::Sql3RevisionSample),
            ] {
                let mut current = sql1;
                for _ in 0..cfg.revision_rounds {
                    current = self.revise(current, kind, stage.clone())?;
                }
                self.trace.labels.insert(label.to_string(), current);
            }
        }

        for step in &cfg.merge_topology {
            let left = self.label(&step.left)?;
            let right = self.label(&step.right)?;
            self.merge_revise(&step.label, left, right)?;
        }
        self.label(cfg.final_label())
    }
}
