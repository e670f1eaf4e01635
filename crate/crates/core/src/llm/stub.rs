//! In-process backends for tests, examples and offline runs.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, StageTag};

/// Backend driven by a closure returning the response content.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (self.f)(req).map(ChatResponse::text)
    }
}

/// SQL returned for questions an [`OracleBackend`] is told to get wrong.
pub const WRONG_SQL: &str = "SELECT '__deliberately_wrong__'";

/// The question text of a pipeline prompt (`Question: ...` line).
pub fn question_of(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("Question: "))
        .map(str::trim_end)
}

#[derive(Debug, Clone)]
struct OracleEntry {
    gold_sql: String,
    gold_tables: Option<BTreeSet<String>>,
}

/// Answers every stage with the gold SQL of the question found in the
/// prompt. Questions are matched by exact text.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    entries: HashMap<String, OracleEntry>,
    wrong: HashSet<String>,
}

impl OracleBackend {
    pub fn new<Q: Into<String>, S: Into<String>>(pairs: impl IntoIterator<Item = (Q, S)>) -> Self {
        Self {
            entries: pairs
                .into_iter()
                .map(|(q, s)| {
                    (
                        q.into(),
                        OracleEntry {
                            gold_sql: s.into(),
                            gold_tables: None,
                        },
                    )
                })
                .collect(),
            wrong: HashSet::new(),
        }
    }

    /// Answer linking prompts with `{"tables": [...]}` for this question
    /// instead of the gold SQL.
    pub fn with_linking_tables(
        mut self,
        question: &str,
        tables: impl IntoIterator<Item = String>,
    ) -> Self {
        if let Some(e) = self.entries.get_mut(question) {
            e.gold_tables = Some(tables.into_iter().collect());
        }
        self
    }

    /// Return [`WRONG_SQL`] at every SQL-producing stage for `question`.
    pub fn wrong_on(mut self, question: impl Into<String>) -> Self {
        self.wrong.insert(question.into());
        self
    }
}

impl ChatBackend for OracleBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let prompt = req.prompt_text();
        let question = question_of(&prompt)
            .ok_or_else(|| GatewayError::Backend("prompt has no Question line".into()))?;
        let entry = self
            .entries
            .get(question)
            .ok_or_else(|| GatewayError::Backend(format!("oracle has no gold for `{question}`")))?;
        if req.stage_tag == StageTag::Linking {
            if let Some(tables) = &entry.gold_tables {
                return Ok(ChatResponse::text(
                    serde_json::json!({ "tables": tables }).to_string(),
                ));
            }
        }
        if self.wrong.contains(question) {
            return Ok(ChatResponse::text(WRONG_SQL));
        }
        Ok(ChatResponse::text(format!("```sql\n{}\n```", entry.gold_sql)))
    }
}
