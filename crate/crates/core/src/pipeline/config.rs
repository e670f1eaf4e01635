use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{
    MatchOptions, DEFAULT_ROW_CAP, PIPELINE_TIMEOUT_MS, PROMPT_MAX_CHARS, PROMPT_MAX_ROWS,
};
use crate::llm::StageTag;
use crate::schema::SerializationKind;

pub const SQL1: &str = "SQL1";
pub const SQL2: &str = "SQL2";
pub const SQL3: &str = "SQL3";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("merge step `{label}` reads undefined candidate `{input}`")]
    UndefinedInput { label: String, input: String },
    #[error("merge label `{0}` is defined twice or shadows a base candidate")]
    DuplicateLabel(String),
    #[error("revision_rounds must be at least 1")]
    ZeroRevisionRounds,
    #[error("reading config {path}: {reason}")]
    Read { path: String, reason: String },
}

/// Model name plus an optional endpoint override for one stage slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSlot {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

impl ModelSlot {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            base_url: None,
        }
    }
}

/// Three endpoint slots: linking and generation share the coder slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageModels {
    pub coder: ModelSlot,
    pub revision: ModelSlot,
    pub merge: ModelSlot,
}

impl Default for StageModels {
    fn default() -> Self {
        Self {
            coder: ModelSlot::new("Qwen2.5-Coder-32B-Instruct"),
            revision: ModelSlot::new("Qwen2.5-32B-Instruct"),
            merge: ModelSlot::new("Qwen2.5-Coder-32B-Instruct"),
        }
    }
}

impl StageModels {
    pub fn slot(&self, stage: StageTag) -> &ModelSlot {
        match stage {
            StageTag::Linking | StageTag::Generation => &self.coder,
            StageTag::Revision => &self.revision,
            StageTag::Merge => &self.merge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStep {
    pub label: String,
    pub left: String,
    pub right: String,
}

impl MergeStep {
    pub fn new(label: &str, left: &str, right: &str) -> Self {
        Self {
            label: label.into(),
            left: left.into(),
            right: right.into(),
        }
    }
}

pub fn default_merge_topology() -> Vec<MergeStep> {
    vec![
        MergeStep::new("SQL5", SQL2, SQL3),
        MergeStep::new("SQL6", SQL1, SQL3),
        MergeStep::new("SQL8", "SQL5", "SQL6"),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionKinds {
    /// Produces SQL2.
    pub plain: SerializationKind,
    /// Produces SQL3.
    pub sample: SerializationKind,
}

impl Default for RevisionKinds {
    fn default() -> Self {
        Self {
            plain: SerializationKind::MSchema,
            sample: SerializationKind::MSchemaWithSample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub models: StageModels,
    /// Extra linkers whose predictions are unioned with the coder slot's.
    pub voting_linkers: Vec<ModelSlot>,
    pub linking_enabled: bool,
    pub revision_enabled: bool,
    pub linking_serialization: SerializationKind,
    pub generation_serialization: SerializationKind,
    pub revision_serializations: RevisionKinds,
    pub merge_serialization: SerializationKind,
    pub merge_topology: Vec<MergeStep>,
    pub revision_rounds: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub exec_timeout_ms: u64,
    pub row_cap: usize,
    pub prompt_max_rows: usize,
    pub prompt_max_chars: usize,
    pub match_options: MatchOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            models: StageModels::default(),
            voting_linkers: Vec::new(),
            linking_enabled: true,
            revision_enabled: true,
            linking_serialization: SerializationKind::MSchemaWithSample,
            generation_serialization: SerializationKind::MSchemaWithSample,
            revision_serializations: RevisionKinds::default(),
            merge_serialization: SerializationKind::MSchemaWithSample,
            merge_topology: default_merge_topology(),
            revision_rounds: 1,
            temperature: 0.0,
            max_tokens: 1024,
            exec_timeout_ms: PIPELINE_TIMEOUT_MS,
            row_cap: DEFAULT_ROW_CAP,
            prompt_max_rows: PROMPT_MAX_ROWS,
            prompt_max_chars: PROMPT_MAX_CHARS,
            match_options: MatchOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let read_err = |reason: String| ConfigError::Read {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.revision_rounds == 0 {
            return Err(ConfigError::ZeroRevisionRounds);
        }
        let mut defined: HashSet<&str> = HashSet::from([SQL1]);
        if self.revision_enabled {
            defined.extend([SQL2, SQL3]);
        }
        let base = [SQL1, SQL2, SQL3];
        for step in &self.merge_topology {
            for input in [&step.left, &step.right] {
                if !defined.contains(input.as_str()) {
                    return Err(ConfigError::UndefinedInput {
                        label: step.label.clone(),
                        input: input.clone(),
                    });
                }
            }
            if base.contains(&step.label.as_str()) || !defined.insert(&step.label) {
                return Err(ConfigError::DuplicateLabel(step.label.clone()));
            }
        }
        Ok(())
    }

    /// Label of the candidate returned as the pipeline's answer.
    pub fn final_label(&self) -> &str {
        match self.merge_topology.last() {
            Some(step) => &step.label,
            None if self.revision_enabled => SQL2,
            None => SQL1,
        }
    }

    /// Stable hash of the serialized configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Ablation rows, each adding one component on top of the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full schema in DDL form, single generation call.
    Baseline,
    MSchema,
    DataSamples,
    SchemaLinking,
    /// Same stages as `SchemaLinking`; point the coder slot at the
    /// fine-tuned model.
    FineTuned,
    Revision,
    MergeRevision,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Baseline,
        Preset::MSchema,
        Preset::DataSamples,
        Preset::SchemaLinking,
        Preset::FineTuned,
        Preset::Revision,
        Preset::MergeRevision,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Preset::Baseline => "BASELINE",
            Preset::MSchema => "+ M-Schema",
            Preset::DataSamples => "+ Data Samples",
            Preset::SchemaLinking => "+ Schema Linking",
            Preset::FineTuned => "+ Supervised Fine-tuning",
            Preset::Revision => "+ SQL Revision",
            Preset::MergeRevision => "+ SQL Merge Revision",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::MSchema => "m-schema",
            Preset::DataSamples => "data-samples",
            Preset::SchemaLinking => "schema-linking",
            Preset::FineTuned => "sft",
            Preset::Revision => "revision",
            Preset::MergeRevision => "merge-revision",
        }
    }

    pub fn config(self) -> PipelineConfig {
        let full = PipelineConfig::default();
        let mut cfg = PipelineConfig {
            linking_enabled: false,
            revision_enabled: false,
            merge_topology: Vec::new(),
            ..full.clone()
        };
        match self {
            Preset::Baseline => cfg.generation_serialization = SerializationKind::Code,
            Preset::MSchema => cfg.generation_serialization = SerializationKind::MSchema,
            Preset::DataSamples => {}
            Preset::SchemaLinking | Preset::FineTuned => cfg.linking_enabled = true,
            Preset::Revision => {
                cfg.linking_enabled = true;
                cfg.revision_enabled = true;
            }
            Preset::MergeRevision => cfg = full,
        }
        cfg
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.slug().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown preset `{s}`"))
    }
}
