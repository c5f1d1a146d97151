//! Loop execution: render the prompt around the current artifact, call the
//! generation backend, postprocess, persist, repeat.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{BackendError, EmbeddingBackend, LlmBackend};
use crate::geometry::{normalize, GeometryError};
use crate::trajectory::{TrajectoryError, TrajectoryRecord, TrajectoryStore};

pub const PLACEHOLDER: &str = "{{TEXT}}";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("prompt template {0:?} is missing the {PLACEHOLDER} placeholder")]
    MissingPlaceholder(String),
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("iteration {t}: generation empty after postprocessing")]
    EmptyGeneration { t: usize },
    #[error("iteration {t}: {source}")]
    Backend { t: usize, source: BackendError },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A prompt template with a literal `{{TEXT}}` placeholder for the artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub template_text: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, template_text: impl Into<String>) -> Result<Self, RunnerError> {
        let id = id.into();
        let template_text = template_text.into();
        if !template_text.contains(PLACEHOLDER) {
            return Err(RunnerError::MissingPlaceholder(id));
        }
        Ok(Self { id, template_text })
    }

    /// Replaces every placeholder occurrence with the artifact text in a
    /// single pass; text inserted by the substitution is never re-scanned.
    pub fn render(&self, artifact_text: &str) -> String {
        self.template_text.replace(PLACEHOLDER, artifact_text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationParams {
    pub fn new(model_name: impl Into<String>, temperature: f64) -> Self {
        Self {
            model_name: model_name.into(),
            temperature,
            top_p: None,
            top_k: None,
            seed: None,
        }
    }
}

/// One transformation phase of a loop: prompt template plus generation
/// parameters. A singular loop has one phase; composite loops chain several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub prompt: PromptTemplate,
    pub params: GenerationParams,
}

/// Output postprocessing applied to every generation. The default strips
/// reasoning preambles (`<think>...</think>` spans) and trims whitespace;
/// an empty result after postprocessing aborts the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessRules {
    pub strip_think: bool,
    pub trim_whitespace: bool,
}

impl Default for PostprocessRules {
    fn default() -> Self {
        Self {
            strip_think: true,
            trim_whitespace: true,
        }
    }
}

impl PostprocessRules {
    pub fn off() -> Self {
        Self {
            strip_think: false,
            trim_whitespace: false,
        }
    }

    pub fn apply(&self, text: &str) -> String {
        let mut out = if self.strip_think {
            strip_think_spans(text)
        } else {
            text.to_string()
        };
        if self.trim_whitespace {
            out = out.trim().to_string();
        }
        out
    }
}

fn strip_think_spans(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("<think>") {
        out.push_str(&rest[..start]);
        match rest[start..].find("</think>") {
            Some(end) => rest = &rest[start + end + "</think>".len()..],
            None => return out, // unterminated span: drop the tail
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub id: String,
    pub initial_text: String,
    pub horizon: usize,
    #[serde(default)]
    pub postprocess: Option<PostprocessRules>,
    pub phases: Vec<Phase>,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.horizon < 1 {
            return Err(RunnerError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.phases.is_empty() {
            return Err(RunnerError::InvalidConfig("phases must be non-empty".into()));
        }
        for phase in &self.phases {
            if !phase.prompt.template_text.contains(PLACEHOLDER) {
                return Err(RunnerError::MissingPlaceholder(phase.prompt.id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_toml(doc: &str) -> Result<Self, RunnerError> {
        let config: LoopConfig =
            toml::from_str(doc).map_err(|e| RunnerError::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, RunnerError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// First 8 hex chars of the SHA-256 of the canonical serialized config;
    /// used in default trajectory file names.
    pub fn short_hash(&self) -> String {
        let doc = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(doc.as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn postprocess_rules(&self) -> PostprocessRules {
        self.postprocess.unwrap_or_default()
    }
}

/// The named loop presets: the paraphrase loop and the summarize-then-negate
/// loop, both over the same initial sentence with T = 50 at temperature 0.8.
pub fn preset(name: &str) -> Option<LoopConfig> {
    let doc = match name {
        "contractive" => include_str!("../presets/contractive.toml"),
        "exploratory" => include_str!("../presets/exploratory.toml"),
        _ => return None,
    };
    Some(LoopConfig::from_toml(doc).expect("built-in preset is valid"))
}

/// Timestamp source for persisted records. A fixed clock makes replay runs
/// byte-identical.
#[derive(Debug, Clone)]
pub enum Clock {
    System,
    Fixed(String),
}

impl Clock {
    fn now(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            Clock::Fixed(s) => s.clone(),
        }
    }
}

/// Executes the loop: records the initial artifact, then `horizon`
/// iterations. Each iteration feeds the current text through every phase in
/// order and persists the record before the next iteration starts. On a
/// backend failure or an empty generation the partial trajectory is kept
/// and a flagged marker record is appended.
pub fn run_loop(
    config: &LoopConfig,
    llm: &mut dyn LlmBackend,
    embedder: Option<&dyn EmbeddingBackend>,
    store: &mut TrajectoryStore,
    clock: &Clock,
) -> Result<Vec<TrajectoryRecord>, RunnerError> {
    config.validate()?;
    let rules = config.postprocess_rules();
    let last_phase = config.phases.last().unwrap();

    let embed = |text: &str| -> Result<Option<Vec<f64>>, RunnerError> {
        match embedder {
            Some(backend) => {
                let raw = backend
                    .embed(text)
                    .map_err(|source| RunnerError::Backend { t: 0, source })?;
                Ok(Some(normalize(&raw)?.values().to_vec()))
            }
            None => Ok(None),
        }
    };

    let mut records = Vec::with_capacity(config.horizon + 1);
    let initial = TrajectoryRecord {
        t: 0,
        text: config.initial_text.clone(),
        phase_texts: vec![],
        prompt_id: last_phase.prompt.id.clone(),
        model: last_phase.params.model_name.clone(),
        temperature: last_phase.params.temperature,
        seed: last_phase.params.seed,
        timestamp_utc: clock.now(),
        embedding: embed(&config.initial_text)?,
        aborted_reason: None,
    };
    store.append(&initial)?;
    records.push(initial);

    let mut current = config.initial_text.clone();
    for t in 1..=config.horizon {
        let mut phase_texts = Vec::with_capacity(config.phases.len());
        let mut abort: Option<RunnerError> = None;
        for phase in &config.phases {
            let prompt = phase.prompt.render(&current);
            let raw = match llm.generate(&prompt, &phase.params) {
                Ok(text) => text,
                Err(source) => {
                    abort = Some(RunnerError::Backend { t, source });
                    break;
                }
            };
            let text = rules.apply(&raw);
            if text.is_empty() {
                abort = Some(RunnerError::EmptyGeneration { t });
                break;
            }
            phase_texts.push(text.clone());
            current = text;
        }

        if let Some(err) = abort {
            let marker = TrajectoryRecord {
                t,
                text: String::new(),
                phase_texts,
                prompt_id: last_phase.prompt.id.clone(),
                model: last_phase.params.model_name.clone(),
                temperature: last_phase.params.temperature,
                seed: last_phase.params.seed,
                timestamp_utc: clock.now(),
                embedding: None,
                aborted_reason: Some(err.to_string()),
            };
            store.append(&marker)?;
            return Err(err);
        }

        let record = TrajectoryRecord {
            t,
            text: current.clone(),
            phase_texts,
            prompt_id: last_phase.prompt.id.clone(),
            model: last_phase.params.model_name.clone(),
            temperature: last_phase.params.temperature,
            seed: last_phase.params.seed,
            timestamp_utc: clock.now(),
            embedding: embed(&current)?,
            aborted_reason: None,
        };
        store.append(&record)?;
        records.push(record);
    }

    Ok(records)
}

/// Fills (or overwrites) the embedding of every non-aborted record. For a
/// deterministic backend re-running is idempotent.
pub fn embed_trajectory(
    records: &mut [TrajectoryRecord],
    embedder: &dyn EmbeddingBackend,
) -> Result<(), RunnerError> {
    let mut dim: Option<usize> = None;
    for record in records.iter_mut() {
        if record.aborted_reason.is_some() {
            continue;
        }
        let raw = embedder
            .embed(&record.text)
            .map_err(|source| RunnerError::Backend { t: record.t, source })?;
        let unit = normalize(&raw)?;
        match dim {
            Some(d) if d != unit.dim() => {
                return Err(GeometryError::DimMismatch(d, unit.dim()).into());
            }
            _ => dim = Some(unit.dim()),
        }
        record.embedding = Some(unit.values().to_vec());
    }
    Ok(())
}
