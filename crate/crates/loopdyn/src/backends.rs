//! LLM and embedding backends.
//!
//! The wire contract is Ollama-compatible JSON over HTTP; a transcript-file
//! mock implements the same generation contract for offline tests, and the
//! embedding side additionally offers a precomputed lookup file and a
//! deterministic seeded stub.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::geometry::normalize;
use crate::runner::GenerationParams;

pub const ENV_LLM_URL: &str = "LOOPDYN_LLM_URL";
pub const ENV_EMBED_URL: &str = "LOOPDYN_EMBED_URL";
pub const ENV_TIMEOUT_SECS: &str = "LOOPDYN_HTTP_TIMEOUT_SECS";

const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable after {MAX_ATTEMPTS} attempts: {0}")]
    Unreachable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("transcript exhausted after {0} generations")]
    TranscriptExhausted(usize),
    #[error("no precomputed embedding for text: {0:?}")]
    LookupMiss(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub trait LlmBackend {
    fn generate(&mut self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;
}

pub trait EmbeddingBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

fn http_timeout() -> Duration {
    let secs = std::env::var(ENV_TIMEOUT_SECS)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(120);
    Duration::from_secs(secs)
}

fn backoff(attempt: u32) {
    std::thread::sleep(Duration::from_millis(100 * 3u64.pow(attempt)));
}

/// Ollama-style generation endpoint: POST `<base>/api/generate` with
/// `{model, prompt, stream: false, options: {...}}`, expecting
/// `{"response": "..."}`.
pub struct HttpLlmBackend {
    client: reqwest::blocking::Client,
    base_url: String,
}

#[derive(Deserialize)]
struct GenerateResponse {
    response: String,
}

impl HttpLlmBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(http_timeout())
            .build()
            .expect("reqwest client");
        Self {
            client,
            base_url: base_url.into(),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(ENV_LLM_URL).ok().map(Self::new)
    }
}

impl LlmBackend for HttpLlmBackend {
    fn generate(&mut self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let mut options = json!({ "temperature": params.temperature });
        if let Some(top_p) = params.top_p {
            options["top_p"] = json!(top_p);
        }
        if let Some(top_k) = params.top_k {
            options["top_k"] = json!(top_k);
        }
        if let Some(seed) = params.seed {
            options["seed"] = json!(seed);
        }
        let body = json!({
            "model": params.model_name,
            "prompt": prompt,
            "stream": false,
            "options": options,
        });
        let url = format!("{}/api/generate", self.base_url.trim_end_matches('/'));

        let mut last_err = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                backoff(attempt - 1);
            }
            match self.client.post(&url).json(&body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if !status.is_success() {
                        last_err = format!("HTTP {status}: {text}");
                        continue;
                    }
                    let parsed: GenerateResponse = serde_json::from_str(&text)
                        .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                    return Ok(parsed.response);
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(BackendError::Unreachable(last_err))
    }
}

/// Replays pre-recorded generations from a transcript file.
///
/// Format: one text per line; the first line is the initial artifact and
/// each subsequent line is the generation produced at that step.
pub struct TranscriptBackend {
    lines: Vec<String>,
    cursor: usize,
}

impl TranscriptBackend {
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let content = fs::read_to_string(path)?;
        Ok(Self::from_lines(content.lines().map(str::to_string).collect()))
    }

    pub fn from_lines(lines: Vec<String>) -> Self {
        // cursor starts past the initial artifact
        Self { lines, cursor: 1 }
    }

    pub fn initial_text(&self) -> Option<&str> {
        self.lines.first().map(String::as_str)
    }
}

impl LlmBackend for TranscriptBackend {
    fn generate(&mut self, _prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        let line = self
            .lines
            .get(self.cursor)
            .ok_or(BackendError::TranscriptExhausted(self.cursor.saturating_sub(1)))?;
        self.cursor += 1;
        Ok(line.clone())
    }
}

/// Scripted backend for unit tests: applies a function to the rendered prompt.
pub struct FnBackend<F: FnMut(&str) -> String>(pub F);

impl<F: FnMut(&str) -> String> LlmBackend for FnBackend<F> {
    fn generate(&mut self, prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        Ok((self.0)(prompt))
    }
}

/// Ollama-style embedding endpoint: POST `<base>/api/embeddings` with
/// `{model, prompt}`, expecting `{"embedding": [...]}`.
pub struct HttpEmbeddingBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    model: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Vec<f64>,
}

impl HttpEmbeddingBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(http_timeout())
            .build()
            .expect("reqwest client");
        Self {
            client,
            base_url: base_url.into(),
            model: model.into(),
        }
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = json!({ "model": self.model, "prompt": text });
        let url = format!("{}/api/embeddings", self.base_url.trim_end_matches('/'));
        let mut last_err = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                backoff(attempt - 1);
            }
            match self.client.post(&url).json(&body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if !status.is_success() {
                        last_err = format!("HTTP {status}: {text}");
                        continue;
                    }
                    let parsed: EmbeddingResponse = serde_json::from_str(&text)
                        .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                    return Ok(parsed.embedding);
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(BackendError::Unreachable(last_err))
    }
}

/// Precomputed embeddings keyed by exact text, one JSON object per line:
/// `{"text": "...", "embedding": [...]}`.
pub struct LookupEmbeddingBackend {
    table: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct LookupRow {
    text: String,
    embedding: Vec<f64>,
}

impl LookupEmbeddingBackend {
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let content = fs::read_to_string(path)?;
        let mut table = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: LookupRow = serde_json::from_str(line).map_err(|e| {
                BackendError::MalformedResponse(format!("lookup file line {}: {e}", i + 1))
            })?;
            table.insert(row.text, row.embedding);
        }
        Ok(Self { table })
    }
}

impl EmbeddingBackend for LookupEmbeddingBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| BackendError::LookupMiss(text.to_string()))
    }
}

/// Deterministic test encoder: hashes the text, seeds a generator with it
/// and draws a Gaussian direction. Identical texts always map to identical
/// unit vectors; any fixed text (including the empty string) maps to a
/// fixed vector.
pub struct StubEmbeddingBackend {
    pub dim: usize,
    pub seed: u64,
}

impl StubEmbeddingBackend {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl EmbeddingBackend for StubEmbeddingBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(text.as_bytes()) ^ self.seed);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            if let Ok(e) = normalize(&v) {
                return Ok(e.values().to_vec());
            }
        }
    }
}
