//! Run configuration: one JSON file, environment overrides for endpoints,
//! validated before any command runs.

use std::path::{Path, PathBuf};

use convcoa::coa::CoaConfig;
use convcoa::hopfield::ModeKind;
use convcoa::store::ChunkConfig;
use convcoa::verification::FaithWeights;
use convcoa::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ENV_LLM_ENDPOINT: &str = "CONVCOA_LLM_ENDPOINT";
pub const ENV_SEARCH_ENDPOINT: &str = "CONVCOA_SEARCH_ENDPOINT";
pub const ENV_EMBEDDING_ENDPOINT: &str = "CONVCOA_EMBEDDING_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: ProviderKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub seed: u64,
    pub model: String,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Hash,
            dim: 256,
            endpoint: None,
            seed: 0,
            model: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopfieldSection {
    pub beta: f64,
    pub segments: usize,
    pub mode: ModeKind,
    /// Seed for freshly initialized trainable projections.
    pub seed: u64,
}

impl Default for HopfieldSection {
    fn default() -> Self {
        Self {
            beta: convcoa::hopfield::DEFAULT_BETA,
            segments: 1,
            mode: ModeKind::MemoryRetrieval,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub top_k: usize,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub quantized: bool,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let chunking = ChunkConfig::default();
        Self {
            top_k: 3,
            chunk_size: chunking.size,
            chunk_overlap: chunking.overlap,
            quantized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationSection {
    pub alpha: f64,
    pub beta_w: f64,
    pub gamma: f64,
    pub threshold: f64,
    pub awl_cap: f64,
    pub summary_sentences: usize,
}

impl Default for VerificationSection {
    fn default() -> Self {
        let w = FaithWeights::default();
        let coa = CoaConfig::default();
        Self {
            alpha: w.alpha,
            beta_w: w.beta_w,
            gamma: w.gamma,
            threshold: coa.threshold,
            awl_cap: coa.awl_cap,
            summary_sentences: coa.summary_sentences,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub endpoint: Option<String>,
    pub top_m: usize,
    pub sim_threshold: f64,
    pub top_k_pages: usize,
    pub novelty_threshold: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let coa = CoaConfig::default();
        Self {
            endpoint: None,
            top_m: coa.top_m,
            sim_threshold: coa.sim_threshold,
            top_k_pages: coa.top_k_pages,
            novelty_threshold: coa.novelty_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub index: Option<PathBuf>,
    pub transcripts: PathBuf,
    /// Trained projections used instead of the configured mode.
    pub projections: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            index: None,
            transcripts: PathBuf::from("transcripts"),
            projections: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub embedding: EmbeddingSection,
    pub hopfield: HopfieldSection,
    pub retrieval: RetrievalSection,
    pub verification: VerificationSection,
    pub llm: LlmSection,
    pub search: SearchSection,
    pub paths: PathsSection,
}

fn invalid(code: &'static str, message: String) -> Error {
    Error::InvalidConfig { code, message }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid("CONFIG_PARSE_ERROR", e.to_string()))
    }

    /// Defaults when `path` is `None`; environment overrides are applied in
    /// both cases, then the result is validated.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    /// Non-empty values of the endpoint variables replace the file values.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        let pick = |k: &str| get(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = pick(ENV_LLM_ENDPOINT) {
            self.llm.endpoint = Some(v);
        }
        if let Some(v) = pick(ENV_SEARCH_ENDPOINT) {
            self.search.endpoint = Some(v);
        }
        if let Some(v) = pick(ENV_EMBEDDING_ENDPOINT) {
            self.embedding.endpoint = Some(v);
        }
    }

    pub fn weights(&self) -> FaithWeights {
        FaithWeights {
            alpha: self.verification.alpha,
            beta_w: self.verification.beta_w,
            gamma: self.verification.gamma,
        }
    }

    pub fn chunking(&self) -> ChunkConfig {
        ChunkConfig {
            size: self.retrieval.chunk_size,
            overlap: self.retrieval.chunk_overlap,
        }
    }

    pub fn coa(&self) -> CoaConfig {
        CoaConfig {
            top_k: self.retrieval.top_k,
            segments: self.hopfield.segments,
            top_m: self.search.top_m,
            top_k_pages: self.search.top_k_pages,
            sim_threshold: self.search.sim_threshold,
            summary_sentences: self.verification.summary_sentences,
            novelty_threshold: self.search.novelty_threshold,
            weights: self.weights(),
            threshold: self.verification.threshold,
            awl_cap: self.verification.awl_cap,
        }
    }

    /// Each violated invariant has its own error code.
    pub fn validate(&self) -> Result<()> {
        if self.embedding.dim == 0 {
            return Err(invalid("INVALID_DIM", "embedding dim must be at least 1".into()));
        }
        if self.embedding.provider == ProviderKind::Remote && self.embedding.endpoint.is_none() {
            return Err(invalid(
                "MISSING_ENDPOINT",
                format!("remote embedding needs embedding.endpoint or {ENV_EMBEDDING_ENDPOINT}"),
            ));
        }
        if !(self.hopfield.beta > 0.0 && self.hopfield.beta.is_finite()) {
            return Err(invalid("INVALID_BETA", format!("beta must be positive, got {}", self.hopfield.beta)));
        }
        self.chunking().validate()?;
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return Err(invalid(
                "INVALID_TEMPERATURE",
                format!("temperature {} outside [0, 2]", self.llm.temperature),
            ));
        }
        self.coa().validate()
    }
}
