//! Error type shared by every module of the crate.
//!
//! Each variant maps to a stable, machine-parsable code (see [`Error::code`])
//! which the command-line front end prints on failure.

use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // numerics / hopfield
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("memory bank is empty")]
    EmptyMemory,
    #[error("invalid segmentation: {segments} segments for {patterns} patterns")]
    InvalidSegmentation { segments: usize, patterns: usize },
    #[error("duplicate pattern id `{0}`")]
    DuplicateId(String),
    #[error("unknown pattern id `{0}`")]
    UnknownId(String),

    // training
    #[error("training instance {0} has no negatives")]
    InsufficientNegatives(usize),
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    // embedding
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider contract violation: {0}")]
    ProviderContractViolation(String),

    // knowledge store
    #[error("document `{0}` has no text")]
    EmptyDocument(String),
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("index built with provider `{index}`, queried with `{query}`")]
    IndexProviderMismatch { index: String, query: String },
    #[error("unsupported index version {0}")]
    UnsupportedIndexVersion(u8),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    // cks
    #[error("round {got} does not follow round {last}")]
    RoundSequenceError { last: u64, got: u64 },
    #[error("cks parse error at line {line}, column {column}: {message}")]
    CksParseError {
        line: usize,
        column: usize,
        message: String,
    },

    // action chain
    #[error("question is empty")]
    EmptyQuestion,
    #[error("could not parse action chain: {0}")]
    ChainParseError(String),
    #[error("action chain has no nodes")]
    EmptyChain,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action failed: {0}")]
    ActionFailed(String),
    #[error("retrieval produced no content")]
    EmptyRetrieval,
    #[error("node has neither a guess answer nor retrieved content")]
    UnresolvedNode,
    #[error("turn failed: {0}")]
    TurnFailed(String),
    #[error("llm request failed: {0}")]
    LlmUnavailable(String),

    // verification
    #[error("answer has no words")]
    EmptyAnswer,

    // evaluation
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("could not parse judge reply `{0}`")]
    JudgeParseError(String),

    // configuration
    #[error("invalid config ({code}): {message}")]
    InvalidConfig { code: &'static str, message: String },

    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable upper-snake-case code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "INVALID_DIMENSION",
            Error::InvalidValue(_) => "INVALID_VALUE",
            Error::ZeroVector => "ZERO_VECTOR",
            Error::EmptyMemory => "EMPTY_MEMORY",
            Error::InvalidSegmentation { .. } => "INVALID_SEGMENTATION",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::UnknownId(_) => "UNKNOWN_ID",
            Error::InsufficientNegatives(_) => "INSUFFICIENT_NEGATIVES",
            Error::NumericalDivergence(_) => "NUMERICAL_DIVERGENCE",
            Error::ProviderUnavailable(_) => "PROVIDER_UNAVAILABLE",
            Error::ProviderContractViolation(_) => "PROVIDER_CONTRACT_VIOLATION",
            Error::EmptyDocument(_) => "EMPTY_DOCUMENT",
            Error::EmptyCorpus => "EMPTY_CORPUS",
            Error::IndexProviderMismatch { .. } => "INDEX_PROVIDER_MISMATCH",
            Error::UnsupportedIndexVersion(_) => "UNSUPPORTED_INDEX_VERSION",
            Error::CorruptIndex(_) => "CORRUPT_INDEX",
            Error::RoundSequenceError { .. } => "ROUND_SEQUENCE_ERROR",
            Error::CksParseError { .. } => "CKS_PARSE_ERROR",
            Error::EmptyQuestion => "EMPTY_QUESTION",
            Error::ChainParseError(_) => "CHAIN_PARSE_ERROR",
            Error::EmptyChain => "EMPTY_CHAIN",
            Error::UnknownAction(_) => "UNKNOWN_ACTION",
            Error::ActionFailed(_) => "ACTION_FAILED",
            Error::EmptyRetrieval => "EMPTY_RETRIEVAL",
            Error::UnresolvedNode => "UNRESOLVED_NODE",
            Error::TurnFailed(_) => "TURN_FAILED",
            Error::LlmUnavailable(_) => "LLM_UNAVAILABLE",
            Error::EmptyAnswer => "EMPTY_ANSWER",
            Error::NoQueries => "NO_QUERIES",
            Error::JudgeParseError(_) => "JUDGE_PARSE_ERROR",
            Error::InvalidConfig { code, .. } => code,
            Error::Io(_) => "IO_ERROR",
            Error::Json(_) => "JSON_ERROR",
        }
    }

    /// True for the failures that make a chain completion unusable and
    /// warrant a re-prompt.
    pub fn is_chain_parse_failure(&self) -> bool {
        matches!(
            self,
            Error::ChainParseError(_) | Error::EmptyChain | Error::UnknownAction(_)
        )
    }
}
