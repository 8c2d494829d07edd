//! Conversational action-chain pipeline: stage prompts, chain parsing,
//! action execution, answer correction and the per-turn driver.

mod actions;
mod llm;
mod parse;
pub mod prompts;
mod search;

pub use actions::{
    execute_knowledge_retrieval, execute_node, execute_web_query, verify_and_correct, SEPARATOR,
};
pub use llm::{HttpLlm, LLMClient, ScriptedLlm};
pub use parse::{extract_object, parse_action_chain, parse_lenient_object};
pub use prompts::{build_final_prompt, build_initial_prompt, build_normal_prompt};
pub use search::{FixturePage, FixtureSearch, HttpSearch, MockScript, SearchHit, SearchProvider};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cks::{ContextualKnowledgeSet, RoundRecord};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::hopfield::HopfieldProjections;
use crate::numerics::cosine_similarity;
use crate::store::Index;
use crate::text::first_sentences;
use crate::verification::{FaithWeights, DEFAULT_AWL_CAP, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    WebQuerying,
    KnowledgeEncoding,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::WebQuerying => "web-querying",
            ActionKind::KnowledgeEncoding => "knowledge-encoding",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-insensitive; `-`, `_` and spaces are interchangeable and a trailing
/// "engine" is ignored.
impl FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_lowercase()
            .split(|c: char| c == '-' || c == '_' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join("-");
        let norm = norm.strip_suffix("-engine").unwrap_or(&norm);
        match norm {
            "web-querying" | "web-query" | "web-search" => Ok(ActionKind::WebQuerying),
            "knowledge-encoding" | "knowledge-retrieval" => Ok(ActionKind::KnowledgeEncoding),
            _ => Err(Error::UnknownAction(s.trim().to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainNode {
    pub action: ActionKind,
    pub sub: String,
    pub guess_answer: String,
    pub missing_flag: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieved: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrected_answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub faith_score: Option<f64>,
    /// `CODE: message` of a failed action or verification.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ChainNode {
    pub fn new(action: ActionKind, sub: impl Into<String>, guess: impl Into<String>, missing_flag: bool) -> Self {
        Self {
            action,
            sub: sub.into(),
            guess_answer: guess.into(),
            missing_flag,
            retrieved: None,
            corrected_answer: None,
            faith_score: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChain {
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimized_question: Option<String>,
    pub nodes: Vec<ChainNode>,
    pub final_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoaConfig {
    /// Chunks returned by knowledge retrieval.
    pub top_k: usize,
    pub segments: usize,
    /// Search results requested per web query.
    pub top_m: usize,
    pub top_k_pages: usize,
    pub sim_threshold: f64,
    pub summary_sentences: usize,
    /// Normal-stage nodes whose sub reaches this cosine against an existing
    /// information summary are dropped.
    pub novelty_threshold: f64,
    pub weights: FaithWeights,
    pub threshold: f64,
    pub awl_cap: f64,
}

impl Default for CoaConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            segments: 1,
            top_m: 10,
            top_k_pages: 3,
            sim_threshold: 0.8,
            summary_sentences: 3,
            novelty_threshold: 0.95,
            weights: FaithWeights::default(),
            threshold: DEFAULT_THRESHOLD,
            awl_cap: DEFAULT_AWL_CAP,
        }
    }
}

fn invalid(code: &'static str, message: String) -> Error {
    Error::InvalidConfig { code, message }
}

impl CoaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(invalid("INVALID_TOP_K", "top_k must be at least 1".into()));
        }
        if self.top_m == 0 || self.top_k_pages == 0 {
            return Err(invalid("INVALID_TOP_M", "top_m and top_k_pages must be at least 1".into()));
        }
        if self.segments == 0 {
            return Err(invalid("INVALID_SEGMENTS", "segments must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sim_threshold) {
            return Err(invalid(
                "INVALID_SIM_THRESHOLD",
                format!("sim_threshold {} outside [0, 1]", self.sim_threshold),
            ));
        }
        if !(0.0..=1.0).contains(&self.novelty_threshold) {
            return Err(invalid(
                "INVALID_NOVELTY_THRESHOLD",
                format!("novelty_threshold {} outside [0, 1]", self.novelty_threshold),
            ));
        }
        if self.summary_sentences == 0 {
            return Err(invalid("INVALID_SUMMARY_SENTENCES", "summary_sentences must be at least 1".into()));
        }
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid("INVALID_THRESHOLD", format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(self.awl_cap > 0.0 && self.awl_cap.is_finite()) {
            return Err(invalid("INVALID_AWL_CAP", format!("awl_cap must be positive, got {}", self.awl_cap)));
        }
        Ok(())
    }
}

/// One transcript line. `ts` is a logical sequence number, not wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub ts: u64,
    pub kind: String,
    pub payload: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: &str, payload: Value) {
        let ts = self.events.len() as u64;
        self.events.push(TranscriptEvent {
            ts,
            kind: kind.to_owned(),
            payload,
        });
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Everything a turn talks to.
pub struct TurnDeps<'a> {
    pub llm: &'a dyn LLMClient,
    pub search: &'a dyn SearchProvider,
    pub index: Option<&'a Index>,
    pub embedder: &'a dyn EmbeddingProvider,
    pub projections: &'a HopfieldProjections,
    pub config: &'a CoaConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub answer: String,
    pub cks: ContextualKnowledgeSet,
    pub chain: ActionChain,
    pub stage: Stage,
}

fn node_payload(i: usize, n: &ChainNode) -> Value {
    json!({ "node": i, "state": n })
}

/// Drops normal-stage nodes that ask for information the conversation
/// already holds.
fn drop_known(nodes: Vec<ChainNode>, cks: &ContextualKnowledgeSet, deps: &TurnDeps<'_>, transcript: &mut Transcript) -> Result<Vec<ChainNode>> {
    let summaries: Vec<&str> = cks
        .rounds()
        .iter()
        .flat_map(|r| r.information_summaries.values())
        .map(String::as_str)
        .filter(|s| !s.trim().is_empty())
        .collect();
    if summaries.is_empty() {
        return Ok(nodes);
    }
    let owned: Vec<String> = summaries.iter().map(|s| s.to_string()).collect();
    let known = deps.embedder.embed_batch(&owned)?;
    let mut kept = Vec::with_capacity(nodes.len());
    for node in nodes {
        let v = deps.embedder.embed(&node.sub)?;
        let best = known
            .iter()
            .map(|k| cosine_similarity(&v, k).unwrap_or(0.0))
            .fold(f64::NEG_INFINITY, f64::max);
        if best >= deps.config.novelty_threshold {
            transcript.push("node_dropped", json!({ "sub": node.sub, "similarity": best }));
        } else {
            kept.push(node);
        }
    }
    Ok(kept)
}

fn request_chain(prompt: &str, stage: Stage, deps: &TurnDeps<'_>, transcript: &mut Transcript) -> Result<ActionChain> {
    let mut attempt_prompt = prompt.to_owned();
    for attempt in 0..2 {
        transcript.push("prompt", json!({ "stage": stage, "attempt": attempt, "text": attempt_prompt }));
        let completion = deps.llm.complete(&attempt_prompt)?;
        transcript.push("completion", json!({ "attempt": attempt, "text": completion }));
        match parse_action_chain(&completion, stage) {
            Ok(chain) => return Ok(chain),
            Err(e) if e.is_chain_parse_failure() => {
                transcript.push("parse_error", json!({ "attempt": attempt, "code": e.code(), "message": e.to_string() }));
                if attempt == 1 {
                    return Err(Error::TurnFailed(format!("action chain unparseable after retry: {e}")));
                }
                attempt_prompt = format!("{prompt}{}", prompts::RETRY_SUFFIX.trim_end_matches('\n'));
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop returns on the second attempt")
}

/// One conversational turn. The returned set has the new round appended; on
/// any error `cks` is left as it was and the transcript records the failure.
pub fn run_turn(
    question: &str,
    cks: &ContextualKnowledgeSet,
    deps: &TurnDeps<'_>,
    transcript: &mut Transcript,
) -> Result<TurnOutcome> {
    let result = turn(question, cks, deps, transcript);
    if let Err(e) = &result {
        transcript.push("turn_failed", json!({ "code": e.code(), "message": e.to_string() }));
    }
    result
}

fn turn(question: &str, cks: &ContextualKnowledgeSet, deps: &TurnDeps<'_>, transcript: &mut Transcript) -> Result<TurnOutcome> {
    let question = question.trim();
    if question.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    deps.config.validate()?;
    let round = cks.last_round() + 1;
    transcript.push("turn_start", json!({ "round": round, "question": question }));

    let (stage, prompt) = if cks.is_empty() {
        (Stage::Initial, build_initial_prompt(question)?)
    } else {
        (Stage::Normal, build_normal_prompt(cks, question)?)
    };
    let mut chain = request_chain(&prompt, stage, deps, transcript)?;
    chain.question = question.to_owned();
    transcript.push("chain", serde_json::to_value(&chain)?);
    if stage == Stage::Normal {
        chain.nodes = drop_known(std::mem::take(&mut chain.nodes), cks, deps, transcript)?;
    }

    let cfg = deps.config;
    let mut summaries = Vec::with_capacity(chain.nodes.len());
    for (i, node) in chain.nodes.iter_mut().enumerate() {
        let executed = execute_node(node, deps.search, deps.index, deps.embedder, deps.projections, cfg);
        transcript.push("action", node_payload(i, &executed));
        *node = match verify_and_correct(&executed, cks, &cfg.weights, cfg.threshold, cfg.awl_cap, cfg.summary_sentences) {
            Ok(n) => n,
            Err(e @ Error::UnresolvedNode) => {
                let mut n = executed;
                n.error = Some(format!("{}: {e}", e.code()));
                n
            }
            Err(e) => return Err(e),
        };
        transcript.push("verify", node_payload(i, node));
        summaries.push(first_sentences(node.retrieved.as_deref().unwrap_or(""), cfg.summary_sentences));
    }

    let effective = chain.optimized_question.clone().unwrap_or_else(|| question.to_owned());
    let final_prompt = build_final_prompt(&effective, &chain, &summaries)?;
    transcript.push("final_prompt", json!({ "text": final_prompt }));
    let completion = deps.llm.complete(&final_prompt)?;
    let answer = match completion.trim() {
        "" => chain.final_answer.clone(),
        a => a.to_owned(),
    };
    transcript.push("answer", json!({ "round": round, "text": answer }));

    let record = RoundRecord::new(
        round,
        question,
        effective,
        chain.nodes.iter().map(|n| n.sub.clone()).collect(),
        summaries,
        answer.clone(),
    );
    let next = cks.append_round(record)?;
    transcript.push("cks_update", json!({ "round": round, "rounds": next.len() }));
    Ok(TurnOutcome {
        answer,
        cks: next,
        chain,
        stage,
    })
}
