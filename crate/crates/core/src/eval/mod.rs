//! Offline evaluation: ranking metrics, judged exact match, dataset loading
//! and retrieval latency.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coa::LLMClient;
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::hopfield::HopfieldProjections;
use crate::store::{search_vector, Document, Index};

pub const JUDGE_TEMPLATE: &str = include_str!("templates/judge.txt");
pub const WARMUP_QUERIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub conversation_id: String,
    pub turn: u64,
    pub question: String,
    pub gold_answer: String,
    #[serde(default)]
    pub gold_chunk_ids: Vec<String>,
    /// Answer produced by the system under test, judged when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_answer: Option<String>,
}

fn check_lengths(rank_lists: &[Vec<String>], gold: &[Vec<String>]) -> Result<()> {
    if rank_lists.len() != gold.len() {
        return Err(Error::InvalidValue(format!(
            "{} ranked lists for {} gold sets",
            rank_lists.len(),
            gold.len()
        )));
    }
    Ok(())
}

/// Mean reciprocal rank of the first relevant id; queries without gold ids
/// are excluded.
pub fn mrr(rank_lists: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    check_lengths(rank_lists, gold)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (ranked, g) in rank_lists.iter().zip(gold) {
        if g.is_empty() {
            continue;
        }
        n += 1;
        if let Some(pos) = ranked.iter().position(|id| g.contains(id)) {
            total += 1.0 / (pos + 1) as f64;
        }
    }
    if n == 0 {
        return Err(Error::NoQueries);
    }
    Ok(total / n as f64)
}

/// Mean fraction of each query's distinct gold ids found in its top `k`;
/// queries without gold ids are excluded.
pub fn recall_at_k(rank_lists: &[Vec<String>], gold: &[Vec<String>], k: usize) -> Result<f64> {
    check_lengths(rank_lists, gold)?;
    if k == 0 {
        return Err(Error::InvalidValue("k must be at least 1".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (ranked, g) in rank_lists.iter().zip(gold) {
        let g: HashSet<&String> = g.iter().collect();
        if g.is_empty() {
            continue;
        }
        n += 1;
        let top: HashSet<&String> = ranked.iter().take(k).collect();
        total += g.intersection(&top).count() as f64 / g.len() as f64;
    }
    if n == 0 {
        return Err(Error::NoQueries);
    }
    Ok(total / n as f64)
}

pub fn build_judge_prompt(question: &str, gold: &str, generated: &str) -> String {
    // placeholders are replaced left to right so inserted text is never rescanned
    let mut out = String::with_capacity(JUDGE_TEMPLATE.len() + question.len() + gold.len() + generated.len());
    let mut rest = JUDGE_TEMPLATE.trim_end();
    let vars = [
        ("{QUESTION}", question),
        ("{GROUND_TRUTH}", gold),
        ("{GENERATED_ANSWER}", generated),
    ];
    while let Some((pos, name, value)) = vars
        .iter()
        .filter_map(|(n, v)| rest.find(n).map(|p| (p, *n, *v)))
        .min_by_key(|(p, _, _)| *p)
    {
        out.push_str(&rest[..pos]);
        out.push_str(value);
        rest = &rest[pos + name.len()..];
    }
    out.push_str(rest);
    out
}

/// The last whitespace-separated token that is exactly `0` or `1` once
/// surrounding punctuation is trimmed.
pub fn parse_judgement(reply: &str) -> Result<bool> {
    reply
        .split_whitespace()
        .rev()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .find_map(|t| match t {
            "1" => Some(true),
            "0" => Some(false),
            _ => None,
        })
        .ok_or_else(|| Error::JudgeParseError(reply.trim().to_owned()))
}

pub fn gpt_em(judge: &dyn LLMClient, question: &str, gold: &str, generated: &str) -> Result<bool> {
    if [question, gold, generated].iter().any(|s| s.trim().is_empty()) {
        return Err(Error::InvalidValue("judge inputs must be non-empty".into()));
    }
    parse_judgement(&judge.complete(&build_judge_prompt(question, gold, generated))?)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::InvalidValue(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Newline-delimited records; turns must run 1, 2, … within each
/// conversation, in file order.
pub fn parse_dataset(text: &str) -> Result<Vec<QAExample>> {
    let examples: Vec<QAExample> = read_jsonl(text)?;
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    for ex in &examples {
        let prev = last.entry(ex.conversation_id.as_str()).or_insert(0);
        if ex.turn != *prev + 1 {
            return Err(Error::InvalidValue(format!(
                "conversation `{}`: turn {} follows turn {}",
                ex.conversation_id, ex.turn, prev
            )));
        }
        *prev = ex.turn;
    }
    Ok(examples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QAExample>> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

pub fn parse_corpus(text: &str) -> Result<Vec<Document>> {
    Ok(read_jsonl::<CorpusRecord>(text)?
        .into_iter()
        .map(|r| Document {
            id: r.id,
            title: r.title,
            text: r.text,
            source: String::new(),
        })
        .collect())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl Timing {
    /// Nearest-rank p95.
    pub fn from_samples(ms: &[f64]) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).max(1);
        Some(Self {
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p95_ms: sorted[rank - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub segments: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
    /// Every segment count returned the same ranked ids for every query.
    pub identical_results: bool,
}

/// Times segmented top-`k` retrieval for each segment count. Queries run
/// sequentially, after at least [`WARMUP_QUERIES`] untimed warm-up queries.
pub fn bench_latency(
    index: &Index,
    queries: &[Vec<f64>],
    segment_counts: &[usize],
    projections: &HopfieldProjections,
    k: usize,
) -> Result<LatencyReport> {
    if queries.is_empty() {
        return Ok(LatencyReport {
            rows: Vec::new(),
            identical_results: true,
        });
    }
    let mut rows = Vec::with_capacity(segment_counts.len());
    let mut reference: Option<Vec<Vec<String>>> = None;
    let mut identical = true;
    for &s in segment_counts {
        for q in queries.iter().cycle().take(WARMUP_QUERIES) {
            search_vector(index, q, k, projections, s)?;
        }
        let mut samples = Vec::with_capacity(queries.len());
        let mut ids = Vec::with_capacity(queries.len());
        for q in queries {
            let start = Instant::now();
            let hits = search_vector(index, q, k, projections, s)?;
            samples.push(start.elapsed().as_secs_f64() * 1e3);
            ids.push(hits.into_iter().map(|h| h.chunk_id).collect::<Vec<_>>());
        }
        match &reference {
            None => reference = Some(ids),
            Some(r) => identical &= *r == ids,
        }
        let t = Timing::from_samples(&samples).expect("non-empty samples");
        rows.push(LatencyRow {
            segments: s,
            mean_ms: t.mean_ms,
            p95_ms: t.p95_ms,
        });
    }
    Ok(LatencyReport {
        rows,
        identical_results: identical,
    })
}

impl LatencyReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8}  {:>10}  {:>10}\n", "segments", "mean_ms", "p95_ms");
        for r in &self.rows {
            let _ = writeln!(out, "{:>8}  {:>10.3}  {:>10.3}", r.segments, r.mean_ms, r.p95_ms);
        }
        let _ = writeln!(out, "identical_results: {}", self.identical_results);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mrr: f64,
    pub recall_at_k: f64,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpt_em: Option<f64>,
    pub n_queries: usize,
    /// Judge replies that could not be parsed; counted as failures.
    pub judge_errors: usize,
    pub timing: Timing,
}

impl MetricReport {
    /// Aligned `name  value` lines; timing values sit on their own lines at
    /// the end, each starting with `timing.`.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("n_queries".into(), self.n_queries.to_string()),
            ("mrr".into(), format!("{:.6}", self.mrr)),
            (format!("recall@{}", self.k), format!("{:.6}", self.recall_at_k)),
        ];
        if let Some(em) = self.gpt_em {
            rows.push(("gpt_em".into(), format!("{em:.6}")));
            rows.push(("judge_errors".into(), self.judge_errors.to_string()));
        }
        rows.push(("timing.mean_ms".into(), format!("{:.3}", self.timing.mean_ms)));
        rows.push(("timing.p95_ms".into(), format!("{:.3}", self.timing.p95_ms)));
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(n, v)| format!("{n:<width$}  {v}\n"))
            .collect()
    }
}

/// Retrieves for every example with gold ids and judges every example that
/// carries a generated answer when `judge` is given.
pub fn evaluate(
    index: &Index,
    examples: &[QAExample],
    provider: &dyn EmbeddingProvider,
    projections: &HopfieldProjections,
    segments: usize,
    k: usize,
    judge: Option<&dyn LLMClient>,
) -> Result<MetricReport> {
    if provider.name() != index.provider() {
        return Err(Error::IndexProviderMismatch {
            index: index.provider().to_owned(),
            query: provider.name().to_owned(),
        });
    }
    let scored: Vec<&QAExample> = examples.iter().filter(|e| !e.gold_chunk_ids.is_empty()).collect();
    if scored.is_empty() {
        return Err(Error::NoQueries);
    }
    let mut ranked = Vec::with_capacity(scored.len());
    let mut samples = Vec::with_capacity(scored.len());
    for ex in &scored {
        let q = provider.embed(&ex.question)?;
        let start = Instant::now();
        let hits = search_vector(index, &q, k, projections, segments)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        ranked.push(hits.into_iter().map(|h| h.chunk_id).collect::<Vec<_>>());
    }
    let gold: Vec<Vec<String>> = scored.iter().map(|e| e.gold_chunk_ids.clone()).collect();

    let mut judge_errors = 0;
    let gpt_em = match judge {
        None => None,
        Some(judge) => {
            let judged: Vec<&QAExample> = examples.iter().filter(|e| e.generated_answer.is_some()).collect();
            let mut correct = 0usize;
            for ex in &judged {
                match gpt_em(judge, &ex.question, &ex.gold_answer, ex.generated_answer.as_deref().unwrap_or("")) {
                    Ok(true) => correct += 1,
                    Ok(false) => {}
                    Err(Error::JudgeParseError(_) | Error::InvalidValue(_)) => judge_errors += 1,
                    Err(e) => return Err(e),
                }
            }
            (!judged.is_empty()).then(|| correct as f64 / judged.len() as f64)
        }
    };
    Ok(MetricReport {
        mrr: mrr(&ranked, &gold)?,
        recall_at_k: recall_at_k(&ranked, &gold, k)?,
        k,
        gpt_em,
        n_queries: scored.len(),
        judge_errors,
        timing: Timing::from_samples(&samples).expect("non-empty samples"),
    })
}
