use crate::cks::ContextualKnowledgeSet;
use crate::coa::{ActionKind, ChainNode, CoaConfig, SearchProvider};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::hopfield::HopfieldProjections;
use crate::numerics::cosine_similarity;
use crate::store::{search, Index};
use crate::text::first_sentences;
use crate::verification::{conv_mrfs, FaithWeights};

pub const SEPARATOR: &str = "\n\n";

fn action_failed(e: Error) -> Error {
    match e {
        Error::ActionFailed(_) => e,
        other => Error::ActionFailed(format!("{}: {other}", other.code())),
    }
}

/// Zero-norm vectors never match.
fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    cosine_similarity(a, b).unwrap_or(0.0)
}

/// Web search for `node.sub`. With the missing flag set, the top pages are
/// fetched as ranked by the provider. Otherwise pages whose
/// `"title | snippet"` embedding has cosine ≥ `sim_threshold` with
/// `"sub | guess"` are fetched, re-ranked by content similarity, and the best
/// `top_k_pages` kept.
pub fn execute_web_query(
    node: &ChainNode,
    search: &dyn SearchProvider,
    provider: &dyn EmbeddingProvider,
    config: &CoaConfig,
) -> Result<String> {
    let hits = search.search(&node.sub, config.top_m).map_err(action_failed)?;
    if hits.is_empty() {
        return Err(Error::EmptyRetrieval);
    }
    let contents: Vec<String> = if node.missing_flag {
        hits.iter()
            .take(config.top_k_pages)
            .map(|h| search.fetch(&h.url))
            .collect::<Result<_>>()
            .map_err(action_failed)?
    } else {
        let query = provider
            .embed(&format!("{} | {}", node.sub, node.guess_answer))
            .map_err(action_failed)?;
        let labels: Vec<String> = hits.iter().map(|h| format!("{} | {}", h.title, h.snippet)).collect();
        let label_vecs = provider.embed_batch(&labels).map_err(action_failed)?;
        let survivors: Vec<&str> = hits
            .iter()
            .zip(&label_vecs)
            .filter(|(_, v)| cosine_or_zero(v, &query) >= config.sim_threshold)
            .map(|(h, _)| h.url.as_str())
            .collect();
        if survivors.is_empty() {
            return Err(Error::EmptyRetrieval);
        }
        let pages: Vec<String> = survivors
            .iter()
            .map(|url| search.fetch(url))
            .collect::<Result<_>>()
            .map_err(action_failed)?;
        let page_vecs = provider.embed_batch(&pages).map_err(action_failed)?;
        let mut ranked: Vec<(f64, usize)> = page_vecs
            .iter()
            .enumerate()
            .map(|(i, v)| (cosine_or_zero(v, &query), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked
            .into_iter()
            .take(config.top_k_pages)
            .map(|(_, i)| pages[i].clone())
            .collect()
    };
    let joined = contents.join(SEPARATOR);
    if joined.trim().is_empty() {
        return Err(Error::EmptyRetrieval);
    }
    Ok(joined)
}

/// Top-`config.top_k` chunk texts for `node.sub` from the local index.
pub fn execute_knowledge_retrieval(
    node: &ChainNode,
    index: &Index,
    provider: &dyn EmbeddingProvider,
    projections: &HopfieldProjections,
    config: &CoaConfig,
) -> Result<String> {
    let hits = search(index, &node.sub, config.top_k, provider, projections, config.segments)?;
    Ok(hits.into_iter().map(|h| h.text).collect::<Vec<_>>().join(SEPARATOR))
}

/// Runs the node's action, mapping the result to `retrieved` or `error`.
pub fn execute_node(
    node: &ChainNode,
    search: &dyn SearchProvider,
    index: Option<&Index>,
    provider: &dyn EmbeddingProvider,
    projections: &HopfieldProjections,
    config: &CoaConfig,
) -> ChainNode {
    let result = match node.action {
        ActionKind::WebQuerying => execute_web_query(node, search, provider, config),
        ActionKind::KnowledgeEncoding => match index {
            Some(index) => execute_knowledge_retrieval(node, index, provider, projections, config),
            None => Err(Error::ActionFailed("no knowledge index loaded".into())),
        },
    };
    let mut out = node.clone();
    match result {
        Ok(text) => out.retrieved = Some(text),
        Err(e) => {
            out.retrieved = Some(String::new());
            out.error = Some(format!("{}: {e}", e.code()));
        }
    }
    out
}

/// Keeps the guess only when it is faithful to the conversation's reference
/// segments plus the retrieved text and the missing flag is unset; otherwise
/// adopts the first `summary_sentences` sentences of the retrieved text.
pub fn verify_and_correct(
    node: &ChainNode,
    cks: &ContextualKnowledgeSet,
    weights: &FaithWeights,
    threshold: f64,
    awl_cap: f64,
    summary_sentences: usize,
) -> Result<ChainNode> {
    let retrieved = node.retrieved.as_deref().unwrap_or("").trim();
    let guess = node.guess_answer.trim();
    if guess.is_empty() && retrieved.is_empty() {
        return Err(Error::UnresolvedNode);
    }
    let summary = first_sentences(retrieved, summary_sentences);
    let mut out = node.clone();

    let mut segments = cks.reference_segments();
    if !retrieved.is_empty() {
        segments.push(retrieved.to_owned());
    }
    let report = match conv_mrfs(&segments, guess, weights, threshold, awl_cap) {
        Ok(r) => Some(r),
        Err(Error::EmptyAnswer) => None,
        Err(e) => return Err(e),
    };
    out.faith_score = report.as_ref().map(|r| r.max_score);
    let keep_guess = !node.missing_flag && report.is_some_and(|r| r.faithful);
    out.corrected_answer = Some(if keep_guess || summary.is_empty() {
        guess.to_owned()
    } else {
        summary
    });
    Ok(out)
}
