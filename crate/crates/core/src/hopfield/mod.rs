//! Sparse modern-Hopfield associative retrieval.
//!
//! A single update step of the retrieval dynamics is attention with a
//! sparsemax activation:
//!
//! ```text
//! Z = sparsemax(β · R W_Q (Y W_K)ᵀ) · Y W_K W_V
//! ```
//!
//! Ranking uses the raw logits, so splitting the bank into contiguous
//! segments, taking a local top-k in each and merging by raw score gives
//! exactly the same ids as a full scan.

mod bank;
mod projections;

pub use bank::{MemoryBank, Patterns};
pub use projections::{
    configure_mode, HopfieldMode, HopfieldProjections, ModeDims, ModeKind, ProjectionsFile,
    DEFAULT_BETA,
};

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{sparsemax, ProbabilityVector};

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub weights: ProbabilityVector,
    pub retrieved: Vec<f64>,
    /// `β · (q W_Q) · (y_i W_K)` for every row.
    pub scores: Vec<f64>,
    /// All ids, best score first, ties by ascending id.
    pub ranked_ids: Vec<String>,
}

/// One entry of a top-k list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPattern {
    pub id: String,
    pub row: usize,
    /// Scaled logit `β · (q W_Q) · (y W_K)`.
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

fn check_shapes(query: &[f64], bank: &MemoryBank, proj: &HopfieldProjections) -> Result<()> {
    proj.validate()?;
    if bank.dim() != proj.pattern_dim() {
        return Err(Error::InvalidDimension(format!(
            "bank has dim {}, w_k expects {}",
            bank.dim(),
            proj.pattern_dim()
        )));
    }
    if proj.mode != ModeKind::Pooling && query.len() != proj.query_dim() {
        return Err(Error::InvalidDimension(format!(
            "query has dim {}, w_q expects {}",
            query.len(),
            proj.query_dim()
        )));
    }
    Ok(())
}

/// One retrieval step: sparsemax weights over every stored pattern and the
/// value-projected convex combination they select.
pub fn associate(
    query: &[f64],
    bank: &MemoryBank,
    proj: &HopfieldProjections,
) -> Result<AssociationResult> {
    if bank.is_empty() {
        return Err(Error::EmptyMemory);
    }
    check_shapes(query, bank, proj)?;
    let u = proj.pattern_space_query(query)?;
    let raw: Vec<f64> = (0..bank.len()).map(|i| bank.dot_row(i, &u)).collect();
    let scores: Vec<f64> = raw.iter().map(|s| proj.beta * s).collect();
    let weights = sparsemax(&scores)?;

    // Σ w_i y_i first, then one projection through W_K W_V.
    let mut mixed = vec![0.0; bank.dim()];
    for i in weights.support() {
        let w = weights[i];
        for (m, y) in mixed.iter_mut().zip(bank.row(i).iter()) {
            *m += w * y;
        }
    }
    let retrieved = proj.value_of(&mixed)?.to_vec();

    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&a, &b| compare_candidates(raw[a], bank.id(a), raw[b], bank.id(b)));
    let ranked_ids = order.into_iter().map(|i| bank.id(i).to_owned()).collect();

    Ok(AssociationResult {
        weights,
        retrieved,
        scores,
        ranked_ids,
    })
}

/// Better candidates sort first: higher score, then lower id.
fn compare_candidates(sa: f64, ida: &str, sb: f64, idb: &str) -> Ordering {
    sb.total_cmp(&sa).then_with(|| ida.cmp(idb))
}

#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    raw: f64,
    id: &'a str,
    row: usize,
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    // Greater means better.
    fn cmp(&self, other: &Self) -> Ordering {
        compare_candidates(other.raw, other.id, self.raw, self.id)
    }
}

fn scan_top_k<'a>(bank: &'a MemoryBank, u: &[f64], rows: Range<usize>, k: usize) -> Vec<Candidate<'a>> {
    let mut heap: BinaryHeap<Reverse<Candidate<'a>>> = BinaryHeap::with_capacity(k + 1);
    for row in rows {
        let c = Candidate {
            raw: bank.dot_row(row, u),
            id: bank.id(row),
            row,
        };
        if heap.len() < k {
            heap.push(Reverse(c));
        } else if let Some(Reverse(worst)) = heap.peek() {
            if c > *worst {
                heap.pop();
                heap.push(Reverse(c));
            }
        }
    }
    heap.into_iter().map(|Reverse(c)| c).collect()
}

fn finish(mut candidates: Vec<Candidate<'_>>, k: usize, beta: f64) -> Vec<RankedPattern> {
    candidates.sort_by(|a, b| b.cmp(a));
    candidates
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, c)| RankedPattern {
            id: c.id.to_owned(),
            row: c.row,
            score: beta * c.raw,
            rank: i + 1,
        })
        .collect()
}

/// The `min(k, n)` best rows by raw score, ties broken by ascending id.
pub fn retrieve_top_k(
    query: &[f64],
    bank: &MemoryBank,
    proj: &HopfieldProjections,
    k: usize,
) -> Result<Vec<RankedPattern>> {
    segmented_retrieve(query, bank, proj, 1, k)
}

/// Contiguous row ranges of size `⌈n/segments⌉`.
pub fn segment_ranges(n: usize, segments: usize) -> Vec<Range<usize>> {
    let size = n.div_ceil(segments.max(1)).max(1);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// Splits the bank into `segments` contiguous parts, takes a local top-k in
/// each (in parallel when `segments > 1`), then merges by raw score.
pub fn segmented_retrieve(
    query: &[f64],
    bank: &MemoryBank,
    proj: &HopfieldProjections,
    segments: usize,
    k: usize,
) -> Result<Vec<RankedPattern>> {
    if bank.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if k == 0 {
        return Err(Error::InvalidValue("k must be at least 1".into()));
    }
    if segments == 0 || segments > bank.len() {
        return Err(Error::InvalidSegmentation {
            segments,
            patterns: bank.len(),
        });
    }
    check_shapes(query, bank, proj)?;
    let u = proj.pattern_space_query(query)?;

    let candidates = if segments == 1 {
        scan_top_k(bank, &u, 0..bank.len(), k)
    } else {
        // collect() keeps segment order, so the merge input is deterministic
        segment_ranges(bank.len(), segments)
            .into_par_iter()
            .map(|range| scan_top_k(bank, &u, range, k))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    Ok(finish(candidates, k, proj.beta))
}
