//! Contrastive training of `W_Q` and `W_K` with the dense-passage-retrieval
//! negative log-likelihood, using in-batch negatives.
//!
//! For one instance with candidate scores `s_0` (the positive) and
//! `s_1..s_K` (negatives), the loss is `logsumexp(s) - s_0`. Gradients are
//! softmax-weighted outer products:
//!
//! ```text
//! g_j      = softmax(s)_j - [j = 0]
//! ∂L/∂W_Q  = q ⊗ Σ_j g_j (y_j W_K)
//! ∂L/∂W_K  = Σ_j g_j y_j ⊗ (q W_Q)
//! ```
//!
//! `W_V` and `β` are not trained.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hopfield::{HopfieldProjections, MemoryBank};

/// A question embedding with its gold pattern and optional explicit
/// negatives, all referenced by bank id.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub question_embedding: Vec<f64>,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

/// One line of the training-pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub question: String,
    pub positive_chunk_id: String,
    #[serde(default)]
    pub negative_chunk_ids: Vec<String>,
}

pub fn parse_training_records(jsonl: &str) -> Result<Vec<TrainingRecord>> {
    jsonl
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Use the other instances' positives as negatives.
    pub in_batch_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 16,
            in_batch_negatives: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub projections: HopfieldProjections,
    pub learning_rate: f64,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub projections: HopfieldProjections,
    /// Mean loss over the (unshuffled) training batches after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
}

/// `(q W_Q) · (y W_K)`, the unscaled bilinear score.
pub fn similarity(q: &[f64], y: &[f64], proj: &HopfieldProjections) -> Result<f64> {
    if q.len() != proj.query_dim() || y.len() != proj.pattern_dim() {
        return Err(Error::InvalidDimension(format!(
            "q has dim {} (expected {}), y has dim {} (expected {})",
            q.len(),
            proj.query_dim(),
            y.len(),
            proj.pattern_dim()
        )));
    }
    let a = ArrayView1::from(q).dot(&proj.w_q);
    let b = ArrayView1::from(y).dot(&proj.w_k);
    Ok(a.dot(&b))
}

/// Bank rows scored for each instance: the positive first, then negatives.
fn candidate_rows(
    batch: &[TrainingInstance],
    bank: &MemoryBank,
    in_batch: bool,
) -> Result<Vec<Vec<usize>>> {
    let row = |id: &str| bank.row_of(id).ok_or_else(|| Error::UnknownId(id.to_owned()));
    let positives: Vec<usize> = batch.iter().map(|i| row(&i.positive_id)).collect::<Result<_>>()?;
    batch
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let pos = positives[i];
            let mut rows = vec![pos];
            for id in &inst.negative_ids {
                let r = row(id)?;
                if r == pos {
                    return Err(Error::InvalidValue(format!(
                        "instance {i}: positive `{id}` also listed as negative"
                    )));
                }
                if !rows.contains(&r) {
                    rows.push(r);
                }
            }
            if in_batch {
                for &other in &positives {
                    if !rows.contains(&other) {
                        rows.push(other);
                    }
                }
            }
            if rows.len() < 2 {
                return Err(Error::InsufficientNegatives(i));
            }
            Ok(rows)
        })
        .collect()
}

fn check_batch(batch: &[TrainingInstance], proj: &HopfieldProjections, bank: &MemoryBank) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidValue("empty training batch".into()));
    }
    if bank.dim() != proj.pattern_dim() {
        return Err(Error::InvalidDimension(format!(
            "bank dim {} vs w_k rows {}",
            bank.dim(),
            proj.pattern_dim()
        )));
    }
    if let Some(inst) = batch.iter().find(|i| i.question_embedding.len() != proj.query_dim()) {
        return Err(Error::InvalidDimension(format!(
            "question embedding has dim {}, w_q expects {}",
            inst.question_embedding.len(),
            proj.query_dim()
        )));
    }
    Ok(())
}

/// Numerically stable `(logsumexp(s) - s_0, softmax(s))`.
fn nll_and_softmax(scores: &[f64]) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = max + sum.ln() - scores[0];
    (loss.max(0.0), exps.into_iter().map(|e| e / sum).collect())
}

/// Batch-level matrices. `cols[i]` indexes into the rows of `y`; the first
/// entry is instance `i`'s positive.
struct BatchScores {
    q: Array2<f64>,
    y: Array2<f64>,
    a: Array2<f64>,
    b: Array2<f64>,
    scores: Array2<f64>,
    cols: Vec<Vec<usize>>,
}

fn batch_scores(
    batch: &[TrainingInstance],
    bank: &MemoryBank,
    proj: &HopfieldProjections,
    in_batch: bool,
) -> Result<BatchScores> {
    check_batch(batch, proj, bank)?;
    let rows = candidate_rows(batch, bank, in_batch)?;
    let mut distinct: Vec<usize> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    let cols: Vec<Vec<usize>> = rows
        .iter()
        .map(|cand| {
            cand.iter()
                .map(|&r| {
                    *slot.entry(r).or_insert_with(|| {
                        distinct.push(r);
                        distinct.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    let d = bank.dim();
    let mut y = Array2::<f64>::zeros((distinct.len(), d));
    for (mut out, &r) in y.rows_mut().into_iter().zip(&distinct) {
        out.assign(&ArrayView1::from(&*bank.row(r)));
    }
    let mut q = Array2::<f64>::zeros((batch.len(), proj.query_dim()));
    for (mut out, inst) in q.rows_mut().into_iter().zip(batch) {
        out.assign(&ArrayView1::from(inst.question_embedding.as_slice()));
    }
    let a = q.dot(&proj.w_q);
    let b = y.dot(&proj.w_k);
    let scores = a.dot(&b.t());
    Ok(BatchScores {
        q,
        y,
        a,
        b,
        scores,
        cols,
    })
}

/// Mean negative log-likelihood of each positive against its negatives.
pub fn dpr_nll(
    batch: &[TrainingInstance],
    bank: &MemoryBank,
    proj: &HopfieldProjections,
    in_batch_negatives: bool,
) -> Result<f64> {
    let bs = batch_scores(batch, bank, proj, in_batch_negatives)?;
    let total: f64 = bs
        .cols
        .iter()
        .enumerate()
        .map(|(i, cols)| {
            let s: Vec<f64> = cols.iter().map(|&c| bs.scores[[i, c]]).collect();
            nll_and_softmax(&s).0
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Loss and its analytic gradients with respect to `W_Q` and `W_K`.
pub fn dpr_gradients(
    batch: &[TrainingInstance],
    bank: &MemoryBank,
    proj: &HopfieldProjections,
    in_batch_negatives: bool,
) -> Result<Gradients> {
    let bs = batch_scores(batch, bank, proj, in_batch_negatives)?;
    let n = batch.len() as f64;
    // g[i, c] = (softmax_i[c] - [c is the positive]) / n, zero off-candidate
    let mut g = Array2::<f64>::zeros(bs.scores.raw_dim());
    let mut total = 0.0;
    for (i, cols) in bs.cols.iter().enumerate() {
        let s: Vec<f64> = cols.iter().map(|&c| bs.scores[[i, c]]).collect();
        let (loss, probs) = nll_and_softmax(&s);
        total += loss;
        for (j, (&c, p)) in cols.iter().zip(probs).enumerate() {
            g[[i, c]] += (p - if j == 0 { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok(Gradients {
        loss: total / n,
        w_q: bs.q.t().dot(&g.dot(&bs.b)),
        w_k: bs.y.t().dot(&g.t().dot(&bs.a)),
    })
}

/// One plain gradient-descent update.
pub fn grad_step(
    state: TrainState,
    batch: &[TrainingInstance],
    bank: &MemoryBank,
    in_batch_negatives: bool,
) -> Result<TrainState> {
    let grads = dpr_gradients(batch, bank, &state.projections, in_batch_negatives)?;
    if !grads.loss.is_finite()
        || grads.w_q.iter().chain(grads.w_k.iter()).any(|g| !g.is_finite())
    {
        return Err(Error::NumericalDivergence(format!(
            "non-finite gradient at step {}",
            state.step
        )));
    }
    let mut projections = state.projections;
    projections.w_q.scaled_add(-state.learning_rate, &grads.w_q);
    projections.w_k.scaled_add(-state.learning_rate, &grads.w_k);
    if projections.w_q.iter().chain(projections.w_k.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NumericalDivergence(format!(
            "non-finite projections after step {}",
            state.step
        )));
    }
    Ok(TrainState {
        projections,
        learning_rate: state.learning_rate,
        step: state.step + 1,
        seed: state.seed,
    })
}

fn mean_batched_loss(
    instances: &[TrainingInstance],
    bank: &MemoryBank,
    proj: &HopfieldProjections,
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in instances.chunks(config.batch_size) {
        total += dpr_nll(batch, bank, proj, config.in_batch_negatives)? * batch.len() as f64;
    }
    Ok(total / instances.len() as f64)
}

/// Mini-batch gradient descent over `epochs` seeded shuffles of
/// `instances`.
pub fn train(
    instances: &[TrainingInstance],
    bank: &MemoryBank,
    initial: HopfieldProjections,
    epochs: usize,
    config: TrainConfig,
) -> Result<TrainOutcome> {
    if instances.is_empty() {
        return Err(Error::InvalidValue("no training instances".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "learning rate must be non-negative, got {}",
            config.learning_rate
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidValue("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TrainState {
        projections: initial,
        learning_rate: config.learning_rate,
        step: 0,
        seed: config.seed,
    };
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut loss_history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<TrainingInstance> = idx.iter().map(|&i| instances[i].clone()).collect();
            state = grad_step(state, &batch, bank, config.in_batch_negatives)?;
        }
        loss_history.push(mean_batched_loss(instances, bank, &state.projections, &config)?);
    }
    Ok(TrainOutcome {
        projections: state.projections,
        loss_history,
    })
}
