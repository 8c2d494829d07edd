//! Multi-reference faith scoring of an answer against reference segments.
//!
//! Per segment: `S = alpha·P + beta_w·Rcl + gamma·AWL_norm`, where `P` and
//! `Rcl` are item-set precision and recall and `AWL_norm` is the answer's
//! capped average word length. The report takes the maximum over segments
//! and is faithful only when that maximum strictly exceeds the threshold.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokens;

pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_AWL_CAP: f64 = 10.0;

const SHIPPED_STOPWORDS: &str = include_str!("stopwords.txt");

/// Stopwords, normalized with the same tokenizer as the text they filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    /// One token per line; blank lines ignored.
    pub fn parse(list: &str) -> Self {
        Self(list.lines().flat_map(tokens).collect())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn shipped() -> &'static Self {
        static LIST: OnceLock<Stopwords> = OnceLock::new();
        LIST.get_or_init(|| Self::parse(SHIPPED_STOPWORDS))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaithWeights {
    pub alpha: f64,
    pub beta_w: f64,
    pub gamma: f64,
}

impl Default for FaithWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta_w: 0.4,
            gamma: 0.1,
        }
    }
}

impl FaithWeights {
    pub fn new(alpha: f64, beta_w: f64, gamma: f64) -> Result<Self> {
        let w = Self {
            alpha,
            beta_w,
            gamma,
        };
        w.validate()?;
        Ok(w)
    }

    /// Each weight in [0, 1], sum 1 within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta_w, self.gamma];
        if all.iter().any(|w| !(0.0..=1.0).contains(w)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig {
                code: "INVALID_WEIGHTS",
                message: format!(
                    "faith weights ({}, {}, {}) must lie in [0, 1] and sum to 1",
                    self.alpha, self.beta_w, self.gamma
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub index: usize,
    pub precision: f64,
    pub recall: f64,
    pub awl_norm: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithScoreReport {
    pub per_segment: Vec<SegmentScore>,
    pub max_score: f64,
    pub threshold: f64,
    pub faithful: bool,
}

pub type ItemSet = BTreeSet<String>;

/// Deduplicated lowercase content tokens of `text`.
pub fn normalize_items(text: &str) -> ItemSet {
    normalize_items_with(text, Stopwords::shipped())
}

pub fn normalize_items_with(text: &str, stopwords: &Stopwords) -> ItemSet {
    tokens(text).into_iter().filter(|t| !stopwords.contains(t)).collect()
}

pub fn precision(answer: &ItemSet, segment: &ItemSet) -> Result<f64> {
    if answer.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    Ok(answer.intersection(segment).count() as f64 / answer.len() as f64)
}

/// Zero for an empty segment; callers skip those segments.
pub fn recall(answer: &ItemSet, segment: &ItemSet) -> f64 {
    if segment.is_empty() {
        return 0.0;
    }
    answer.intersection(segment).count() as f64 / segment.len() as f64
}

/// Mean character length over every word, stopwords included.
pub fn awl(answer: &str) -> Result<f64> {
    let words = tokens(answer);
    if words.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    let letters: usize = words.iter().map(|w| w.chars().count()).sum();
    Ok(letters as f64 / words.len() as f64)
}

pub fn awl_norm(answer: &str, cap: f64) -> Result<f64> {
    if cap.is_nan() || cap <= 0.0 {
        return Err(Error::InvalidValue(format!("AWL cap must be positive, got {cap}")));
    }
    Ok((awl(answer)? / cap).min(1.0))
}

pub fn faith_score(segment: &str, answer: &str, weights: &FaithWeights, cap: f64) -> Result<f64> {
    let answer_items = normalize_items(answer);
    let segment_items = normalize_items(segment);
    let p = precision(&answer_items, &segment_items)?;
    let r = recall(&answer_items, &segment_items);
    Ok(weights.alpha * p + weights.beta_w * r + weights.gamma * awl_norm(answer, cap)?)
}

/// Scores each segment with a non-empty item set and keeps the maximum.
pub fn conv_mrfs(
    segments: &[String],
    answer: &str,
    weights: &FaithWeights,
    threshold: f64,
    cap: f64,
) -> Result<FaithScoreReport> {
    conv_mrfs_with(segments, answer, weights, threshold, cap, Stopwords::shipped())
}

pub fn conv_mrfs_with(
    segments: &[String],
    answer: &str,
    weights: &FaithWeights,
    threshold: f64,
    cap: f64,
    stopwords: &Stopwords,
) -> Result<FaithScoreReport> {
    let answer_items = normalize_items_with(answer, stopwords);
    if answer_items.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    let awl_n = awl_norm(answer, cap)?;
    let mut per_segment = Vec::new();
    for (index, seg) in segments.iter().enumerate() {
        let seg_items = normalize_items_with(seg, stopwords);
        if seg_items.is_empty() {
            continue;
        }
        let p = precision(&answer_items, &seg_items)?;
        let r = recall(&answer_items, &seg_items);
        per_segment.push(SegmentScore {
            index,
            precision: p,
            recall: r,
            awl_norm: awl_n,
            score: weights.alpha * p + weights.beta_w * r + weights.gamma * awl_n,
        });
    }
    let max_score = per_segment.iter().map(|s| s.score).fold(0.0, f64::max);
    Ok(FaithScoreReport {
        per_segment,
        max_score,
        threshold,
        faithful: max_score > threshold,
    })
}
