//! Vector kernels used by every retrieval path: sparsemax (Euclidean
//! projection onto the probability simplex), its Jacobian action, and
//! similarity primitives.
//!
//! Everything here works in `f64`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        check_finite(&components)?;
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

/// Output of [`sparsemax`]: non-negative components summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Indices with strictly positive mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidDimension("empty vector".into()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "component {i} is not finite ({})",
            v[i]
        )));
    }
    Ok(())
}

/// Threshold `tau` such that `sparsemax(z)_i = max(z_i - tau, 0)`.
///
/// Sorted-cumulative rule: with `z` sorted descending, the support size is
/// the largest `k` with `1 + k z_(k) > sum_{j<=k} z_(j)`.
pub fn sparsemax_threshold(z: &[f64]) -> Result<f64> {
    check_finite(z)?;
    let mut sorted = z.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut support_sum = sorted[0];
    let mut support = 1usize;
    for (i, &zi) in sorted.iter().enumerate() {
        cumsum += zi;
        let k = (i + 1) as f64;
        if 1.0 + k * zi > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    Ok((support_sum - 1.0) / support as f64)
}

/// Euclidean projection of `z` onto the probability simplex.
pub fn sparsemax(z: &[f64]) -> Result<ProbabilityVector> {
    let tau = sparsemax_threshold(z)?;
    Ok(ProbabilityVector(
        z.iter().map(|&zi| (zi - tau).max(0.0)).collect(),
    ))
}

/// `J(z) · upstream` where `J = Diag(s) - s sᵀ / |S|` and `s` is the support
/// indicator of `sparsemax(z)`.
pub fn sparsemax_jacobian_apply(z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if z.len() != upstream.len() {
        return Err(Error::InvalidDimension(format!(
            "z has dim {}, upstream has dim {}",
            z.len(),
            upstream.len()
        )));
    }
    check_finite(upstream)?;
    let p = sparsemax(z)?;
    let in_support: Vec<bool> = p.iter().map(|&pi| pi > 0.0).collect();
    let size = in_support.iter().filter(|&&s| s).count() as f64;
    let mean = in_support
        .iter()
        .zip(upstream)
        .filter(|(&s, _)| s)
        .map(|(_, &u)| u)
        .sum::<f64>()
        / size;
    Ok(in_support
        .iter()
        .zip(upstream)
        .map(|(&s, &u)| if s { u - mean } else { 0.0 })
        .collect())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidDimension(format!(
            "cosine of dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
