use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 8.0;

/// Which of the four layer configurations a set of projections realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    MemoryRetrieval,
    Association,
    Pooling,
    Lookup,
}

impl std::str::FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "memory-retrieval" => Ok(Self::MemoryRetrieval),
            "association" => Ok(Self::Association),
            "pooling" => Ok(Self::Pooling),
            "lookup" => Ok(Self::Lookup),
            other => Err(Error::InvalidValue(format!("unknown hopfield mode `{other}`"))),
        }
    }
}

/// Layer configuration requested from [`configure_mode`].
#[derive(Debug, Clone)]
pub enum HopfieldMode {
    /// No learning: every projection is the identity.
    MemoryRetrieval,
    /// Trainable query/key/value projections.
    Association { seed: u64 },
    /// A learned static query pattern (in association space) replaces the
    /// projected input query; keys and values stay trainable.
    Pooling { query: Vec<f64>, seed: u64 },
    /// Keys (`n_stored × assoc_dim`) and value projection
    /// (`assoc_dim × out_dim`) are stored in the layer itself; pair with
    /// [`MemoryBank::identity`](super::MemoryBank::identity).
    Lookup {
        keys: Array2<f64>,
        values: Array2<f64>,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeDims {
    pub query_dim: usize,
    pub pattern_dim: usize,
    pub assoc_dim: usize,
    pub out_dim: usize,
}

impl ModeDims {
    pub fn square(dim: usize) -> Self {
        Self {
            query_dim: dim,
            pattern_dim: dim,
            assoc_dim: dim,
            out_dim: dim,
        }
    }
}

/// `W_Q`, `W_K`, `W_V` and inverse temperature `beta`.
///
/// Scores are `beta · (q W_Q) · (y W_K)` and the retrieved vector is
/// `Σ_i w_i · y_i W_K W_V`, so `W_V` maps association space to output space.
/// In pooling mode `w_q` is a single row holding the static query pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldProjections {
    pub mode: ModeKind,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub beta: f64,
}

fn uniform_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidDimension(msg()))
    }
}

/// Builds projections for `mode`. Trainable matrices are drawn uniformly from
/// `[-1/√fan_in, 1/√fan_in]` with a seeded generator.
pub fn configure_mode(mode: HopfieldMode, dims: ModeDims) -> Result<HopfieldProjections> {
    let ModeDims {
        query_dim,
        pattern_dim,
        assoc_dim,
        out_dim,
    } = dims;
    require(
        query_dim > 0 && pattern_dim > 0 && assoc_dim > 0 && out_dim > 0,
        || format!("all dims must be positive: {dims:?}"),
    )?;
    let projections = match mode {
        HopfieldMode::MemoryRetrieval => {
            require(
                query_dim == pattern_dim && pattern_dim == assoc_dim && assoc_dim == out_dim,
                || format!("memory retrieval needs equal dims, got {dims:?}"),
            )?;
            HopfieldProjections::identity(query_dim)
        }
        HopfieldMode::Association { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            HopfieldProjections {
                mode: ModeKind::Association,
                w_q: uniform_init(query_dim, assoc_dim, &mut rng),
                w_k: uniform_init(pattern_dim, assoc_dim, &mut rng),
                w_v: uniform_init(assoc_dim, out_dim, &mut rng),
                beta: DEFAULT_BETA,
            }
        }
        HopfieldMode::Pooling { query, seed } => {
            require(query.len() == assoc_dim, || {
                format!("static query has dim {}, expected {assoc_dim}", query.len())
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            HopfieldProjections {
                mode: ModeKind::Pooling,
                w_q: Array2::from_shape_vec((1, assoc_dim), query)
                    .map_err(|e| Error::InvalidDimension(e.to_string()))?,
                w_k: uniform_init(pattern_dim, assoc_dim, &mut rng),
                w_v: uniform_init(assoc_dim, out_dim, &mut rng),
                beta: DEFAULT_BETA,
            }
        }
        HopfieldMode::Lookup { keys, values, seed } => {
            require(keys.nrows() > 0 && keys.ncols() > 0, || {
                "lookup needs a non-empty stored-pattern matrix".into()
            })?;
            require(keys.nrows() == pattern_dim, || {
                format!(
                    "lookup stores {} patterns but pattern dim is {pattern_dim}",
                    keys.nrows()
                )
            })?;
            require(keys.ncols() == assoc_dim, || {
                format!("stored keys have width {}, expected {assoc_dim}", keys.ncols())
            })?;
            require(values.dim() == (assoc_dim, out_dim), || {
                format!(
                    "value projection is {:?}, expected ({assoc_dim}, {out_dim})",
                    values.dim()
                )
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            HopfieldProjections {
                mode: ModeKind::Lookup,
                w_q: uniform_init(query_dim, assoc_dim, &mut rng),
                w_k: keys,
                w_v: values,
                beta: DEFAULT_BETA,
            }
        }
    };
    projections.validate()?;
    Ok(projections)
}

impl HopfieldProjections {
    pub fn identity(dim: usize) -> Self {
        Self {
            mode: ModeKind::MemoryRetrieval,
            w_q: Array2::eye(dim),
            w_k: Array2::eye(dim),
            w_v: Array2::eye(dim),
            beta: DEFAULT_BETA,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn query_dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn pattern_dim(&self) -> usize {
        self.w_k.nrows()
    }

    pub fn assoc_dim(&self) -> usize {
        self.w_k.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_v.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        require(self.w_q.ncols() == self.w_k.ncols(), || {
            format!(
                "w_q has {} columns, w_k has {}",
                self.w_q.ncols(),
                self.w_k.ncols()
            )
        })?;
        require(self.w_v.nrows() == self.w_k.ncols(), || {
            format!(
                "w_v has {} rows, association dim is {}",
                self.w_v.nrows(),
                self.w_k.ncols()
            )
        })?;
        for (name, m) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidValue(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// `q W_Q` (or the static pattern in pooling mode).
    pub fn project_query(&self, query: &[f64]) -> Result<Array1<f64>> {
        if self.mode == ModeKind::Pooling {
            return Ok(self.w_q.row(0).to_owned());
        }
        if query.len() != self.query_dim() {
            return Err(Error::InvalidDimension(format!(
                "query has dim {}, projections expect {}",
                query.len(),
                self.query_dim()
            )));
        }
        Ok(ArrayView1::from(query).dot(&self.w_q))
    }

    /// Vector `u` in pattern space with `u · y = (q W_Q) · (y W_K)`.
    pub fn pattern_space_query(&self, query: &[f64]) -> Result<Vec<f64>> {
        let assoc = self.project_query(query)?;
        Ok(self.w_k.dot(&assoc).to_vec())
    }

    /// `y W_K W_V`.
    pub fn value_of(&self, pattern: &[f64]) -> Result<Array1<f64>> {
        if pattern.len() != self.pattern_dim() {
            return Err(Error::InvalidDimension(format!(
                "pattern has dim {}, projections expect {}",
                pattern.len(),
                self.pattern_dim()
            )));
        }
        Ok(ArrayView1::from(pattern).dot(&self.w_k).dot(&self.w_v))
    }
}

/// On-disk form of [`HopfieldProjections`] (row-major nested arrays).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionsFile {
    pub mode: ModeKind,
    pub beta: f64,
    pub w_q: Vec<Vec<f64>>,
    pub w_k: Vec<Vec<f64>>,
    pub w_v: Vec<Vec<f64>>,
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(name: &str, rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let n = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if n == 0 || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidDimension(format!("{name} is not a non-empty rectangular matrix")));
    }
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::InvalidDimension(e.to_string()))
}

impl From<&HopfieldProjections> for ProjectionsFile {
    fn from(p: &HopfieldProjections) -> Self {
        Self {
            mode: p.mode,
            beta: p.beta,
            w_q: to_rows(&p.w_q),
            w_k: to_rows(&p.w_k),
            w_v: to_rows(&p.w_v),
        }
    }
}

impl TryFrom<ProjectionsFile> for HopfieldProjections {
    type Error = Error;

    fn try_from(f: ProjectionsFile) -> Result<Self> {
        let p = Self {
            mode: f.mode,
            beta: f.beta,
            w_q: from_rows("w_q", f.w_q)?,
            w_k: from_rows("w_k", f.w_k)?,
            w_v: from_rows("w_v", f.w_v)?,
        };
        p.validate()?;
        Ok(p)
    }
}
