use std::borrow::Cow;
use std::collections::HashMap;

use crate::embedding::{dequantize, QuantizedVector};
use crate::error::{Error, Result};
use crate::numerics::dot;

/// Row storage for a [`MemoryBank`].
#[derive(Debug, Clone, PartialEq)]
pub enum Patterns {
    /// Row-major `n × dim` matrix.
    Dense(Vec<f64>),
    /// One scale per row plus row-major int8 values.
    Int8 { scales: Vec<f64>, values: Vec<i8> },
}

/// Immutable matrix of stored patterns, one opaque id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    ids: Vec<String>,
    rows_by_id: HashMap<String, usize>,
    dim: usize,
    patterns: Patterns,
}

fn index_ids(ids: &[String]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(map)
}

impl MemoryBank {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyMemory);
        }
        if ids.len() != rows.len() {
            return Err(Error::InvalidDimension(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidDimension("zero-width patterns".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidDimension(format!(
                    "row {i} has dim {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidValue(format!("row {i} is not finite")));
            }
            flat.extend_from_slice(row);
        }
        let rows_by_id = index_ids(&ids)?;
        Ok(Self {
            ids,
            rows_by_id,
            dim,
            patterns: Patterns::Dense(flat),
        })
    }

    /// Bank whose rows are stored int8-quantized; scoring dequantizes on the
    /// fly.
    pub fn quantized(ids: Vec<String>, rows: Vec<QuantizedVector>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyMemory);
        }
        if ids.len() != rows.len() {
            return Err(Error::InvalidDimension(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows[0].dim();
        if dim == 0 {
            return Err(Error::InvalidDimension("zero-width patterns".into()));
        }
        let mut scales = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.dim() != dim {
                return Err(Error::InvalidDimension(format!(
                    "row {i} has dim {}, expected {dim}",
                    row.dim()
                )));
            }
            if !row.scale.is_finite() || row.scale < 0.0 {
                return Err(Error::InvalidValue(format!("row {i} has scale {}", row.scale)));
            }
            scales.push(row.scale);
            values.extend_from_slice(&row.values);
        }
        let rows_by_id = index_ids(&ids)?;
        Ok(Self {
            ids,
            rows_by_id,
            dim,
            patterns: Patterns::Int8 { scales, values },
        })
    }

    /// `n × n` identity bank with ids `"0".."n-1"`; used for lookup-mode
    /// layers whose keys live in the projections.
    pub fn identity(n: usize) -> Result<Self> {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r
            })
            .collect();
        Self::new((0..n).map(|i| i.to_string()).collect(), rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.rows_by_id.get(id).copied()
    }

    pub fn patterns(&self) -> &Patterns {
        &self.patterns
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.patterns, Patterns::Int8 { .. })
    }

    /// Row `i` as reals (dequantized for int8 storage).
    pub fn row(&self, i: usize) -> Cow<'_, [f64]> {
        let span = i * self.dim..(i + 1) * self.dim;
        match &self.patterns {
            Patterns::Dense(flat) => Cow::Borrowed(&flat[span]),
            Patterns::Int8 { scales, values } => Cow::Owned(dequantize(&QuantizedVector {
                scale: scales[i],
                values: values[span].to_vec(),
            })),
        }
    }

    /// Inner product of row `i` with `v`.
    #[inline]
    pub fn dot_row(&self, i: usize, v: &[f64]) -> f64 {
        let span = i * self.dim..(i + 1) * self.dim;
        match &self.patterns {
            Patterns::Dense(flat) => dot(&flat[span], v),
            Patterns::Int8 { scales, values } => {
                let acc: f64 = values[span]
                    .iter()
                    .zip(v)
                    .map(|(&q, &x)| f64::from(q) * x)
                    .sum();
                scales[i] * acc
            }
        }
    }

    /// New snapshot with extra dense rows appended. Quantized banks quantize
    /// the new rows.
    pub fn with_patterns(&self, ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut all_ids = self.ids.clone();
        all_ids.extend(ids);
        match &self.patterns {
            Patterns::Dense(_) => {
                let mut all_rows: Vec<Vec<f64>> =
                    (0..self.len()).map(|i| self.row(i).into_owned()).collect();
                all_rows.extend(rows);
                Self::new(all_ids, all_rows)
            }
            Patterns::Int8 { scales, values } => {
                let mut all_rows: Vec<QuantizedVector> = scales
                    .iter()
                    .zip(values.chunks(self.dim))
                    .map(|(&scale, v)| QuantizedVector {
                        scale,
                        values: v.to_vec(),
                    })
                    .collect();
                all_rows.extend(rows.iter().map(|r| crate::embedding::quantize_int8(r)));
                Self::quantized(all_ids, all_rows)
            }
        }
    }
}
