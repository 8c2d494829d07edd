use serde::{Deserialize, Serialize};

/// Symmetric per-vector int8 quantization: `value_i ≈ scale * values[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub scale: f64,
    pub values: Vec<i8>,
}

impl QuantizedVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `scale * Σ values_i · v_i`, without materializing the dequantized row.
    pub fn dot(&self, v: &[f64]) -> f64 {
        let acc: f64 = self
            .values
            .iter()
            .zip(v)
            .map(|(&q, &x)| f64::from(q) * x)
            .sum();
        self.scale * acc
    }
}

pub fn quantize_int8(v: &[f64]) -> QuantizedVector {
    let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return QuantizedVector {
            scale: 0.0,
            values: vec![0; v.len()],
        };
    }
    let scale = max_abs / 127.0;
    let values = v
        .iter()
        // f64::round rounds half away from zero
        .map(|&x| (x / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantizedVector { scale, values }
}

pub fn dequantize(q: &QuantizedVector) -> Vec<f64> {
    q.values.iter().map(|&x| q.scale * f64::from(x)).collect()
}
