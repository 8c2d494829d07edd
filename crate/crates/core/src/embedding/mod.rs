//! Text embedding providers and int8 vector quantization.
//!
//! Every provider has a fixed output dimension and is deterministic for a
//! given text. [`HashEmbedder`] is the offline default; [`RemoteEmbedder`]
//! talks to an HTTP embedding service.

mod hash;
mod quantize;
mod remote;

pub use hash::{hash_embed, HashEmbedder};
pub use quantize::{dequantize, quantize_int8, QuantizedVector};
pub use remote::{remote_embed, RemoteEmbedder};

use crate::error::Result;

pub trait EmbeddingProvider: Send + Sync {
    /// Identifier recorded in indexes; two providers with the same name must
    /// produce the same vectors.
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}
