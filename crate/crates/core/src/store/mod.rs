//! Knowledge store: chunking, embedding, index persistence and search.

mod chunk;
mod persist;

pub use chunk::{chunk_document, Chunk, ChunkConfig, Document};
pub use persist::{
    load_index, read_index, save_index, vector_block_len, write_index, FORMAT_VERSION, MAGIC,
};

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;

use crate::embedding::{quantize_int8, EmbeddingProvider, QuantizedVector};
use crate::error::{Error, Result};
use crate::hopfield::{segmented_retrieve, HopfieldProjections, MemoryBank};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndexConfig {
    pub chunking: ChunkConfig,
    pub quantized: bool,
}

/// Chunks plus the memory bank over their embeddings (row `i` ↔ chunk `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    provider: String,
    chunks: Vec<Chunk>,
    bank: MemoryBank,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub chunk_id: String,
    pub score: f64,
    pub text: String,
    pub rank: usize,
}

/// Rounds through `f32` so in-memory rows equal what the index file stores.
fn storage_precision(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x as f32)).collect()
}

fn quantize_for_storage(v: &[f64]) -> QuantizedVector {
    let mut q = quantize_int8(v);
    q.scale = f64::from(q.scale as f32);
    q
}

impl Index {
    pub(crate) fn from_parts(
        dim: usize,
        provider: String,
        chunks: Vec<Chunk>,
        bank: MemoryBank,
    ) -> Result<Self> {
        if chunks.len() != bank.len() {
            return Err(Error::CorruptIndex(format!(
                "{} chunks for {} vectors",
                chunks.len(),
                bank.len()
            )));
        }
        if bank.dim() != dim {
            return Err(Error::CorruptIndex(format!(
                "declared dim {dim}, vectors have dim {}",
                bank.dim()
            )));
        }
        Ok(Self {
            dim,
            provider,
            chunks,
            bank,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn is_quantized(&self) -> bool {
        self.bank.is_quantized()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.bank.row_of(id).map(|row| &self.chunks[row])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_index(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_index(path)
    }
}

/// Chunks every document, embeds the chunks and builds the bank
/// (int8-quantized when `config.quantized`).
pub fn build_index(
    docs: &[Document],
    provider: &dyn EmbeddingProvider,
    config: IndexConfig,
) -> Result<Index> {
    config.chunking.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    let mut chunks = Vec::new();
    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(Error::DuplicateId(doc.id.clone()));
        }
        chunks.extend(chunk_document(doc, config.chunking)?);
    }
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = provider.embed_batch(&texts)?;
    if vectors.len() != chunks.len() {
        return Err(Error::ProviderContractViolation(format!(
            "{} embeddings for {} chunks",
            vectors.len(),
            chunks.len()
        )));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != provider.dim()) {
        return Err(Error::ProviderContractViolation(format!(
            "expected dim {}, got {}",
            provider.dim(),
            v.len()
        )));
    }
    let ids: Vec<String> = chunks.iter().map(|c| c.id.clone()).collect();
    let bank = if config.quantized {
        MemoryBank::quantized(ids, vectors.iter().map(|v| quantize_for_storage(v)).collect())?
    } else {
        MemoryBank::new(ids, vectors.iter().map(|v| storage_precision(v)).collect())?
    };
    Index::from_parts(provider.dim(), provider.name().to_owned(), chunks, bank)
}

/// Embeds `query_text` and runs segmented retrieval. `segments` is clamped
/// to the number of chunks.
pub fn search(
    index: &Index,
    query_text: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
    proj: &HopfieldProjections,
    segments: usize,
) -> Result<Vec<RetrievalResult>> {
    if provider.name() != index.provider() {
        return Err(Error::IndexProviderMismatch {
            index: index.provider().to_owned(),
            query: provider.name().to_owned(),
        });
    }
    if index.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let query = provider.embed(query_text)?;
    search_vector(index, &query, k, proj, segments)
}

/// [`search`] with an already-embedded query.
pub fn search_vector(
    index: &Index,
    query: &[f64],
    k: usize,
    proj: &HopfieldProjections,
    segments: usize,
) -> Result<Vec<RetrievalResult>> {
    let segments = segments.clamp(1, index.len().max(1));
    let hits = segmented_retrieve(query, &index.bank, proj, segments, k)?;
    Ok(hits
        .into_iter()
        .map(|h| RetrievalResult {
            chunk_id: h.id,
            score: h.score,
            text: index.chunks[h.row].text.clone(),
            rank: h.rank,
        })
        .collect())
}
