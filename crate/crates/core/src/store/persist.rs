//! Index file layout:
//!
//! ```text
//! "CCOA" | version u8 (0x01) | header_len u32 LE | header JSON (UTF-8)
//! | vector block | CRC32 u32 LE of every preceding byte
//! ```
//!
//! The vector block is row-major little-endian `f32`; quantized indexes store
//! per row one `f32` scale followed by `dim` `i8` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::QuantizedVector;
use crate::error::{Error, Result};
use crate::hopfield::{MemoryBank, Patterns};
use crate::store::{Chunk, Index};

pub const MAGIC: &[u8; 4] = b"CCOA";
pub const FORMAT_VERSION: u8 = 0x01;

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    provider: String,
    quantized: bool,
    chunk_count: usize,
    chunks: Vec<ChunkEntry>,
}

#[derive(Serialize, Deserialize)]
struct ChunkEntry {
    id: String,
    doc_id: String,
    span: [usize; 2],
    text: String,
}

/// Serializes `index` to bytes.
pub fn write_index(index: &Index) -> Result<Vec<u8>> {
    let header = Header {
        dim: index.dim(),
        provider: index.provider().to_owned(),
        quantized: index.is_quantized(),
        chunk_count: index.len(),
        chunks: index
            .chunks()
            .iter()
            .map(|c| ChunkEntry {
                id: c.id.clone(),
                doc_id: c.doc_id.clone(),
                span: [c.span.0, c.span.1],
                text: c.text.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header_json.len())
        .map_err(|_| Error::InvalidValue("index header exceeds 4 GiB".into()))?;

    let mut out = Vec::with_capacity(9 + header_json.len() + vector_block_len(index) + 4);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header_json);
    match index.bank().patterns() {
        Patterns::Dense(flat) => {
            for &x in flat {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Patterns::Int8 { scales, values } => {
            for (scale, row) in scales.iter().zip(values.chunks(index.dim())) {
                out.extend_from_slice(&(*scale as f32).to_le_bytes());
                out.extend(row.iter().map(|&v| v as u8));
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Size in bytes of the vector block `write_index` emits for `index`.
pub fn vector_block_len(index: &Index) -> usize {
    let n = index.len();
    if index.is_quantized() {
        n * (4 + index.dim())
    } else {
        n * index.dim() * 4
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptIndex(msg.into())
}

pub fn read_index(bytes: &[u8]) -> Result<Index> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing CCOA magic"));
    }
    let version = *bytes.get(4).ok_or_else(|| corrupt("truncated before version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedIndexVersion(version));
    }
    if bytes.len() < 9 + 4 {
        return Err(corrupt("truncated header"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored_crc {
        return Err(corrupt("checksum mismatch"));
    }

    let header_len = u32::from_le_bytes(body[5..9].try_into().expect("4 bytes")) as usize;
    let header_end = 9usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[9..header_end])
        .map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.chunk_count != header.chunks.len() {
        return Err(corrupt(format!(
            "chunk_count {} but {} chunk entries",
            header.chunk_count,
            header.chunks.len()
        )));
    }
    if header.dim == 0 || header.chunk_count == 0 {
        return Err(corrupt("empty index"));
    }

    let block = &body[header_end..];
    let (n, dim) = (header.chunk_count, header.dim);
    let expected = if header.quantized {
        n * (4 + dim)
    } else {
        n * dim * 4
    };
    if block.len() != expected {
        return Err(corrupt(format!(
            "vector block is {} bytes, expected {expected}",
            block.len()
        )));
    }

    let ids: Vec<String> = header.chunks.iter().map(|c| c.id.clone()).collect();
    let bank = if header.quantized {
        let rows = block
            .chunks_exact(4 + dim)
            .map(|row| QuantizedVector {
                scale: f64::from(f32::from_le_bytes(row[..4].try_into().expect("4 bytes"))),
                values: row[4..].iter().map(|&b| b as i8).collect(),
            })
            .collect();
        MemoryBank::quantized(ids, rows)
    } else {
        let rows = block
            .chunks_exact(dim * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                    .collect()
            })
            .collect();
        MemoryBank::new(ids, rows)
    }
    .map_err(|e| corrupt(e.to_string()))?;

    let chunks = header
        .chunks
        .into_iter()
        .map(|c| Chunk {
            id: c.id,
            doc_id: c.doc_id,
            span: (c.span[0], c.span[1]),
            text: c.text,
        })
        .collect();
    Index::from_parts(dim, header.provider, chunks, bank)
}

pub fn save_index(index: &Index, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_index(index)?)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Index> {
    read_index(&fs::read(path)?)
}
