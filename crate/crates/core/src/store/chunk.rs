use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
}

/// A whitespace-token window of a document. `span` is `[start, end)` in
/// token offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub span: (usize, usize),
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            size: 256,
            overlap: 32,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidConfig {
                code: "INVALID_CHUNK_SIZE",
                message: "chunk size must be at least 1".into(),
            });
        }
        if self.overlap >= self.size {
            return Err(Error::InvalidConfig {
                code: "INVALID_OVERLAP",
                message: format!(
                    "overlap {} must be smaller than chunk size {}",
                    self.overlap, self.size
                ),
            });
        }
        Ok(())
    }
}

/// Windows of `size` tokens advancing by `size - overlap`; the last window
/// may be shorter. Chunk ids are `<doc_id>#<n>`.
pub fn chunk_document(doc: &Document, config: ChunkConfig) -> Result<Vec<Chunk>> {
    config.validate()?;
    let tokens: Vec<&str> = doc.text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    let stride = config.size - config.overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + config.size).min(tokens.len());
        chunks.push(Chunk {
            id: format!("{}#{}", doc.id, chunks.len()),
            doc_id: doc.id.clone(),
            span: (start, end),
            text: tokens[start..end].join(" "),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(n: usize) -> Document {
        Document {
            id: "d".into(),
            title: String::new(),
            text: (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" "),
            source: String::new(),
        }
    }

    #[test]
    fn stride_arithmetic() {
        let spans: Vec<_> = chunk_document(&doc(600), ChunkConfig::default())
            .unwrap()
            .into_iter()
            .map(|c| c.span)
            .collect();
        assert_eq!(spans, vec![(0, 256), (224, 480), (448, 600)]);
    }

    #[test]
    fn short_document_is_one_chunk() {
        let chunks = chunk_document(&doc(100), ChunkConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].span, (0, 100));
        assert_eq!(chunks[0].id, "d#0");
    }

    #[test]
    fn rejects_bad_config_and_empty_text() {
        let bad = ChunkConfig { size: 10, overlap: 10 };
        assert!(matches!(
            chunk_document(&doc(5), bad),
            Err(Error::InvalidConfig { code: "INVALID_OVERLAP", .. })
        ));
        let mut empty = doc(0);
        empty.text = "   ".into();
        assert!(matches!(
            chunk_document(&empty, ChunkConfig::default()),
            Err(Error::EmptyDocument(_))
        ));
    }

    proptest! {
        #[test]
        fn non_overlapped_parts_reconstruct_tokens(n in 1usize..400, size in 1usize..50, overlap_frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            let overlap = overlap.min(size - 1);
            let d = doc(n);
            let chunks = chunk_document(&d, ChunkConfig { size, overlap }).unwrap();
            let mut rebuilt: Vec<String> = Vec::new();
            let mut covered = 0;
            for c in &chunks {
                prop_assert!(c.span.0 < c.span.1);
                let toks: Vec<&str> = c.text.split(' ').collect();
                prop_assert_eq!(toks.len(), c.span.1 - c.span.0);
                let skip = covered - c.span.0;
                rebuilt.extend(toks[skip..].iter().map(|s| s.to_string()));
                covered = c.span.1;
            }
            let original: Vec<String> = d.text.split(' ').map(str::to_owned).collect();
            prop_assert_eq!(rebuilt, original);
        }
    }
}
