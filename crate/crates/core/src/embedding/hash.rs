use crate::embedding::EmbeddingProvider;
use crate::error::Result;
use crate::text;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn feature_hash(feature: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for b in feature.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// Signed feature hashing of token unigrams and bigrams, L2-normalized.
///
/// Text with no tokens (or whose features cancel exactly) maps to `e1`.
/// `dim` is clamped to at least 8.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let dim = dim.max(8);
    let tokens = text::tokens(text);
    let mut v = vec![0.0f64; dim];
    let mut add = |feature: &str| {
        let h = feature_hash(feature, seed);
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    };
    for t in &tokens {
        add(t);
    }
    for pair in tokens.windows(2) {
        add(&format!("{}\u{1f}{}", pair[0], pair[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Deterministic offline embedder built on [`hash_embed`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    name: String,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let dim = dim.max(8);
        Self {
            dim,
            seed,
            name: format!("hash:seed={seed}"),
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(hash_embed(text, self.dim, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cosine_similarity, l2_norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic() {
        assert_eq!(hash_embed("abc", 64, 7), hash_embed("abc", 64, 7));
        assert_ne!(hash_embed("abc", 64, 7), hash_embed("abc", 64, 8));
    }

    #[test]
    fn unit_norm() {
        for text in ["a", "alpha beta gamma", "The quick brown fox!", "x y x y x y"] {
            assert!((l2_norm(&hash_embed(text, 64, 1)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_stream_is_e1() {
        for text in ["", "   ", "?!."] {
            let v = hash_embed(text, 16, 3);
            assert_eq!(v[0], 1.0);
            assert!(v[1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn punctuation_and_case_do_not_matter() {
        assert_eq!(hash_embed("Alpha, BETA!", 32, 0), hash_embed("alpha beta", 32, 0));
    }

    #[test]
    fn random_word_pairs_rarely_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let word = |rng: &mut ChaCha8Rng| -> String {
            (0..rng.random_range(3..9))
                .map(|_| rng.random_range(b'a'..=b'z') as char)
                .collect()
        };
        let base = hash_embed("alpha beta", 256, 0);
        assert_eq!(cosine_similarity(&base, &base).unwrap(), 1.0);
        let mut collisions = 0;
        for _ in 0..1000 {
            let text = format!("{} {}", word(&mut rng), word(&mut rng));
            if text == "alpha beta" {
                continue;
            }
            let c = cosine_similarity(&base, &hash_embed(&text, 256, 0)).unwrap();
            if c > 1.0 - 1e-9 {
                collisions += 1;
            }
        }
        assert!(collisions < 10, "{collisions} collisions");
    }
}
