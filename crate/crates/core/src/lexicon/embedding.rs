use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::LexiconError;
use crate::victims::fnv1a64;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 0x5eed_0f_c0de;
const BUCKETS: u64 = 2_000_003;
const MIN_N: usize = 3;
const MAX_N: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmbeddingProvider {
    /// Sum of hashed character 3–5-gram vectors of `<word>`, unit-normalized.
    SubwordHash { dim: usize, seed: u64 },
    /// Vectors read from a text file; missing words fall back to subword hashing.
    VectorFile { dim: usize, vectors: HashMap<String, Vec<f64>>, seed: u64 },
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn subword_vector(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let chars: Vec<char> = format!("<{word}>").chars().collect();
    let mut v = vec![0.0; dim];
    for n in MIN_N..=MAX_N {
        for gram in chars.windows(n) {
            let text: String = gram.iter().collect();
            let bucket = fnv1a64(text.as_bytes()) % BUCKETS;
            let mut state = bucket ^ seed;
            for x in v.iter_mut() {
                // uniform in [-1, 1)
                *x += (splitmix64(&mut state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl EmbeddingProvider {
    pub fn subword_hash() -> Self {
        EmbeddingProvider::SubwordHash { dim: DEFAULT_DIM, seed: DEFAULT_SEED }
    }

    /// Parses `count dim` followed by `word f1 … fd` lines.
    pub fn from_vector_text(text: &str) -> Result<Self, LexiconError> {
        let bad = |m: String| LexiconError::BadVectorFile(m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut h = header.split_whitespace();
        let (Some(_count), Some(dim), None) = (h.next(), h.next(), h.next()) else {
            return Err(bad(format!("bad header `{header}`")));
        };
        let dim: usize = dim.parse().map_err(|_| bad(format!("bad dimension `{dim}`")))?;
        if dim == 0 {
            return Err(bad("dimension must be positive".into()));
        }
        let mut vectors = HashMap::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("nonblank line");
            let vals: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
            if vals.len() != dim {
                return Err(bad(format!("line {}: expected {dim} values, got {}", i + 2, vals.len())));
            }
            vectors.insert(word.to_string(), vals);
        }
        Ok(EmbeddingProvider::VectorFile { dim, vectors, seed: DEFAULT_SEED })
    }

    pub fn from_vector_file(path: &std::path::Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|e| LexiconError::BadVectorFile(format!("{}: {e}", path.display())))?;
        Self::from_vector_text(&text)
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::SubwordHash { dim, .. } | EmbeddingProvider::VectorFile { dim, .. } => *dim,
        }
    }

    pub fn embed(&self, word: &str) -> Vec<f64> {
        match self {
            EmbeddingProvider::SubwordHash { dim, seed } => subword_vector(word, *dim, *seed),
            EmbeddingProvider::VectorFile { dim, vectors, seed } => {
                vectors.get(word).cloned().unwrap_or_else(|| subword_vector(word, *dim, *seed))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_deterministic() {
        let p = EmbeddingProvider::subword_hash();
        let a = p.embed("total_read");
        assert_eq!(a.len(), DEFAULT_DIM);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(a, p.embed("total_read"));
        assert!(p.embed("").iter().all(|x| *x == 0.0));
    }

    #[test]
    fn vector_file_errors() {
        assert!(EmbeddingProvider::from_vector_text("").is_err());
        assert!(EmbeddingProvider::from_vector_text("1 2\nx 1\n").is_err());
        assert!(EmbeddingProvider::from_vector_text("1 2\nx 1 q\n").is_err());
        let p = EmbeddingProvider::from_vector_text("1 2\nx 0.5 0.5\n").unwrap();
        assert_eq!(p.embed("x"), vec![0.5, 0.5]);
        assert_eq!(p.embed("unknown").len(), 2);
    }
}
