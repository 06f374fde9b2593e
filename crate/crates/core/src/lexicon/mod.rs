//! Identifier embeddings, substitute pools and capture-avoiding renaming.

mod embedding;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::frontend::lexer::{is_legal_identifier, is_type_name};
use crate::frontend::{parse_with_id, SourceUnit};

pub use embedding::{EmbeddingProvider, DEFAULT_DIM, DEFAULT_SEED};

pub const DEFAULT_K: usize = 30;

const BUNDLED_VOCAB: &str = include_str!("../../data/vocab.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LexiconError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("`{0}` is not a renameable identifier of the unit")]
    NotRenameable(String),
    #[error("renaming `{0}` to `{1}` would capture another name")]
    CaptureCollision(String, String),
    #[error("`{0}` is not a legal identifier")]
    IllegalIdentifier(String),
    #[error("renamed program does not reparse: {0}")]
    Reparse(String),
    #[error("vector file: {0}")]
    BadVectorFile(String),
    #[error("k must be at least 1")]
    BadK,
}

/// `1 − cos(embed(a), embed(b))`, in `[0, 2]`. Zero vectors count as cos 0.
pub fn similarity(a: &str, b: &str, provider: &EmbeddingProvider) -> f64 {
    if a == b {
        return 0.0;
    }
    distance(&provider.embed(a), &provider.embed(b))
}

pub(crate) fn distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = if nu == 0.0 || nv == 0.0 { 0.0 } else { dot / (nu * nv) };
    (1.0 - cos).clamp(0.0, 2.0)
}

/// Ranked substitutes for every renameable identifier of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub k: usize,
    /// Dimension order: the unit's identifiers in first-occurrence order.
    pub identifiers: Vec<String>,
    /// Per dimension, the whole filtered vocabulary sorted by
    /// (distance, name); the first `k` entries are the top-k substitutes.
    pub candidates: Vec<Vec<(String, f64)>>,
}

impl CandidatePool {
    pub fn dims(&self) -> usize {
        self.identifiers.len()
    }

    /// Number of candidates for dimension `d` (legal positions are `0..=len`).
    pub fn len(&self, d: usize) -> usize {
        self.candidates[d].len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.iter().all(Vec::is_empty)
    }

    pub fn top_k(&self, d: usize) -> &[(String, f64)] {
        let c = &self.candidates[d];
        &c[..self.k.min(c.len())]
    }

    /// Name chosen by position value `j` in dimension `d` (0 keeps the original).
    pub fn name_at(&self, d: usize, j: usize) -> &str {
        if j == 0 {
            &self.identifiers[d]
        } else {
            &self.candidates[d][j - 1].0
        }
    }

    /// Position value selecting `name` in dimension `d`, if it is a candidate.
    pub fn index_of(&self, d: usize, name: &str) -> Option<usize> {
        if name == self.identifiers[d] {
            return Some(0);
        }
        self.candidates[d].iter().position(|(n, _)| n == name).map(|i| i + 1)
    }

    /// Substitution map for a position vector, omitting kept slots.
    pub fn substitution(&self, position: &[usize]) -> BTreeMap<String, String> {
        position
            .iter()
            .enumerate()
            .filter(|(_, j)| **j > 0)
            .map(|(d, j)| (self.identifiers[d].clone(), self.name_at(d, *j).to_string()))
            .collect()
    }

    /// Chosen names per slot, originals for kept slots.
    pub fn names(&self, position: &[usize]) -> Vec<String> {
        position.iter().enumerate().map(|(d, j)| self.name_at(d, *j).to_string()).collect()
    }
}

/// Candidate pool for `unit`: every vocabulary word that is a legal,
/// unused identifier, ranked per dimension by similarity.
pub fn build_pool(
    unit: &SourceUnit,
    vocabulary: &[String],
    provider: &EmbeddingProvider,
    k: usize,
) -> Result<CandidatePool, LexiconError> {
    if k == 0 {
        return Err(LexiconError::BadK);
    }
    if vocabulary.is_empty() {
        return Err(LexiconError::EmptyVocabulary);
    }
    let used = unit.all_identifier_texts();
    let legal: BTreeSet<&str> = vocabulary
        .iter()
        .map(String::as_str)
        .filter(|w| is_legal_identifier(w) && !is_type_name(w) && !used.contains(w))
        .collect();
    let embedded: Vec<(&str, Vec<f64>)> = legal.iter().map(|w| (*w, provider.embed(w))).collect();
    let candidates = unit
        .identifiers
        .iter()
        .map(|id| {
            let e = provider.embed(id);
            let mut ranked: Vec<(String, f64)> =
                embedded.iter().map(|(w, v)| (w.to_string(), distance(&e, v))).collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            ranked
        })
        .collect();
    Ok(CandidatePool { k, identifiers: unit.identifiers.clone(), candidates })
}

/// Renames variables by splicing the source text at token offsets, so
/// formatting survives and the inverse map restores the token stream.
pub fn rename(unit: &SourceUnit, substitution: &BTreeMap<String, String>) -> Result<SourceUnit, LexiconError> {
    let active: BTreeMap<&str, &str> =
        substitution.iter().filter(|(k, v)| k != v).map(|(k, v)| (k.as_str(), v.as_str())).collect();
    if active.is_empty() {
        for k in substitution.keys() {
            if !unit.identifiers.contains(k) {
                return Err(LexiconError::NotRenameable(k.clone()));
            }
        }
        return Ok(unit.clone());
    }
    let used = unit.all_identifier_texts();
    let mut targets = BTreeSet::new();
    for (from, to) in &active {
        if !unit.identifiers.iter().any(|i| i == from) {
            return Err(LexiconError::NotRenameable(from.to_string()));
        }
        if !is_legal_identifier(to) || is_type_name(to) {
            return Err(LexiconError::IllegalIdentifier(to.to_string()));
        }
        if used.contains(to) || !targets.insert(*to) {
            return Err(LexiconError::CaptureCollision(from.to_string(), to.to_string()));
        }
    }
    let src = &unit.source_text;
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0;
    for (i, t) in unit.tokens.iter().enumerate() {
        let Some(to) = active.get(t.text.as_str()) else { continue };
        if !unit.is_variable_token(i) {
            continue;
        }
        out.push_str(&src[cursor..t.offset]);
        out.push_str(to);
        cursor = t.offset + t.text.len();
    }
    out.push_str(&src[cursor..]);
    parse_with_id(&unit.unit_id, &out).map_err(|e| LexiconError::Reparse(e.to_string()))
}

/// Identifiers from a newline-separated list; blank lines and `#` comments
/// are skipped, illegal names dropped.
pub fn parse_vocabulary(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && is_legal_identifier(l))
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect()
}

pub fn bundled_vocabulary() -> Vec<String> {
    parse_vocabulary(BUNDLED_VOCAB)
}

/// Union of renameable identifiers across `units`, sorted.
pub fn harvest_vocabulary<'a>(units: impl IntoIterator<Item = &'a SourceUnit>) -> Vec<String> {
    let set: BTreeSet<&str> = units.into_iter().flat_map(|u| u.identifiers.iter().map(String::as_str)).collect();
    set.into_iter().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{interpret, parse, InterpOptions};

    const SEQ: &str = "ssize_t seq_read_iter(struct kiocb *iocb, struct iov_iter *iter) {\n    struct seq_file *m = file->private_data;\n    size_t copied = 0;\n    size_t n;\n    // some codes\n    while (1) {\n        // some codes\n    }\n    return copied;\n}\n";

    fn sub(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn similarity_identities() {
        let p = EmbeddingProvider::subword_hash();
        assert_eq!(similarity("copied", "copied", &p), 0.0);
        let ab = similarity("copied", "total_read", &p);
        assert_eq!(ab, similarity("total_read", "copied", &p));
        assert!((0.0..=2.0).contains(&ab));
        let file = EmbeddingProvider::from_vector_text("3 2\nx 1 0\ny 0 1\nz -1 0\n").unwrap();
        assert!((similarity("x", "y", &file) - 1.0).abs() < 1e-12);
        assert!((similarity("x", "z", &file) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pool_excludes_self_and_used_names() {
        let u = parse("int f(int x){int y = x; return g(y);}").unwrap();
        let p = EmbeddingProvider::subword_hash();
        let vocab: Vec<String> = ["x", "y", "g", "while", "size_t", "zz", "9a"].iter().map(|s| s.to_string()).collect();
        let pool = build_pool(&u, &vocab, &p, 30).unwrap();
        assert_eq!(pool.identifiers, ["x", "y"]);
        assert_eq!(pool.candidates[0].iter().map(|c| c.0.as_str()).collect::<Vec<_>>(), ["zz"]);
        let only_x = build_pool(&u, &["x".to_string()], &p, 30).unwrap();
        assert!(only_x.candidates[0].is_empty());
        assert_eq!(build_pool(&u, &[], &p, 3), Err(LexiconError::EmptyVocabulary));
    }

    #[test]
    fn pool_ranking_by_distance_then_name() {
        let u = parse(SEQ).unwrap();
        let p = EmbeddingProvider::subword_hash();
        let vocab: Vec<String> = ["total_read", "read_bytes", "copied_len"].iter().map(|s| s.to_string()).collect();
        let pool = build_pool(&u, &vocab, &p, 30).unwrap();
        let d = pool.identifiers.iter().position(|i| i == "copied").unwrap();
        let ranked = &pool.candidates[d];
        let mut expect: Vec<(String, f64)> = vocab.iter().map(|w| (w.clone(), similarity("copied", w, &p))).collect();
        expect.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        assert_eq!(ranked, &expect);
        // shares the most character n-grams
        assert_eq!(ranked[0].0, "copied_len");
        assert_eq!(pool.top_k(d).len(), 3);
    }

    #[test]
    fn rename_matches_listing() {
        let u = parse(SEQ).unwrap();
        let r = rename(&u, &sub(&[("copied", "total_read")])).unwrap();
        assert!(r.source_text.contains("size_t total_read = 0;"));
        assert!(r.source_text.contains("return total_read;"));
        assert!(r.source_text.contains("// some codes"));
        assert_eq!(r.identifiers, ["iocb", "iter", "m", "total_read", "n"]);
        let back = rename(&r, &sub(&[("total_read", "copied")])).unwrap();
        assert_eq!(back.tokens, u.tokens);
    }

    #[test]
    fn rename_rejections() {
        let u = parse("int f(int a, int c){int b = a; return b + c + g();}").unwrap();
        assert_eq!(rename(&u, &BTreeMap::new()).unwrap(), u);
        assert!(matches!(rename(&u, &sub(&[("a", "z"), ("c", "z")])), Err(LexiconError::CaptureCollision(..))));
        assert!(matches!(rename(&u, &sub(&[("a", "b")])), Err(LexiconError::CaptureCollision(..))));
        assert!(matches!(rename(&u, &sub(&[("a", "g")])), Err(LexiconError::CaptureCollision(..))));
        assert!(matches!(rename(&u, &sub(&[("a", "while")])), Err(LexiconError::IllegalIdentifier(_))));
        assert!(matches!(rename(&u, &sub(&[("g", "h")])), Err(LexiconError::NotRenameable(_))));
    }

    #[test]
    fn rename_preserves_fields_and_semantics() {
        let u = parse("int f(int n){int s = 0; int i; for(i=0;i<n;i++){s += i * i;} print(s); return s - n;}").unwrap();
        let r = rename(&u, &sub(&[("s", "acc"), ("i", "idx"), ("n", "count")])).unwrap();
        for inp in [[0], [3], [10]] {
            let a = interpret(&u.ast, &inp, InterpOptions::with_limit(10_000)).unwrap();
            let b = interpret(&r.ast, &inp, InterpOptions::with_limit(10_000)).unwrap();
            assert!(a.same_behavior(&b));
        }
        let u = parse(SEQ).unwrap();
        let r = rename(&u, &sub(&[("m", "private_data")]));
        assert!(matches!(r, Err(LexiconError::CaptureCollision(..))));
    }

    #[test]
    fn bundled_vocab_is_nonempty_and_legal() {
        let v = bundled_vocabulary();
        assert!(v.len() > 50);
        assert!(v.iter().all(|w| is_legal_identifier(w)));
        assert!(v.iter().any(|w| w == "total_read"));
    }
}
