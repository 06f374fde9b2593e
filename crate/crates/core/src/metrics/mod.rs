//! Attack evaluation: ASR, confidence drop, query efficiency, FNR,
//! CodeBLEU and population diversity.

mod codebleu;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use codebleu::{
    bleu, bleu_weighted, codebleu, dataflow_edges, match_ast, match_df, subtree_hashes, CodeBleuScore, CodeBleuWeights, DefUseEdge,
    KEYWORD_WEIGHT, MAX_ORDER,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no attempted samples")]
    NoAttempts,
    #[error("mean query count must be positive")]
    ZeroQueries,
    #[error("population needs at least two members, got {0}")]
    PopulationTooSmall(usize),
    #[error("no attempted vulnerable samples")]
    NoVulnerableSamples,
    #[error("CodeBLEU weights {0:?} must be non-negative and sum to 1")]
    BadWeights([f64; 4]),
}

/// The per-sample facts the metrics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub true_label: u8,
    /// Already misclassified before any perturbation.
    pub skipped: bool,
    pub success: bool,
    pub p_orig: f64,
    pub p_adv: f64,
    pub queries: u64,
}

fn attempted(records: &[SampleRecord]) -> impl Iterator<Item = &SampleRecord> + '_ {
    records.iter().filter(|r| !r.skipped)
}

pub fn asr(records: &[SampleRecord]) -> Result<f64, MetricsError> {
    let (n, ok) = attempted(records).fold((0usize, 0usize), |(n, ok), r| (n + 1, ok + usize::from(r.success)));
    if n == 0 {
        return Err(MetricsError::NoAttempts);
    }
    Ok(100.0 * ok as f64 / n as f64)
}

/// Mean true-label confidence drop over every attempted sample.
pub fn delta_drop(records: &[SampleRecord]) -> Result<f64, MetricsError> {
    let drops: Vec<f64> = attempted(records).map(|r| r.p_orig - r.p_adv).collect();
    if drops.is_empty() {
        return Err(MetricsError::NoAttempts);
    }
    Ok(drops.iter().sum::<f64>() / drops.len() as f64)
}

pub fn mean_queries(records: &[SampleRecord]) -> Result<f64, MetricsError> {
    let q: Vec<u64> = attempted(records).map(|r| r.queries).collect();
    if q.is_empty() {
        return Err(MetricsError::NoAttempts);
    }
    Ok(q.iter().sum::<u64>() as f64 / q.len() as f64)
}

pub fn apq(asr_percent: f64, mean_queries: f64) -> Result<f64, MetricsError> {
    if !(mean_queries > 0.0) {
        return Err(MetricsError::ZeroQueries);
    }
    Ok(asr_percent / mean_queries)
}

/// Share of attempted vulnerable samples the victim calls safe after the attack.
pub fn fnr(records: &[SampleRecord]) -> Result<f64, MetricsError> {
    let vuln: Vec<&SampleRecord> = attempted(records).filter(|r| r.true_label == 1).collect();
    if vuln.is_empty() {
        return Err(MetricsError::NoVulnerableSamples);
    }
    let missed = vuln.iter().filter(|r| r.success).count();
    Ok(100.0 * missed as f64 / vuln.len() as f64)
}

/// Element-wise edit distance over name sequences divided by the longer length.
pub fn lev_norm(a: &[String], b: &[String]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    strsim::generic_levenshtein(&a.to_vec(), &b.to_vec()) as f64 / longest as f64
}

/// Mean pairwise normalized distance between substitution vectors, each
/// given as its chosen names (originals for kept slots).
pub fn cad(population: &[Vec<String>]) -> Result<f64, MetricsError> {
    mean_pairwise(population.len(), |i, j| lev_norm(&population[i], &population[j]))
}

/// Unnormalized character-level variant over rendered programs.
pub fn cad_chars(codes: &[String]) -> Result<f64, MetricsError> {
    mean_pairwise(codes.len(), |i, j| strsim::levenshtein(&codes[i], &codes[j]) as f64)
}

fn mean_pairwise(n: usize, dist: impl Fn(usize, usize) -> f64) -> Result<f64, MetricsError> {
    if n < 2 {
        return Err(MetricsError::PopulationTooSmall(n));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += dist(i, j);
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuSummary {
    pub total: f64,
    pub bleu: f64,
    pub bleu_w: f64,
    pub match_ast: f64,
    pub match_df: f64,
}

impl CodeBleuSummary {
    pub fn mean(scores: &[CodeBleuScore]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let m = |f: fn(&CodeBleuScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Some(Self { total: m(|s| s.total), bleu: m(|s| s.bleu), bleu_w: m(|s| s.bleu_w), match_ast: m(|s| s.match_ast), match_df: m(|s| s.match_df) })
    }
}

/// Aggregate metrics; fields are `None` when their denominator is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub attempted: usize,
    pub skipped: usize,
    pub successes: usize,
    pub asr_percent: Option<f64>,
    pub delta_drop_mean: Option<f64>,
    pub mean_queries: Option<f64>,
    pub apq: Option<f64>,
    pub fnr_percent: Option<f64>,
    /// Over successful samples only.
    pub codebleu_mean: Option<CodeBleuSummary>,
    pub cad: Option<f64>,
    pub cad_chars: Option<f64>,
    /// Final-population diversity per search strategy.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub diversity: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn build(records: &[SampleRecord], codebleu_scores: &[CodeBleuScore], cads: &[f64], cad_chars: &[f64]) -> Self {
        let asr_percent = asr(records).ok();
        let mq = mean_queries(records).ok();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            samples: records.len(),
            attempted: attempted(records).count(),
            skipped: records.iter().filter(|r| r.skipped).count(),
            successes: attempted(records).filter(|r| r.success).count(),
            asr_percent,
            delta_drop_mean: delta_drop(records).ok(),
            mean_queries: mq,
            apq: asr_percent.zip(mq).and_then(|(a, q)| apq(a, q).ok()),
            fnr_percent: fnr(records).ok(),
            codebleu_mean: CodeBleuSummary::mean(codebleu_scores),
            cad: mean(cads),
            cad_chars: mean(cad_chars),
            diversity: BTreeMap::new(),
        }
    }
}
