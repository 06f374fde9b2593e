//! Corpus ingestion, run configuration, batch attacks and reports.

mod compare;
mod run;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frontend::{parse_with_id, SourceUnit, DEFAULT_STEP_LIMIT};
use crate::lexicon::{parse_vocabulary, EmbeddingProvider, LexiconError, DEFAULT_K};
use crate::orchestrator::{AttackConfig, Channel, Lexicon, DEFAULT_BUDGET, DEFAULT_MAX_STRUCT_ITERS, DEFAULT_MAX_SWITCHES};
use crate::swarm::ScheduleParams;
use crate::transforms::{DEFAULT_LAMBDA, DEFAULT_SITE_CAP};
use crate::victims::VictimError;

pub use compare::{compare_search, run_one, CompareConfig, CompareReport, CompareRun, StrategySummary, TrajectoryRow};
pub use run::{
    emit_csv, emit_report, run_corpus, sweep_budget, sweep_lambda, RunReport, SampleRow, SweepPoint, SweepReport, DEFAULT_BUDGET_GRID,
    DEFAULT_LAMBDA_GRID,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("report serialization: {0}")]
    Serialize(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Every tunable of a batch run. Serialized verbatim into each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub schedule: ScheduleParams,
    pub lambda: f64,
    pub k: usize,
    pub site_cap: usize,
    pub budget: u64,
    pub seed: u64,
    pub max_struct_iters: usize,
    pub max_switches: usize,
    pub start_channel: Channel,
    pub victim: String,
    /// Vector file; the subword-hash embedding when absent.
    pub embeddings: Option<String>,
    /// One identifier per line; the bundled list when absent.
    pub vocab: Option<String>,
    pub jobs: usize,
    pub strict_inputs: bool,
    pub step_limit: u64,
    /// Adds elapsed seconds to the report, which breaks byte-identity.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleParams::default(),
            lambda: DEFAULT_LAMBDA,
            k: DEFAULT_K,
            site_cap: DEFAULT_SITE_CAP,
            budget: DEFAULT_BUDGET,
            seed: 0,
            max_struct_iters: DEFAULT_MAX_STRUCT_ITERS,
            max_switches: DEFAULT_MAX_SWITCHES,
            start_channel: Channel::Lexical,
            victim: "token-bag".into(),
            embeddings: None,
            vocab: None,
            jobs: 1,
            strict_inputs: false,
            step_limit: DEFAULT_STEP_LIMIT,
            record_timing: false,
        }
    }
}

impl RunConfig {
    /// Parses a JSON config, rejecting unknown keys, then validates it.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| PipelineError::Config("config must be a JSON object".into()))?;
        let known = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        let known = known.as_object().expect("object");
        if let Some(bad) = obj.keys().find(|k| !known.contains_key(*k)) {
            return Err(PipelineError::Config(format!("unknown key `{bad}`")));
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text)
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            lambda: self.lambda,
            schedule: self.schedule,
            k: self.k,
            site_cap: self.site_cap,
            budget: self.budget,
            seed: self.seed,
            max_struct_iters: self.max_struct_iters,
            max_switches: self.max_switches,
            start_channel: self.start_channel,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.attack_config().validate().map_err(PipelineError::Config)?;
        if self.jobs == 0 {
            return Err(PipelineError::Config("jobs must be at least 1".into()));
        }
        if self.step_limit == 0 {
            return Err(PipelineError::Config("step_limit must be positive".into()));
        }
        Ok(())
    }

    pub fn lexicon(&self) -> Result<Lexicon, PipelineError> {
        let vocabulary = match &self.vocab {
            Some(p) => {
                let path = Path::new(p);
                parse_vocabulary(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
            }
            None => crate::lexicon::bundled_vocabulary(),
        };
        if vocabulary.is_empty() {
            return Err(LexiconError::EmptyVocabulary.into());
        }
        let provider = match &self.embeddings {
            Some(p) => EmbeddingProvider::from_vector_file(Path::new(p))?,
            None => EmbeddingProvider::subword_hash(),
        };
        Ok(Lexicon { vocabulary, provider })
    }
}

/// One corpus line, as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    pub code: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Vec<i64>>>,
}

#[derive(Debug, Clone)]
pub struct CorpusTask {
    pub unit: SourceUnit,
    pub label: u8,
    pub inputs: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSkip {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub tasks: Vec<CorpusTask>,
    pub skipped: Vec<IngestSkip>,
}

/// Parses JSON Lines. Bad lines are collected with a reason; a repeated id
/// is fatal.
pub fn ingest_str(text: &str) -> Result<Corpus, PipelineError> {
    let mut corpus = Corpus::default();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|x| x.as_str()).map(str::to_string));
                corpus.skipped.push(IngestSkip { line: line_no, id, reason: format!("schema: {e}") });
                continue;
            }
        };
        if !seen.insert(entry.id.clone()) {
            return Err(PipelineError::DuplicateId(entry.id));
        }
        if entry.label > 1 {
            corpus.skipped.push(IngestSkip { line: line_no, id: Some(entry.id), reason: format!("schema: label {} is not 0 or 1", entry.label) });
            continue;
        }
        match parse_with_id(&entry.id, &entry.code) {
            Ok(unit) => corpus.tasks.push(CorpusTask { unit, label: entry.label, inputs: entry.inputs.unwrap_or_default() }),
            Err(e) => corpus.skipped.push(IngestSkip { line: line_no, id: Some(entry.id), reason: format!("syntax: {e}") }),
        }
    }
    Ok(corpus)
}

pub fn ingest(path: &Path) -> Result<Corpus, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ingest_str(&text)
}

/// The bundled mini-C corpus.
pub fn bundled_corpus() -> Corpus {
    ingest_str(include_str!("../../data/corpus.jsonl")).expect("bundled corpus has unique ids")
}
