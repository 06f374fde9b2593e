use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_err, Corpus, CorpusTask, IngestSkip, PipelineError, RunConfig};
use crate::frontend::{interpret, parse_with_id, InterpOptions};
use crate::metrics::{codebleu, CodeBleuScore, CodeBleuWeights, MetricsReport};
use crate::orchestrator::{attack, AttackError, AttackOutcome, AttackTask, Lexicon};
use crate::victims::VictimSpec;

pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1.0, 1.2, 1.5, 1.8, 2.0, 2.5, 3.0];
pub const DEFAULT_BUDGET_GRID: [u64; 3] = [5000, 10000, 30000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    #[serde(flatten)]
    pub outcome: AttackOutcome,
    /// Trace equality over the sample's inputs; absent for opaque units.
    pub semantics_preserved: Option<bool>,
    /// Adversarial against original, for successful samples.
    pub codebleu: Option<CodeBleuScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub victim: String,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_secs: Option<f64>,
    pub ingest_skipped: Vec<IngestSkip>,
    pub metrics: MetricsReport,
    pub samples: Vec<SampleRow>,
}

fn semantics_preserved(task: &CorpusTask, adversarial: &str, cfg: &RunConfig) -> Option<bool> {
    if task.inputs.is_empty() || !task.unit.is_executable() {
        return None;
    }
    let adv = parse_with_id(&task.unit.unit_id, adversarial).ok()?;
    let opts = InterpOptions { step_limit: cfg.step_limit, strict_inputs: cfg.strict_inputs };
    let same = task.inputs.iter().all(|inputs| match (interpret(&task.unit.ast, inputs, opts), interpret(&adv.ast, inputs, opts)) {
        (Ok(a), Ok(b)) => a.same_behavior(&b),
        _ => false,
    });
    Some(same)
}

fn attack_one(task: &CorpusTask, cfg: &RunConfig, spec: &VictimSpec, lexicon: &Lexicon) -> Result<SampleRow, PipelineError> {
    let attack_cfg = cfg.attack_config();
    let mut victim = spec.connect()?;
    let t = AttackTask { unit: task.unit.clone(), true_label: task.label, config: &attack_cfg, lexicon };
    let outcome = attack(&t, &mut victim).map_err(|e| match e {
        AttackError::Victim(v) => PipelineError::Victim(v),
        AttackError::Config(c) => PipelineError::Config(c),
    })?;
    let semantics = if outcome.skipped { None } else { semantics_preserved(task, &outcome.adversarial_code, cfg) };
    let bleu = if outcome.success {
        parse_with_id(&task.unit.unit_id, &outcome.adversarial_code)
            .ok()
            .and_then(|adv| codebleu(&task.unit, &adv, &CodeBleuWeights::default()).ok())
    } else {
        None
    };
    Ok(SampleRow { outcome, semantics_preserved: semantics, codebleu: bleu })
}

/// Attacks every task; rows come back ordered by sample id whatever
/// `cfg.jobs` is.
pub fn run_corpus(corpus: &Corpus, cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let spec = VictimSpec::parse(&cfg.victim)?;
    let lexicon = cfg.lexicon()?;
    let started = Instant::now();
    let mut rows: Vec<SampleRow> = if cfg.jobs == 1 {
        corpus.tasks.iter().map(|t| attack_one(t, cfg, &spec, &lexicon)).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| PipelineError::Config(e.to_string()))?;
        pool.install(|| corpus.tasks.par_iter().map(|t| attack_one(t, cfg, &spec, &lexicon)).collect::<Result<_, _>>())?
    };
    rows.sort_by(|a, b| a.outcome.id.cmp(&b.outcome.id));

    let records: Vec<_> = rows.iter().map(|r| r.outcome.record()).collect();
    let bleus: Vec<CodeBleuScore> = rows.iter().filter_map(|r| r.codebleu).collect();
    let attempted = rows.iter().filter(|r| !r.outcome.skipped);
    let cads: Vec<f64> = attempted.clone().filter_map(|r| r.outcome.cad).collect();
    let cad_chars: Vec<f64> = attempted.filter_map(|r| r.outcome.cad_chars).collect();
    let metrics = MetricsReport::build(&records, &bleus, &cads, &cad_chars);
    Ok(RunReport {
        tool: "hogforge".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        victim: spec.to_string(),
        config: cfg.clone(),
        wall_clock_secs: cfg.record_timing.then(|| started.elapsed().as_secs_f64()),
        ingest_skipped: corpus.skipped.clone(),
        metrics,
        samples: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// The swept value (λ or budget).
    pub value: f64,
    pub attempted: usize,
    pub asr_percent: Option<f64>,
    pub mean_queries: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: String,
    pub table: Vec<SweepPoint>,
    pub reports: Vec<RunReport>,
}

fn point(value: f64, r: &RunReport) -> SweepPoint {
    SweepPoint { value, attempted: r.metrics.attempted, asr_percent: r.metrics.asr_percent, mean_queries: r.metrics.mean_queries }
}

/// One full run per λ with everything else fixed.
pub fn sweep_lambda(corpus: &Corpus, cfg: &RunConfig, values: &[f64]) -> Result<SweepReport, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Config("lambda sweep needs at least one value".into()));
    }
    // validate the whole grid before spending any queries
    for &lambda in values {
        RunConfig { lambda, ..cfg.clone() }.validate()?;
    }
    let mut reports = Vec::new();
    for &lambda in values {
        reports.push(run_corpus(corpus, &RunConfig { lambda, ..cfg.clone() })?);
    }
    let table = values.iter().zip(&reports).map(|(v, r)| point(*v, r)).collect();
    Ok(SweepReport { parameter: "lambda".into(), table, reports })
}

pub fn sweep_budget(corpus: &Corpus, cfg: &RunConfig, values: &[u64]) -> Result<SweepReport, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Config("budget sweep needs at least one value".into()));
    }
    for &budget in values {
        RunConfig { budget, ..cfg.clone() }.validate()?;
    }
    let mut reports = Vec::new();
    for &budget in values {
        reports.push(run_corpus(corpus, &RunConfig { budget, ..cfg.clone() })?);
    }
    let table = values.iter().zip(&reports).map(|(v, r)| point(*v as f64, r)).collect();
    Ok(SweepReport { parameter: "budget".into(), table, reports })
}

/// Pretty JSON with struct-declaration key order and a trailing newline.
pub fn emit_report<T: Serialize>(report: &T, path: &Path) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| PipelineError::Serialize(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: &'a str,
    true_label: u8,
    skipped: bool,
    success: bool,
    queries_used: u64,
    p_orig: f64,
    p_adv: f64,
    delta_drop: f64,
    budget_exhausted: bool,
    renamed: usize,
    transforms: usize,
    semantics_preserved: Option<bool>,
    codebleu: Option<f64>,
}

/// One row per sample, same order as the JSON report.
pub fn emit_csv(report: &RunReport, path: &Path) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in &report.samples {
        let o = &r.outcome;
        w.serialize(CsvRow {
            id: &o.id,
            true_label: o.true_label,
            skipped: o.skipped,
            success: o.success,
            queries_used: o.queries_used,
            p_orig: o.p_orig,
            p_adv: o.p_adv,
            delta_drop: o.delta_drop,
            budget_exhausted: o.budget_exhausted,
            renamed: o.substitution.len(),
            transforms: o.transforms.len(),
            semantics_preserved: r.semantics_preserved,
            codebleu: r.codebleu.map(|c| c.total),
        })
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
