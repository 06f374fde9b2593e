use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::frontend::SourceUnit;
use crate::lexicon::build_pool;
use crate::metrics;
use crate::orchestrator::Lexicon;
use crate::swarm::{run_strategy, RenameObjective, ScheduleParams, StrategyKind, StrategyOptions, TrajectoryPoint};
use crate::victims::VictimSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    pub params: ScheduleParams,
    pub k: usize,
    pub budget: u64,
    /// Stop at the first flip; off for diversity measurements.
    pub early_exit: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            strategies: StrategyKind::ALL.to_vec(),
            seeds: (0..20).collect(),
            params: ScheduleParams::default(),
            k: crate::lexicon::DEFAULT_K,
            budget: crate::orchestrator::DEFAULT_BUDGET,
            early_exit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRun {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub success: bool,
    /// Includes the baseline query on the original.
    pub queries: u64,
    pub best_fitness: f64,
    pub budget_exhausted: bool,
    pub cad: Option<f64>,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub runs: usize,
    pub successes: usize,
    pub median_queries_to_success: Option<f64>,
    pub mean_cad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub unit_id: String,
    pub summaries: Vec<StrategySummary>,
    pub runs: Vec<CompareRun>,
}

/// A line of the trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub strategy: String,
    pub seed: u64,
    pub iteration: usize,
    pub best_position: Vec<usize>,
    pub best_fitness: f64,
}

impl CompareReport {
    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        self.runs
            .iter()
            .flat_map(|r| {
                r.trajectory.iter().map(move |p| TrajectoryRow {
                    strategy: r.strategy.name().to_string(),
                    seed: r.seed,
                    iteration: p.iteration,
                    best_position: p.best_position.clone(),
                    best_fitness: p.best_fitness,
                })
            })
            .collect()
    }

    pub fn summary(&self, kind: StrategyKind) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == kind)
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// A single search strategy over the renaming pool of `unit`, with a fresh
/// victim connection capped at `budget` queries.
#[allow(clippy::too_many_arguments)]
pub fn run_one(
    kind: StrategyKind,
    unit: &SourceUnit,
    true_label: u8,
    spec: &VictimSpec,
    lexicon: &Lexicon,
    params: &ScheduleParams,
    k: usize,
    budget: u64,
    seed: u64,
    early_exit: bool,
) -> Result<CompareRun, PipelineError> {
    let pool = build_pool(unit, &lexicon.vocabulary, &lexicon.provider, k)?;
    let mut victim = spec.connect()?.with_budget(budget);
    let p_orig = victim.predict(&unit.source_text)?.p_true(true_label);
    let mut objective = RenameObjective::new(unit, &pool, &mut victim, true_label, p_orig);
    let mut opts = StrategyOptions::new(seed, &unit.unit_id);
    opts.early_exit = early_exit;
    let r = run_strategy(kind, &pool, &mut objective, params, &opts)?;
    let names: Vec<Vec<String>> = r.final_population.iter().map(|p| pool.names(p)).collect();
    Ok(CompareRun {
        strategy: kind,
        seed,
        success: r.success,
        queries: victim.queries(),
        best_fitness: r.best_fitness,
        budget_exhausted: r.budget_exhausted,
        cad: metrics::cad(&names).ok(),
        trajectory: r.trajectory,
    })
}

/// Runs every configured strategy under every seed on one unit.
pub fn compare_search(unit: &SourceUnit, true_label: u8, spec: &VictimSpec, lexicon: &Lexicon, cfg: &CompareConfig) -> Result<CompareReport, PipelineError> {
    cfg.params.validate().map_err(PipelineError::Config)?;
    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    for &kind in &cfg.strategies {
        let mine: Vec<CompareRun> = cfg
            .seeds
            .iter()
            .map(|&seed| run_one(kind, unit, true_label, spec, lexicon, &cfg.params, cfg.k, cfg.budget, seed, cfg.early_exit))
            .collect::<Result<_, _>>()?;
        let mut hits: Vec<f64> = mine.iter().filter(|r| r.success).map(|r| r.queries as f64).collect();
        let cads: Vec<f64> = mine.iter().filter_map(|r| r.cad).collect();
        summaries.push(StrategySummary {
            strategy: kind,
            runs: mine.len(),
            successes: hits.len(),
            median_queries_to_success: median(&mut hits),
            mean_cad: (!cads.is_empty()).then(|| cads.iter().sum::<f64>() / cads.len() as f64),
        });
        runs.extend(mine);
    }
    Ok(CompareReport { unit_id: unit.unit_id.clone(), summaries, runs })
}
