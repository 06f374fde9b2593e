//! The cooperative attack loop: a lexical (renaming) channel and a
//! structural (rewrite) channel alternate against one shared best, switching
//! whenever the active channel stalls.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frontend::SourceUnit;
use crate::lexicon::{build_pool, rename, CandidatePool, EmbeddingProvider, DEFAULT_K};
use crate::metrics;
use crate::rng;
use crate::swarm::{init_swarm, RenameObjective, ScheduleParams, SwarmState};
use crate::transforms::{
    apply_transform, check_applicable, compute_importance_partial, extract_profile, sample_transform, ImportanceMap, StructureProfile,
    TransformError, TransformOp, DEFAULT_LAMBDA, DEFAULT_SITE_CAP,
};
use crate::victims::{VictimError, VictimHandle};

pub const DEFAULT_BUDGET: u64 = 5000;
pub const DEFAULT_MAX_STRUCT_ITERS: usize = 20;
pub const DEFAULT_MAX_SWITCHES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Lexical,
    Structural,
}

impl Channel {
    pub fn other(self) -> Channel {
        match self {
            Channel::Lexical => Channel::Structural,
            Channel::Structural => Channel::Lexical,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Lexical => "lexical",
            Channel::Structural => "structural",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub lambda: f64,
    pub schedule: ScheduleParams,
    pub k: usize,
    pub site_cap: usize,
    pub budget: u64,
    pub seed: u64,
    pub max_struct_iters: usize,
    pub max_switches: usize,
    pub start_channel: Channel,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            schedule: ScheduleParams::default(),
            k: DEFAULT_K,
            site_cap: DEFAULT_SITE_CAP,
            budget: DEFAULT_BUDGET,
            seed: 0,
            max_struct_iters: DEFAULT_MAX_STRUCT_ITERS,
            max_switches: DEFAULT_MAX_SWITCHES,
            start_channel: Channel::Lexical,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.budget < 1 {
            return Err("budget must be at least 1".into());
        }
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        self.schedule.validate()
    }
}

/// Everything the lexical channel needs besides the unit.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub vocabulary: Vec<String>,
    pub provider: EmbeddingProvider,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self { vocabulary: crate::lexicon::bundled_vocabulary(), provider: EmbeddingProvider::subword_hash() }
    }
}

#[derive(Debug, Clone)]
pub struct AttackTask<'a> {
    pub unit: SourceUnit,
    pub true_label: u8,
    pub config: &'a AttackConfig,
    pub lexicon: &'a Lexicon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    /// The leaving channel stalled for θ iterations.
    Switch,
    /// The leaving channel has nothing left to try.
    Exhausted,
    Success,
    BudgetExhausted,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEvent {
    pub kind: EventKind,
    pub channel: Channel,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub to: Option<Channel>,
    pub stagnation: usize,
    pub queries: u64,
    pub best_fitness: f64,
    /// Number of iteration records preceding this event.
    pub after_iterations: usize,
}

/// One channel iteration, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub channel: Channel,
    /// Channel-wide iteration number, counted across visits.
    pub iteration: usize,
    pub best_fitness: f64,
    pub stagnation: usize,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub id: String,
    pub true_label: u8,
    pub skipped: bool,
    pub success: bool,
    pub adversarial_code: String,
    pub substitution: BTreeMap<String, String>,
    pub transforms: Vec<TransformOp>,
    pub queries_used: u64,
    pub p_orig: f64,
    pub p_adv: f64,
    pub delta_drop: f64,
    pub budget_exhausted: bool,
    pub trace: Vec<ChannelEvent>,
    pub iterations: Vec<IterationRecord>,
    /// Last lexical population as chosen names per dimension.
    pub final_population: Vec<Vec<String>>,
    pub cad: Option<f64>,
    pub cad_chars: Option<f64>,
}

impl AttackOutcome {
    pub fn record(&self) -> metrics::SampleRecord {
        metrics::SampleRecord {
            id: self.id.clone(),
            true_label: self.true_label,
            skipped: self.skipped,
            success: self.success,
            p_orig: self.p_orig,
            p_adv: self.p_adv,
            queries: self.queries_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error("bad attack configuration: {0}")]
    Config(String),
}

/// The shared best: a structural base with original names, plus the
/// renaming layered on top of it.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub base: SourceUnit,
    pub substitution: BTreeMap<String, String>,
    pub transforms: Vec<TransformOp>,
    pub rendered: SourceUnit,
    pub fitness: f64,
    pub flipped: bool,
}

/// Keeps only renamings whose source survived in `base`.
pub fn prune_substitution(base: &SourceUnit, substitution: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    substitution.iter().filter(|(k, _)| base.identifiers.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Position in `pool` reproducing `substitution` where possible; dimensions
/// without an inherited name (or whose name the pool lacks) stay at 0.
pub fn inherited_position(pool: &CandidatePool, substitution: &BTreeMap<String, String>) -> Vec<usize> {
    pool.identifiers
        .iter()
        .enumerate()
        .map(|(d, id)| substitution.get(id).and_then(|to| pool.index_of(d, to)).unwrap_or(0))
        .collect()
}

/// Fusion into the lexical channel: a fresh swarm over `warm.base` with
/// particle 0 pinned to the surviving part of the inherited renaming (no
/// pin when nothing was inherited).
pub fn fuse_lexical(warm: &Candidate, pool: &CandidatePool, params: &ScheduleParams, rng: &mut ChaCha8Rng) -> SwarmState {
    let inherited = prune_substitution(&warm.base, &warm.substitution);
    let pinned = (!inherited.is_empty()).then(|| inherited_position(pool, &inherited));
    init_swarm(pool, params, pinned, rng)
}

/// Fusion into the structural channel: the profile is taken from the
/// rendered warm-start code; renamings ride along unchanged.
pub fn fuse_structural(warm: &Candidate, lambda: f64) -> Result<StructureProfile, TransformError> {
    extract_profile(&warm.rendered, lambda)
}

struct Lexical {
    pool: CandidatePool,
    /// Base the current swarm was built over.
    base: SourceUnit,
    swarm: SwarmState,
    t: usize,
    exhausted: bool,
}

struct Structural {
    importance: Option<ImportanceMap>,
    profile: Option<StructureProfile>,
    exclude: BTreeSet<TransformOp>,
    /// Rendered text the importance map and exclude set belong to.
    for_text: String,
    iters: usize,
}

struct Run<'a, 't> {
    task: &'a AttackTask<'t>,
    victim: &'a mut VictimHandle,
    p_orig: f64,
    best: Candidate,
    trace: Vec<ChannelEvent>,
    iterations: Vec<IterationRecord>,
    swarm_rng: ChaCha8Rng,
    mutation_rng: ChaCha8Rng,
    sampling_rng: ChaCha8Rng,
}

impl Run<'_, '_> {
    fn event(&mut self, kind: EventKind, channel: Channel, to: Option<Channel>, stagnation: usize) {
        let after_iterations = self.iterations.len();
        self.trace.push(ChannelEvent { kind, channel, to, stagnation, queries: self.victim.queries(), best_fitness: self.best.fitness, after_iterations });
    }

    fn offer(&mut self, c: Candidate) -> bool {
        if c.fitness > self.best.fitness {
            self.best = c;
            true
        } else {
            false
        }
    }

    /// Builds the pool over the current base and evaluates a fused swarm.
    /// The state is returned even when the initial evaluation fails.
    fn new_lexical(&mut self, t: usize) -> (Lexical, Result<(), VictimError>) {
        let cfg = self.task.config;
        let lex = self.task.lexicon;
        let pool = build_pool(&self.best.base, &lex.vocabulary, &lex.provider, cfg.k).expect("vocabulary and k checked up front");
        let mut swarm = fuse_lexical(&self.best, &pool, &cfg.schedule, &mut self.swarm_rng);
        let exhausted = pool.is_empty();
        let r = if exhausted {
            Ok(())
        } else {
            let mut obj = RenameObjective::new(&self.best.base, &pool, self.victim, self.task.true_label, self.p_orig);
            swarm.evaluate_initial(&mut obj)
        };
        swarm.t = t;
        let state = Lexical { base: self.best.base.clone(), pool, swarm, t, exhausted };
        self.absorb_swarm(&state);
        (state, r)
    }

    fn absorb_swarm(&mut self, lex: &Lexical) -> bool {
        let Some(g) = &lex.swarm.global_best else { return false };
        if g.fitness <= self.best.fitness {
            return false;
        }
        let substitution = lex.pool.substitution(&g.position);
        let Ok(rendered) = rename(&self.best.base, &substitution) else { return false };
        let c = Candidate {
            base: self.best.base.clone(),
            substitution,
            transforms: self.best.transforms.clone(),
            rendered,
            fitness: g.fitness,
            flipped: lex.swarm.flipped_by.is_some(),
        };
        self.offer(c)
    }

    /// One lexical iteration; returns whether the shared best improved.
    fn lexical_step(&mut self, lex: &mut Lexical) -> Result<bool, VictimError> {
        let mut obj = RenameObjective::new(&self.best.base, &lex.pool, self.victim, self.task.true_label, self.p_orig);
        let r = lex.swarm.step(&mut obj, &lex.pool, &mut self.swarm_rng, &mut self.mutation_rng);
        lex.t += 1;
        let improved = self.absorb_swarm(lex);
        r.map(|_| improved)
    }

    fn refresh_structural(&mut self, st: &mut Structural) -> Result<(), VictimError> {
        if st.for_text == self.best.rendered.source_text && st.profile.is_some() {
            return Ok(());
        }
        st.for_text = self.best.rendered.source_text.clone();
        st.exclude.clear();
        st.profile = fuse_structural(&self.best, self.task.config.lambda).ok();
        st.importance = None;
        if st.profile.is_some() {
            let (map, err) = compute_importance_partial(&self.best.rendered, self.victim, self.task.true_label, self.task.config.site_cap);
            st.importance = Some(map);
            if let Some(e) = err {
                return Err(e);
            }
        }
        Ok(())
    }

    fn structural_exhausted(&self, st: &Structural) -> bool {
        if st.iters >= self.task.config.max_struct_iters {
            return true;
        }
        if st.for_text != self.best.rendered.source_text {
            // a new base has not been profiled yet; see whether it has any rewrite
            return match extract_profile(&self.best.rendered, self.task.config.lambda) {
                Ok(p) => !has_open_op(&self.best.rendered, &p, &BTreeSet::new()),
                Err(_) => true,
            };
        }
        match &st.profile {
            Some(p) => !has_open_op(&self.best.rendered, p, &st.exclude),
            None => true,
        }
    }

    /// One structural iteration: draw, apply, evaluate, keep on strict gain.
    fn structural_step(&mut self, st: &mut Structural) -> Result<bool, VictimError> {
        self.refresh_structural(st)?;
        let (Some(profile), Some(importance)) = (st.profile.as_ref(), st.importance.as_ref()) else { return Ok(false) };
        st.iters += 1;
        // a drawn kind without a rewrite is a query-free, stagnant iteration
        let op = match sample_transform(&self.best.rendered, profile, importance, &st.exclude, &mut self.sampling_rng) {
            Ok(op) => op,
            Err(e) => {
                log::debug!("structural draw: {e}");
                return Ok(false);
            }
        };
        st.exclude.insert(op);
        let candidate = match apply_transform(&self.best.base, op) {
            Ok(base) => {
                let substitution = prune_substitution(&base, &self.best.substitution);
                rename(&base, &substitution).ok().map(|rendered| (base, substitution, rendered))
            }
            Err(e) => {
                log::debug!("{op:?} failed: {e}");
                None
            }
        };
        let Some((base, substitution, rendered)) = candidate else { return Ok(false) };
        let v = self.victim.predict(&rendered.source_text)?;
        let y = self.task.true_label;
        let mut transforms = self.best.transforms.clone();
        transforms.push(op);
        let c = Candidate { base, substitution, transforms, rendered, fitness: self.p_orig - v.p_true(y), flipped: v.label != y };
        Ok(self.offer(c))
    }
}

fn open_ops<'p>(unit: &'p SourceUnit, profile: &'p StructureProfile, exclude: &'p BTreeSet<TransformOp>) -> impl Iterator<Item = TransformOp> + 'p {
    profile
        .sites
        .iter()
        .filter_map(|(kind, sites)| kind.op().map(|op| (op, sites)))
        .flat_map(|(op, sites)| sites.iter().map(move |site| TransformOp { op, site: *site }))
        .filter(move |t| !exclude.contains(t) && check_applicable(unit, *t).is_ok())
}

fn has_open_op(unit: &SourceUnit, profile: &StructureProfile, exclude: &BTreeSet<TransformOp>) -> bool {
    open_ops(unit, profile, exclude).next().is_some()
}

fn skipped_outcome(task: &AttackTask, p_orig: f64, queries: u64) -> AttackOutcome {
    AttackOutcome {
        id: task.unit.unit_id.clone(),
        true_label: task.true_label,
        skipped: true,
        success: false,
        adversarial_code: task.unit.source_text.clone(),
        substitution: BTreeMap::new(),
        transforms: Vec::new(),
        queries_used: queries,
        p_orig,
        p_adv: p_orig,
        delta_drop: 0.0,
        budget_exhausted: false,
        trace: Vec::new(),
        iterations: Vec::new(),
        final_population: Vec::new(),
        cad: None,
        cad_chars: None,
    }
}

/// Attacks one sample. `victim` should be fresh for the task; its budget is
/// replaced by the task budget. Only transport failures are errors; budget
/// exhaustion ends the search and is flagged on the outcome.
pub fn attack(task: &AttackTask, victim: &mut VictimHandle) -> Result<AttackOutcome, AttackError> {
    let cfg = task.config;
    cfg.validate().map_err(AttackError::Config)?;
    if task.lexicon.vocabulary.is_empty() {
        return Err(AttackError::Config("vocabulary is empty".into()));
    }
    let budget = victim.queries() + cfg.budget;
    victim.set_budget(Some(budget));
    let y = task.true_label;

    let v0 = victim.predict(&task.unit.source_text)?;
    let p_orig = v0.p_true(y);
    if v0.label != y {
        return Ok(skipped_outcome(task, p_orig, victim.queries()));
    }
    // hold one query back for the final verification
    victim.set_budget(Some(budget.saturating_sub(1).max(victim.queries())));

    let root = Candidate {
        base: task.unit.clone(),
        substitution: BTreeMap::new(),
        transforms: Vec::new(),
        rendered: task.unit.clone(),
        fitness: 0.0,
        flipped: false,
    };
    let scope = task.unit.unit_id.as_str();
    let mut run = Run {
        task,
        victim,
        p_orig,
        best: root,
        trace: Vec::new(),
        iterations: Vec::new(),
        swarm_rng: rng::stream(cfg.seed, scope, rng::SWARM),
        mutation_rng: rng::stream(cfg.seed, scope, rng::MUTATION),
        sampling_rng: rng::stream(cfg.seed, scope, rng::SAMPLING),
    };
    let mut lexical: Option<Lexical> = None;
    let mut structural = Structural { importance: None, profile: None, exclude: BTreeSet::new(), for_text: String::new(), iters: 0 };
    let mut lexical_t = 0usize;
    let mut lexical_dead = false;
    let mut channel = cfg.start_channel;
    let mut stagnation = 0usize;
    let mut switches = 0usize;
    let theta = cfg.schedule.theta;
    run.event(EventKind::Start, channel, None, 0);

    let status: Result<(), VictimError> = (|| {
        loop {
            if run.best.flipped {
                run.event(EventKind::Success, channel, None, stagnation);
                return Ok(());
            }
            let exhausted = match channel {
                Channel::Lexical => lexical_dead || lexical_t >= cfg.schedule.max_iters,
                Channel::Structural => run.structural_exhausted(&structural),
            };
            if exhausted {
                let other_open = match channel.other() {
                    Channel::Lexical => !(lexical_dead || lexical_t >= cfg.schedule.max_iters),
                    Channel::Structural => !run.structural_exhausted(&structural),
                };
                if !other_open {
                    run.event(EventKind::Finished, channel, None, stagnation);
                    return Ok(());
                }
                run.event(EventKind::Exhausted, channel, Some(channel.other()), stagnation);
                channel = channel.other();
                stagnation = 0;
                continue;
            }
            let improved = match channel {
                Channel::Lexical => {
                    let stale = lexical.as_ref().is_none_or(|l| l.base.source_text != run.best.base.source_text);
                    if stale {
                        let (fresh, r) = run.new_lexical(lexical_t);
                        lexical_dead |= fresh.exhausted;
                        lexical = Some(fresh);
                        r?;
                        if lexical_dead || run.best.flipped {
                            continue;
                        }
                    }
                    let lex = lexical.as_mut().expect("lexical state");
                    let r = run.lexical_step(lex);
                    lexical_t = lex.t;
                    r?
                }
                Channel::Structural => run.structural_step(&mut structural)?,
            };
            // stagnation runs on the shared best
            stagnation = if improved { 0 } else { stagnation + 1 };
            let iteration = match channel {
                Channel::Lexical => lexical_t,
                Channel::Structural => structural.iters,
            };
            run.iterations.push(IterationRecord { channel, iteration, best_fitness: run.best.fitness, stagnation, improved });
            if stagnation >= theta && !run.best.flipped {
                let other_open = match channel.other() {
                    Channel::Lexical => !(lexical_dead || lexical_t >= cfg.schedule.max_iters),
                    Channel::Structural => !run.structural_exhausted(&structural),
                };
                if switches < cfg.max_switches && other_open {
                    run.event(EventKind::Switch, channel, Some(channel.other()), stagnation);
                    switches += 1;
                    channel = channel.other();
                }
                stagnation = 0;
            }
        }
    })();
    let mut budget_exhausted = false;
    match status {
        Ok(()) => {}
        Err(VictimError::BudgetExhausted) => {
            budget_exhausted = true;
            run.event(EventKind::BudgetExhausted, channel, None, stagnation);
        }
        Err(e) => return Err(e.into()),
    }

    let (final_population, cad, cad_chars) = match &lexical {
        Some(l) if !l.pool.is_empty() => {
            let positions = l.swarm.positions();
            let names: Vec<Vec<String>> = positions.iter().map(|p| l.pool.names(p)).collect();
            let codes: Vec<String> =
                positions.iter().filter_map(|p| rename(&l.base, &l.pool.substitution(p)).ok()).map(|u| u.source_text).collect();
            let cad = metrics::cad(&names).ok();
            let cad_chars = metrics::cad_chars(&codes).ok();
            (names, cad, cad_chars)
        }
        _ => (Vec::new(), None, None),
    };

    let Run { best, trace, iterations, victim, .. } = run;
    victim.set_budget(Some(budget));
    let (success, p_adv) = match victim.predict(&best.rendered.source_text) {
        Ok(v) => (v.label != y, v.p_true(y)),
        Err(VictimError::BudgetExhausted) => {
            budget_exhausted = true;
            (false, p_orig - best.fitness)
        }
        Err(e) => return Err(e.into()),
    };
    Ok(AttackOutcome {
        id: task.unit.unit_id.clone(),
        true_label: y,
        skipped: false,
        success,
        adversarial_code: best.rendered.source_text,
        substitution: best.substitution,
        transforms: best.transforms,
        queries_used: victim.queries(),
        p_orig,
        p_adv,
        delta_drop: p_orig - p_adv,
        budget_exhausted,
        trace,
        iterations,
        final_population,
        cad,
        cad_chars,
    })
}

#[cfg(test)]
mod tests;
