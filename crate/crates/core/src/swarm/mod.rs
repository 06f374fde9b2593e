//! Discrete particle swarm over identifier substitutions, plus the
//! comparator searches (MHM, Greedy, GA, Random) behind [`run_strategy`].

mod strategies;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frontend::SourceUnit;
use crate::lexicon::{rename, CandidatePool};
use crate::victims::{sigmoid, VictimError, VictimHandle};

pub use strategies::{mhm_acceptance, run_strategy, StrategyOptions, GA_MUTATION, GA_TOURNAMENT, MHM_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub omega1: f64,
    pub omega2: f64,
    pub c1_ori: f64,
    pub c2_ori: f64,
    pub pop_size: usize,
    pub max_iters: usize,
    pub p_mutate: f64,
    pub theta: usize,
    /// Share of similarity-guided particles, rounded up.
    pub guided_fraction: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            omega1: 1.5,
            omega2: 0.6,
            c1_ori: 1.3,
            c2_ori: 0.6,
            pop_size: 20,
            max_iters: 20,
            p_mutate: 0.1,
            theta: 2,
            guided_fraction: 0.5,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<(), String> {
        let reals = [self.omega1, self.omega2, self.c1_ori, self.c2_ori];
        if reals.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err("schedule coefficients must be positive".into());
        }
        if self.omega1 < self.omega2 {
            return Err(format!("omega1 ({}) must be >= omega2 ({})", self.omega1, self.omega2));
        }
        if self.pop_size == 0 || self.max_iters == 0 || self.theta == 0 {
            return Err("pop_size, max_iters and theta must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_mutate) {
            return Err(format!("p_mutate {} outside [0, 1]", self.p_mutate));
        }
        if !(0.0..=1.0).contains(&self.guided_fraction) {
            return Err(format!("guided_fraction {} outside [0, 1]", self.guided_fraction));
        }
        Ok(())
    }

    pub fn guided_count(&self) -> usize {
        ((self.pop_size as f64) * self.guided_fraction).ceil() as usize
    }
}

/// Linear inertia decay and the cognitive/social crossover at iteration `t` of `T`.
pub fn schedule(t: usize, big_t: usize, p: &ScheduleParams) -> (f64, f64, f64) {
    let frac = if big_t == 0 { 0.0 } else { t as f64 / big_t as f64 };
    let rest = if big_t == 0 { 1.0 } else { (big_t - t.min(big_t)) as f64 / big_t as f64 };
    let omega = (p.omega1 - p.omega2) * rest + p.omega2;
    let c1 = p.c1_ori - frac * (p.c1_ori - p.c2_ori);
    let c2 = p.c2_ori + frac * (p.c1_ori - p.c2_ori);
    (omega, c1, c2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub position: Vec<usize>,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<usize>,
    pub velocity: Vec<f64>,
    /// `None` until the first evaluation.
    pub personal_best: Option<Best>,
    pub fitness: Option<f64>,
}

impl Particle {
    fn new(position: Vec<usize>) -> Self {
        let n = position.len();
        Self { position, velocity: vec![0.0; n], personal_best: None, fitness: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalBest {
    pub position: Vec<usize>,
    pub fitness: f64,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub best_position: Vec<usize>,
    pub best_fitness: f64,
}

/// Outcome of scoring one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub flipped: bool,
    pub code: String,
}

/// Position scorer. Each call that reaches the victim costs one query.
pub trait Objective {
    fn evaluate(&mut self, position: &[usize]) -> Result<Evaluation, VictimError>;

    /// Victim queries issued so far.
    fn evaluations(&self) -> u64;
}

/// Fitness of a substitution vector: drop in true-label confidence after
/// renaming `unit`.
pub struct RenameObjective<'a> {
    pub unit: &'a SourceUnit,
    pub pool: &'a CandidatePool,
    pub victim: &'a mut VictimHandle,
    pub true_label: u8,
    pub p_orig: f64,
    pub evaluations: u64,
}

impl<'a> RenameObjective<'a> {
    /// `p_orig` is the victim's confidence in `true_label` on the unaltered unit.
    pub fn new(unit: &'a SourceUnit, pool: &'a CandidatePool, victim: &'a mut VictimHandle, true_label: u8, p_orig: f64) -> Self {
        Self { unit, pool, victim, true_label, p_orig, evaluations: 0 }
    }
}

impl Objective for RenameObjective<'_> {
    fn evaluate(&mut self, position: &[usize]) -> Result<Evaluation, VictimError> {
        let sub = self.pool.substitution(position);
        let code = match rename(self.unit, &sub) {
            Ok(u) => u.source_text,
            Err(e) => {
                // repaired positions never collide; treat anything else as a dead end
                log::debug!("rename rejected: {e}");
                return Ok(Evaluation { fitness: f64::NEG_INFINITY, flipped: false, code: String::new() });
            }
        };
        self.evaluations += 1;
        let v = self.victim.predict(&code)?;
        Ok(Evaluation { fitness: self.p_orig - v.p_true(self.true_label), flipped: v.label != self.true_label, code })
    }

    fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

/// Resets later dimensions that repeat a name already chosen earlier in
/// the vector.
pub fn repair(pool: &CandidatePool, position: &mut [usize]) {
    let mut seen = std::collections::BTreeSet::new();
    for d in 0..position.len() {
        if position[d] == 0 {
            continue;
        }
        let name = pool.name_at(d, position[d]).to_string();
        if !seen.insert(name) {
            position[d] = 0;
        }
    }
}

fn guided_position(pool: &CandidatePool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..pool.dims()).map(|d| rng.gen_range(0..=pool.top_k(d).len())).collect()
}

fn randomized_position(pool: &CandidatePool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..pool.dims()).map(|d| if pool.len(d) == 0 { 0 } else { rng.gen_range(1..=pool.len(d)) }).collect()
}

pub(crate) fn uniform_position(pool: &CandidatePool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..pool.dims()).map(|d| rng.gen_range(0..=pool.len(d))).collect()
}

/// Two-fold initialization: the first `guided_count` particles pick per
/// dimension among {keep, top-k}; the rest draw from the whole filtered
/// vocabulary.
pub fn init_positions(pool: &CandidatePool, params: &ScheduleParams, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let guided = params.guided_count().min(params.pop_size);
    (0..params.pop_size)
        .map(|i| {
            let mut x = if i < guided { guided_position(pool, rng) } else { randomized_position(pool, rng) };
            repair(pool, &mut x);
            x
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub global_best: Option<GlobalBest>,
    pub t: usize,
    pub params: ScheduleParams,
    pub stagnation_counter: usize,
    /// Legal positions per dimension are `0..=lens[d]`.
    pub lens: Vec<usize>,
    pub early_exit: bool,
    /// Index of the particle whose evaluation flipped the label.
    pub flipped_by: Option<usize>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Fresh swarm. `pinned` replaces particle 0 when given.
pub fn init_swarm(pool: &CandidatePool, params: &ScheduleParams, pinned: Option<Vec<usize>>, rng: &mut ChaCha8Rng) -> SwarmState {
    let mut positions = init_positions(pool, params, rng);
    if let (Some(mut p), Some(slot)) = (pinned, positions.first_mut()) {
        assert_eq!(p.len(), pool.dims(), "pinned position has wrong length");
        repair(pool, &mut p);
        *slot = p;
    }
    SwarmState {
        particles: positions.into_iter().map(Particle::new).collect(),
        global_best: None,
        t: 0,
        params: *params,
        stagnation_counter: 0,
        lens: (0..pool.dims()).map(|d| pool.len(d)).collect(),
        early_exit: true,
        flipped_by: None,
        trajectory: Vec::new(),
    }
}

impl SwarmState {
    pub fn best_fitness(&self) -> Option<f64> {
        self.global_best.as_ref().map(|g| g.fitness)
    }

    /// A flip ends the search only under early exit.
    pub fn is_done(&self) -> bool {
        (self.early_exit && self.flipped_by.is_some()) || self.t >= self.params.max_iters
    }

    pub fn positions(&self) -> Vec<Vec<usize>> {
        self.particles.iter().map(|p| p.position.clone()).collect()
    }

    fn record(&mut self, i: usize, e: Evaluation) {
        let p = &mut self.particles[i];
        p.fitness = Some(e.fitness);
        if p.personal_best.as_ref().is_none_or(|b| e.fitness > b.fitness) {
            p.personal_best = Some(Best { position: p.position.clone(), fitness: e.fitness });
        }
        if self.global_best.as_ref().is_none_or(|g| e.fitness > g.fitness) {
            self.global_best = Some(GlobalBest { position: p.position.clone(), fitness: e.fitness, code: e.code });
        }
        if e.flipped && self.flipped_by.is_none() {
            self.flipped_by = Some(i);
        }
    }

    fn push_trajectory(&mut self) {
        if let Some(g) = &self.global_best {
            let point = TrajectoryPoint { iteration: self.t, best_position: g.position.clone(), best_fitness: g.fitness };
            self.trajectory.push(point);
        }
    }

    /// Scores every particle once, in index order.
    pub fn evaluate_initial(&mut self, objective: &mut dyn Objective) -> Result<(), VictimError> {
        for i in 0..self.particles.len() {
            let e = objective.evaluate(&self.particles[i].position)?;
            self.record(i, e);
            if self.early_exit && self.flipped_by.is_some() {
                break;
            }
        }
        self.push_trajectory();
        Ok(())
    }

    /// One velocity/position update of every particle followed by its
    /// re-evaluation. Returns whether the global best improved.
    pub fn step(&mut self, objective: &mut dyn Objective, pool: &CandidatePool, rng: &mut ChaCha8Rng, mutation_rng: &mut ChaCha8Rng) -> Result<bool, VictimError> {
        assert!(self.t < self.params.max_iters, "step past max_iters");
        let (omega, c1, c2) = schedule(self.t, self.params.max_iters, &self.params);
        let before = self.best_fitness();
        let result = self.step_particles(objective, pool, rng, mutation_rng, omega, c1, c2);
        self.t += 1;
        let improved = self.best_fitness() != before;
        // consecutive iterations without improvement
        self.stagnation_counter = if improved { 0 } else { self.stagnation_counter + 1 };
        self.push_trajectory();
        result.map(|_| improved)
    }

    #[allow(clippy::too_many_arguments)]
    fn step_particles(
        &mut self,
        objective: &mut dyn Objective,
        pool: &CandidatePool,
        rng: &mut ChaCha8Rng,
        mutation_rng: &mut ChaCha8Rng,
        omega: f64,
        c1: f64,
        c2: f64,
    ) -> Result<(), VictimError> {
        let global = self.global_best.as_ref().map(|g| g.position.clone());
        for i in 0..self.particles.len() {
            let p = &mut self.particles[i];
            let local = p.personal_best.as_ref().map_or_else(|| p.position.clone(), |b| b.position.clone());
            let global = global.clone().unwrap_or_else(|| local.clone());
            for d in 0..p.position.len() {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let x = p.position[d];
                let dl = f64::from(u8::from(local[d] != x));
                let dg = f64::from(u8::from(global[d] != x));
                let v = omega * p.velocity[d] + c1 * r1 * dl + c2 * r2 * dg;
                p.velocity[d] = v;
                if rng.gen::<f64>() < sigmoid(v) {
                    p.position[d] = if c2 * r2 >= c1 * r1 { global[d] } else { local[d] };
                }
                if mutation_rng.gen::<f64>() < self.params.p_mutate {
                    p.position[d] = mutation_rng.gen_range(0..=self.lens[d]);
                }
            }
            repair(pool, &mut p.position);
            let e = objective.evaluate(&self.particles[i].position)?;
            self.record(i, e);
            if self.early_exit && self.flipped_by.is_some() {
                break;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Pso,
    Mhm,
    Greedy,
    Ga,
    Random,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [StrategyKind::Pso, StrategyKind::Mhm, StrategyKind::Greedy, StrategyKind::Ga, StrategyKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Pso => "pso",
            StrategyKind::Mhm => "mhm",
            StrategyKind::Greedy => "greedy",
            StrategyKind::Ga => "ga",
            StrategyKind::Random => "random",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown strategy `{s}` (expected pso, mhm, greedy, ga or random)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelResult {
    pub strategy: StrategyKind,
    pub best_position: Vec<usize>,
    /// Fitness of `best_position`; 0 (the unaltered unit) when nothing was evaluated.
    pub best_fitness: f64,
    pub best_code: Option<String>,
    pub success: bool,
    pub queries: u64,
    pub budget_exhausted: bool,
    /// Nothing to search: every dimension has an empty pool.
    pub no_moves: bool,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_population: Vec<Vec<usize>>,
}

#[cfg(test)]
mod tests;
