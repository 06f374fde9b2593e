use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{init_positions, init_swarm, repair, uniform_position, ChannelResult, Evaluation, Objective, ScheduleParams, StrategyKind, TrajectoryPoint};
use crate::lexicon::CandidatePool;
use crate::rng;
use crate::victims::VictimError;

pub const MHM_TEMPERATURE: f64 = 0.1;
pub const GA_TOURNAMENT: usize = 2;
pub const GA_MUTATION: f64 = 0.1;

/// Probability of moving from fitness `f` to a proposal scoring `f_new`.
pub fn mhm_acceptance(f: f64, f_new: f64) -> f64 {
    ((f_new - f) / MHM_TEMPERATURE).exp().min(1.0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyOptions {
    pub seed: u64,
    /// Sub-stream scope, usually the sample id.
    pub scope: String,
    pub early_exit: bool,
}

impl StrategyOptions {
    pub fn new(seed: u64, scope: &str) -> Self {
        Self { seed, scope: scope.to_string(), early_exit: true }
    }

    fn stream(&self, name: &str) -> ChaCha8Rng {
        rng::stream(self.seed, &self.scope, name)
    }
}

/// Best-so-far bookkeeping shared by the comparator searches.
struct Tracker<'a> {
    objective: &'a mut dyn Objective,
    best: Option<(Vec<usize>, f64, String)>,
    success: bool,
    early_exit: bool,
    trajectory: Vec<TrajectoryPoint>,
}

impl<'a> Tracker<'a> {
    fn new(objective: &'a mut dyn Objective, early_exit: bool) -> Self {
        Self { objective, best: None, success: false, early_exit, trajectory: Vec::new() }
    }

    fn eval(&mut self, x: &[usize]) -> Result<Evaluation, VictimError> {
        let e = self.objective.evaluate(x)?;
        if self.best.as_ref().is_none_or(|b| e.fitness > b.1) {
            self.best = Some((x.to_vec(), e.fitness, e.code.clone()));
        }
        self.success |= e.flipped;
        Ok(e)
    }

    fn stop(&self) -> bool {
        self.early_exit && self.success
    }

    fn mark(&mut self, iteration: usize) {
        if let Some((p, f, _)) = &self.best {
            self.trajectory.push(TrajectoryPoint { iteration, best_position: p.clone(), best_fitness: *f });
        }
    }
}

/// Runs one search strategy over `pool` until success (with early exit),
/// its iteration allowance, or budget exhaustion. Transport failures are
/// returned as errors; an exhausted budget is flagged on the result.
pub fn run_strategy(
    kind: StrategyKind,
    pool: &CandidatePool,
    objective: &mut dyn Objective,
    params: &ScheduleParams,
    opts: &StrategyOptions,
) -> Result<ChannelResult, VictimError> {
    let start = objective.evaluations();
    let dims = pool.dims();
    let mut result = ChannelResult {
        strategy: kind,
        best_position: vec![0; dims],
        best_fitness: 0.0,
        best_code: None,
        success: false,
        queries: 0,
        budget_exhausted: false,
        no_moves: pool.is_empty(),
        trajectory: Vec::new(),
        final_population: Vec::new(),
    };
    if result.no_moves {
        return Ok(result);
    }
    let outcome = match kind {
        StrategyKind::Pso => pso(pool, objective, params, opts, &mut result),
        other => {
            let mut tracker = Tracker::new(objective, opts.early_exit);
            let r = match other {
                StrategyKind::Mhm => mhm(pool, &mut tracker, params, &mut opts.stream(rng::MHM), &mut result),
                StrategyKind::Greedy => greedy(pool, &mut tracker, &mut result),
                StrategyKind::Ga => ga(pool, &mut tracker, params, opts, &mut result),
                StrategyKind::Random => random(pool, &mut tracker, params, &mut opts.stream(rng::RANDOM), &mut result),
                StrategyKind::Pso => unreachable!(),
            };
            if let Some((p, f, c)) = tracker.best.take() {
                result.best_position = p;
                result.best_fitness = f;
                result.best_code = Some(c);
            }
            result.success = tracker.success;
            result.trajectory = std::mem::take(&mut tracker.trajectory);
            r
        }
    };
    result.queries = objective.evaluations() - start;
    match outcome {
        Ok(()) => Ok(result),
        Err(VictimError::BudgetExhausted) => {
            result.budget_exhausted = true;
            Ok(result)
        }
        Err(e) => Err(e),
    }
}

fn pso(
    pool: &CandidatePool,
    objective: &mut dyn Objective,
    params: &ScheduleParams,
    opts: &StrategyOptions,
    result: &mut ChannelResult,
) -> Result<(), VictimError> {
    let mut swarm_rng = opts.stream(rng::SWARM);
    let mut mutation_rng = opts.stream(rng::MUTATION);
    let mut state = init_swarm(pool, params, None, &mut swarm_rng);
    state.early_exit = opts.early_exit;
    let mut run = || -> Result<(), VictimError> {
        state.evaluate_initial(objective)?;
        while !state.is_done() {
            state.step(objective, pool, &mut swarm_rng, &mut mutation_rng)?;
        }
        Ok(())
    };
    let r = run();
    if let Some(g) = &state.global_best {
        result.best_position = g.position.clone();
        result.best_fitness = g.fitness;
        result.best_code = Some(g.code.clone());
    }
    result.success = state.flipped_by.is_some();
    result.final_population = state.positions();
    result.trajectory = state.trajectory;
    r
}

/// Metropolis-Hastings over single-dimension proposals, starting from the
/// unaltered unit (fitness 0). Spends `pop_size * max_iters` proposals.
fn mhm(pool: &CandidatePool, t: &mut Tracker, params: &ScheduleParams, rng: &mut ChaCha8Rng, result: &mut ChannelResult) -> Result<(), VictimError> {
    let live: Vec<usize> = (0..pool.dims()).filter(|d| pool.len(*d) > 0).collect();
    let mut x = vec![0; pool.dims()];
    let mut f = 0.0;
    let mut recent: Vec<Vec<usize>> = Vec::new();
    for proposal in 0..params.pop_size * params.max_iters {
        let d = live[rng.gen_range(0..live.len())];
        // any other legal value of this dimension
        let mut j = rng.gen_range(0..pool.len(d));
        if j >= x[d] {
            j += 1;
        }
        let mut y = x.clone();
        y[d] = j;
        repair(pool, &mut y);
        if y[d] == j {
            let e = t.eval(&y)?;
            if t.stop() {
                recent.push(y);
                break;
            }
            if rng.gen::<f64>() < mhm_acceptance(f, e.fitness) {
                x = y;
                f = e.fitness;
            }
        }
        recent.push(x.clone());
        if recent.len() > params.pop_size {
            recent.remove(0);
        }
        if (proposal + 1) % params.pop_size == 0 {
            t.mark((proposal + 1) / params.pop_size);
        }
    }
    result.final_population = recent;
    Ok(())
}

/// Ranks dimensions by their best single substitution, then fixes them one
/// at a time, keeping a candidate only when it strictly improves.
fn greedy(pool: &CandidatePool, t: &mut Tracker, result: &mut ChannelResult) -> Result<(), VictimError> {
    let dims = pool.dims();
    let mut single = Vec::new();
    for d in 0..dims {
        let mut best = f64::NEG_INFINITY;
        for j in 1..=pool.top_k(d).len() {
            let mut y = vec![0; dims];
            y[d] = j;
            best = best.max(t.eval(&y)?.fitness);
            if t.stop() {
                return Ok(());
            }
        }
        single.push((d, best));
    }
    single.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    t.mark(0);
    let mut x = vec![0; dims];
    let mut f = 0.0;
    for (step, (d, _)) in single.into_iter().enumerate() {
        let mut keep = (x[d], f);
        for j in 1..=pool.top_k(d).len() {
            let mut y = x.clone();
            y[d] = j;
            repair(pool, &mut y);
            if y[d] != j {
                continue;
            }
            let e = t.eval(&y)?;
            if t.stop() {
                return Ok(());
            }
            if e.fitness > keep.1 {
                keep = (j, e.fitness);
            }
        }
        x[d] = keep.0;
        f = keep.1;
        t.mark(step + 1);
    }
    result.final_population = vec![x];
    Ok(())
}

fn ga(pool: &CandidatePool, t: &mut Tracker, params: &ScheduleParams, opts: &StrategyOptions, result: &mut ChannelResult) -> Result<(), VictimError> {
    let mut init_rng = opts.stream(rng::SWARM);
    let mut rng = opts.stream(rng::GA);
    let dims = pool.dims();
    let mut pop: Vec<(Vec<usize>, f64)> = Vec::new();
    for x in init_positions(pool, params, &mut init_rng) {
        let e = t.eval(&x)?;
        pop.push((x, e.fitness));
        if t.stop() {
            result.final_population = pop.into_iter().map(|p| p.0).collect();
            return Ok(());
        }
    }
    t.mark(0);
    for generation in 1..=params.max_iters {
        let elite = pop.iter().enumerate().fold(0, |b, (i, p)| if p.1 > pop[b].1 { i } else { b });
        let mut next = vec![pop[elite].clone()];
        let mut stopped = false;
        while next.len() < pop.len() {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let cut = if dims >= 2 { rng.gen_range(1..dims) } else { dims };
            let mut child: Vec<usize> = pop[a].0[..cut].iter().chain(&pop[b].0[cut..]).copied().collect();
            for (d, slot) in child.iter_mut().enumerate() {
                if rng.gen::<f64>() < GA_MUTATION {
                    *slot = rng.gen_range(0..=pool.len(d));
                }
            }
            repair(pool, &mut child);
            let e = t.eval(&child)?;
            next.push((child, e.fitness));
            if t.stop() {
                stopped = true;
                break;
            }
        }
        pop = next;
        t.mark(generation);
        if stopped {
            break;
        }
    }
    result.final_population = pop.into_iter().map(|p| p.0).collect();
    Ok(())
}

fn tournament(pop: &[(Vec<usize>, f64)], rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..GA_TOURNAMENT {
        let c = rng.gen_range(0..pop.len());
        if pop[c].1 > pop[best].1 {
            best = c;
        }
    }
    best
}

/// Independent uniform draws, one batch of `pop_size` per iteration plus
/// an initial batch, matching the swarm's evaluation count.
fn random(pool: &CandidatePool, t: &mut Tracker, params: &ScheduleParams, rng: &mut ChaCha8Rng, result: &mut ChannelResult) -> Result<(), VictimError> {
    for iteration in 0..=params.max_iters {
        let mut batch = Vec::new();
        for _ in 0..params.pop_size {
            let mut x = uniform_position(pool, rng);
            repair(pool, &mut x);
            t.eval(&x)?;
            batch.push(x);
            if t.stop() {
                break;
            }
        }
        result.final_population = batch;
        t.mark(iteration);
        if t.stop() {
            break;
        }
    }
    Ok(())
}
