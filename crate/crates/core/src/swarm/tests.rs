use super::*;
use crate::rng;
use proptest::prelude::*;

fn pool(lens: &[usize], k: usize) -> CandidatePool {
    CandidatePool {
        k,
        identifiers: (0..lens.len()).map(|d| format!("v{d}")).collect(),
        candidates: lens
            .iter()
            .enumerate()
            .map(|(d, n)| (0..*n).map(|j| (format!("c{d}_{j}"), j as f64)).collect())
            .collect(),
    }
}

/// Fitness additive over dimensions: `w[d][x_d]`; flips at `threshold`.
struct Additive {
    w: Vec<Vec<f64>>,
    threshold: f64,
    calls: u64,
}

impl Objective for Additive {
    fn evaluate(&mut self, x: &[usize]) -> Result<Evaluation, VictimError> {
        self.calls += 1;
        let f: f64 = x.iter().enumerate().map(|(d, j)| self.w[d][*j]).sum();
        Ok(Evaluation { fitness: f, flipped: f >= self.threshold, code: format!("{x:?}") })
    }

    fn evaluations(&self) -> u64 {
        self.calls
    }
}

fn additive(lens: &[usize], seed: u64, threshold: f64) -> Additive {
    let mut r = rng::stream(seed, "w", "weights");
    let w = lens.iter().map(|n| (0..=*n).map(|j| if j == 0 { 0.0 } else { rand::Rng::gen_range(&mut r, -0.1..0.1) }).collect()).collect();
    Additive { w, threshold, calls: 0 }
}

#[test]
fn schedule_endpoints_and_midpoint() {
    let p = ScheduleParams::default();
    assert_eq!(schedule(0, 20, &p), (1.5, 1.3, 0.6));
    let (w, c1, c2) = schedule(20, 20, &p);
    assert!((w - 0.6).abs() < 1e-12 && (c1 - 0.6).abs() < 1e-12 && (c2 - 1.3).abs() < 1e-12);
    let (w, c1, c2) = schedule(10, 20, &p);
    assert!((w - 1.05).abs() < 1e-12, "{w}");
    assert!((c1 - 0.95).abs() < 1e-12 && (c2 - 0.95).abs() < 1e-12);
    assert_eq!(sigmoid(0.0), 0.5);
}

#[test]
fn params_validation() {
    assert!(ScheduleParams::default().validate().is_ok());
    let bad = ScheduleParams { omega1: 0.5, ..Default::default() };
    assert!(bad.validate().is_err());
    assert!(ScheduleParams { pop_size: 0, ..Default::default() }.validate().is_err());
    assert_eq!(ScheduleParams::default().guided_count(), 10);
    assert_eq!(ScheduleParams { pop_size: 7, ..Default::default() }.guided_count(), 4);
}

#[test]
fn two_fold_init() {
    let pool = pool(&[50, 50, 50], 5);
    let params = ScheduleParams::default();
    let positions = init_positions(&pool, &params, &mut rng::stream(1, "s", rng::SWARM));
    assert_eq!(positions.len(), 20);
    for x in &positions[..10] {
        assert!(x.iter().all(|j| *j <= 5), "{x:?}");
    }
    // randomized half reaches beyond the top-k somewhere
    assert!(positions[10..].iter().flatten().any(|j| *j > 5));
    assert!(positions[10..].iter().flatten().all(|j| *j >= 1));
    let again = init_positions(&pool, &params, &mut rng::stream(1, "s", rng::SWARM));
    assert_eq!(positions, again);
}

#[test]
fn repair_drops_later_duplicates() {
    let mut p = pool(&[2, 2], 2);
    p.candidates[1][0].0 = "c0_0".into();
    let mut x = vec![1, 1];
    repair(&p, &mut x);
    assert_eq!(x, vec![1, 0]);
}

#[test]
fn empty_pool_reports_no_moves() {
    let p = pool(&[0, 0], 5);
    let mut obj = additive(&[0, 0], 1, 1.0);
    let r = run_strategy(StrategyKind::Pso, &p, &mut obj, &ScheduleParams::default(), &StrategyOptions::new(1, "s")).unwrap();
    assert!(r.no_moves);
    assert_eq!(r.queries, 0);
    assert_eq!(r.best_position, vec![0, 0]);
    let state = init_swarm(&p, &ScheduleParams::default(), None, &mut rng::stream(1, "s", rng::SWARM));
    assert!(state.particles.iter().all(|q| q.position == vec![0, 0]));
}

#[test]
fn consensus_is_a_fixed_point() {
    let p = pool(&[10, 10, 10], 5);
    let params = ScheduleParams { p_mutate: 0.0, ..Default::default() };
    let mut obj = additive(&[10, 10, 10], 3, 99.0);
    let mut state = init_swarm(&p, &params, None, &mut rng::stream(1, "s", rng::SWARM));
    for q in &mut state.particles {
        q.position = vec![3, 4, 5];
    }
    state.evaluate_initial(&mut obj).unwrap();
    let (mut r, mut m) = (rng::stream(2, "s", rng::SWARM), rng::stream(2, "s", rng::MUTATION));
    for _ in 0..5 {
        state.step(&mut obj, &p, &mut r, &mut m).unwrap();
        assert!(state.particles.iter().all(|q| q.position == vec![3, 4, 5]));
        assert!(state.particles.iter().flat_map(|q| &q.velocity).all(|v| *v == 0.0));
    }
}

#[test]
fn step_costs_one_query_per_particle_and_counts_stagnation() {
    let p = pool(&[10, 10], 5);
    let params = ScheduleParams::default();
    let mut obj = Additive { w: vec![vec![0.0; 11]; 2], threshold: 9.0, calls: 0 };
    let mut state = init_swarm(&p, &params, None, &mut rng::stream(1, "s", rng::SWARM));
    state.evaluate_initial(&mut obj).unwrap();
    assert_eq!(obj.calls, 20);
    let (mut r, mut m) = (rng::stream(1, "s", rng::SWARM), rng::stream(1, "s", rng::MUTATION));
    for i in 1..=3 {
        let improved = state.step(&mut obj, &p, &mut r, &mut m).unwrap();
        assert!(!improved);
        assert_eq!(obj.calls, 20 + 20 * i);
        assert_eq!(state.stagnation_counter, i as usize);
    }
}

#[test]
fn stagnation_resets_on_improvement() {
    let p = pool(&[30], 30);
    let params = ScheduleParams { pop_size: 2, ..Default::default() };
    let mut obj = Additive { w: vec![(0..=30).map(|j| j as f64).collect()], threshold: 1e9, calls: 0 };
    let mut state = init_swarm(&p, &params, None, &mut rng::stream(4, "s", rng::SWARM));
    state.evaluate_initial(&mut obj).unwrap();
    let (mut r, mut m) = (rng::stream(4, "s", rng::SWARM), rng::stream(4, "s", rng::MUTATION));
    let mut prev = state.best_fitness().unwrap();
    for _ in 0..params.max_iters {
        let improved = state.step(&mut obj, &p, &mut r, &mut m).unwrap();
        let now = state.best_fitness().unwrap();
        assert_eq!(improved, now > prev);
        if improved {
            assert_eq!(state.stagnation_counter, 0);
        }
        prev = now;
    }
}

#[test]
fn early_exit_on_flip() {
    let p = pool(&[5], 5);
    let mut obj = Additive { w: vec![vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]], threshold: 1.0, calls: 0 };
    let r = run_strategy(StrategyKind::Pso, &p, &mut obj, &ScheduleParams::default(), &StrategyOptions::new(1, "s")).unwrap();
    assert!(r.success);
    assert!(r.queries < 20, "{}", r.queries);
    assert_eq!(r.queries, obj.calls);
}

#[test]
fn without_early_exit_every_iteration_runs() {
    let p = pool(&[5], 5);
    let mut obj = Additive { w: vec![vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]], threshold: 1.0, calls: 0 };
    let params = ScheduleParams::default();
    let opts = StrategyOptions { early_exit: false, ..StrategyOptions::new(1, "s") };
    let r = run_strategy(StrategyKind::Pso, &p, &mut obj, &params, &opts).unwrap();
    assert!(r.success);
    assert_eq!(r.queries, (params.pop_size * (params.max_iters + 1)) as u64);
    assert_eq!(r.trajectory.last().unwrap().iteration, params.max_iters);
}

#[test]
fn budget_exhaustion_is_flagged() {
    struct Capped(Additive, u64);
    impl Objective for Capped {
        fn evaluate(&mut self, x: &[usize]) -> Result<Evaluation, VictimError> {
            if self.0.calls >= self.1 {
                return Err(VictimError::BudgetExhausted);
            }
            self.0.evaluate(x)
        }
        fn evaluations(&self) -> u64 {
            self.0.calls
        }
    }
    for kind in StrategyKind::ALL {
        let p = pool(&[8, 8], 4);
        let mut obj = Capped(additive(&[8, 8], 2, 99.0), 7);
        let r = run_strategy(kind, &p, &mut obj, &ScheduleParams::default(), &StrategyOptions::new(1, "s")).unwrap();
        assert!(r.budget_exhausted, "{kind}");
        assert_eq!(r.queries, 7, "{kind}");
    }
}

#[test]
fn mhm_equal_fitness_always_accepts() {
    assert_eq!(mhm_acceptance(0.3, 0.3), 1.0);
    assert_eq!(mhm_acceptance(0.3, 0.5), 1.0);
    assert!((mhm_acceptance(0.3, 0.2) - (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn greedy_matches_brute_force_on_additive_victim() {
    for seed in 0..10 {
        let lens = [3, 3, 3];
        let p = pool(&lens, 3);
        let mut obj = additive(&lens, seed, 99.0);
        let mut best = f64::NEG_INFINITY;
        for a in 0..=3 {
            for b in 0..=3 {
                for c in 0..=3 {
                    best = best.max(obj.w[0][a] + obj.w[1][b] + obj.w[2][c]);
                }
            }
        }
        let r = run_strategy(StrategyKind::Greedy, &p, &mut obj, &ScheduleParams::default(), &StrategyOptions::new(seed, "s")).unwrap();
        assert!((r.best_fitness - best).abs() < 1e-12, "seed {seed}: {} vs {best}", r.best_fitness);
    }
}

#[test]
fn strategy_names_round_trip() {
    for k in StrategyKind::ALL {
        assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
    }
    assert!("sa".parse::<StrategyKind>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn best_fitness_is_monotone_and_deterministic(seed in 0u64..1000, kind in 0usize..5) {
        let kind = StrategyKind::ALL[kind];
        let lens = [6, 9, 4];
        let p = pool(&lens, 3);
        let params = ScheduleParams { pop_size: 6, max_iters: 6, ..Default::default() };
        let opts = StrategyOptions::new(seed, "s");
        let mut obj = additive(&lens, seed, 99.0);
        let r = run_strategy(kind, &p, &mut obj, &params, &opts).unwrap();
        prop_assert_eq!(r.queries, obj.calls);
        for w in r.trajectory.windows(2) {
            prop_assert!(w[1].best_fitness >= w[0].best_fitness);
        }
        for x in r.trajectory.iter().map(|t| &t.best_position).chain(&r.final_population) {
            for (d, j) in x.iter().enumerate() {
                prop_assert!(*j <= lens[d]);
            }
        }
        let mut obj2 = additive(&lens, seed, 99.0);
        let r2 = run_strategy(kind, &p, &mut obj2, &params, &opts).unwrap();
        prop_assert_eq!(r, r2);
    }

    #[test]
    fn personal_bests_dominate_reports(seed in 0u64..1000) {
        let lens = [7, 7];
        let p = pool(&lens, 4);
        let params = ScheduleParams { pop_size: 5, max_iters: 8, ..Default::default() };
        let mut obj = additive(&lens, seed, 99.0);
        let mut state = init_swarm(&p, &params, None, &mut rng::stream(seed, "s", rng::SWARM));
        state.evaluate_initial(&mut obj).unwrap();
        let (mut r, mut m) = (rng::stream(seed, "s", rng::SWARM), rng::stream(seed, "s", rng::MUTATION));
        let mut seen = vec![f64::NEG_INFINITY; params.pop_size];
        while !state.is_done() {
            state.step(&mut obj, &p, &mut r, &mut m).unwrap();
            for (i, q) in state.particles.iter().enumerate() {
                seen[i] = seen[i].max(q.fitness.unwrap());
                prop_assert!(q.personal_best.as_ref().unwrap().fitness >= seen[i]);
            }
            let gmax = state.particles.iter().map(|q| q.personal_best.as_ref().unwrap().fitness).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(state.best_fitness().unwrap(), gmax);
        }
    }
}
