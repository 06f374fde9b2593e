use super::*;
use crate::frontend::{interpret, parse_with_id, InterpOptions, DEFAULT_STEP_LIMIT};
use crate::transforms::OpKind;
use crate::victims::VictimSpec;
use proptest::prelude::*;

const LOOP: &str = "int acc(int n) {\n    int total = 0;\n    int i;\n    for (i = 0; i < n; i++) {\n        total += i;\n    }\n    print(total);\n    return total;\n}\n";

const SEQ: &str = "ssize_t seq_read_iter(struct kiocb *iocb, struct iov_iter *iter) {\n    struct seq_file *m = file->private_data;\n    size_t copied = 0;\n    size_t n;\n    while (1) {\n    }\n    return copied;\n}\n";

fn victim(spec: &str) -> VictimHandle {
    VictimSpec::parse(spec).unwrap().connect().unwrap()
}

fn run(src: &str, spec: &str, cfg: &AttackConfig) -> (AttackOutcome, u64) {
    run_as("u", src, spec, cfg)
}

/// The unit id scopes every random sub-stream, so it is part of the seed.
fn run_as(id: &str, src: &str, spec: &str, cfg: &AttackConfig) -> (AttackOutcome, u64) {
    let lexicon = Lexicon::bundled();
    let task = AttackTask { unit: parse_with_id(id, src).unwrap(), true_label: 1, config: cfg, lexicon: &lexicon };
    let mut v = victim(spec);
    let out = attack(&task, &mut v).unwrap();
    (out, v.queries())
}

#[test]
fn sniffer_switches_after_theta_and_rewrites() {
    let cfg = AttackConfig::default();
    let (out, counted) = run_as("acc", LOOP, "struct-sniffer", &cfg);
    assert!(out.success);
    let kinds: Vec<(EventKind, Channel)> = out.trace.iter().map(|e| (e.kind, e.channel)).collect();
    assert_eq!(
        kinds,
        vec![(EventKind::Start, Channel::Lexical), (EventKind::Switch, Channel::Lexical), (EventKind::Success, Channel::Structural)]
    );
    assert_eq!(out.trace[1].stagnation, 2);
    let lexical: Vec<usize> = out.iterations.iter().filter(|r| r.channel == Channel::Lexical).map(|r| r.stagnation).collect();
    assert_eq!(lexical, vec![1, 2]);
    assert_eq!(out.transforms.len(), 1);
    assert_eq!(out.transforms[0].op, OpKind::For2While);
    assert_eq!(out.queries_used, counted);
    assert!(out.queries_used <= cfg.budget);
    assert!(out.p_adv < 0.5);

    let original = parse_with_id("u", LOOP).unwrap();
    let adv = parse_with_id("u", &out.adversarial_code).unwrap();
    for n in [0, 1, 5, 9] {
        let a = interpret(&original.ast, &[n], InterpOptions::with_limit(DEFAULT_STEP_LIMIT)).unwrap();
        let b = interpret(&adv.ast, &[n], InterpOptions::with_limit(DEFAULT_STEP_LIMIT)).unwrap();
        assert!(a.same_behavior(&b));
    }
}

#[test]
fn budget_two_spends_two() {
    let cfg = AttackConfig { budget: 2, ..AttackConfig::default() };
    let (out, counted) = run(SEQ, "planted", &cfg);
    assert_eq!(counted, 2);
    assert_eq!(out.queries_used, 2);
    assert!(out.budget_exhausted);
    assert!(!out.success);
    assert_eq!(out.adversarial_code, SEQ);
}

#[test]
fn budget_one_is_just_the_baseline() {
    let cfg = AttackConfig { budget: 1, ..AttackConfig::default() };
    let (out, counted) = run(SEQ, "planted", &cfg);
    assert_eq!((out.queries_used, counted), (1, 1));
    assert!(out.budget_exhausted && !out.success);
}

#[test]
fn misclassified_original_is_skipped() {
    let (out, counted) = run(LOOP, "constant:0.2", &AttackConfig::default());
    assert!(out.skipped);
    assert_eq!(counted, 1);
    assert!(!out.success);
}

#[test]
fn planted_secret_found_by_renaming() {
    let cfg = AttackConfig { seed: 3, ..AttackConfig::default() };
    let (out, _) = run(SEQ, "planted", &cfg);
    assert!(out.success, "{:?}", out.trace);
    assert!(out.transforms.is_empty());
    assert!(!out.substitution.is_empty());
    assert!((out.delta_drop - (out.p_orig - out.p_adv)).abs() < 1e-12);
    assert!(out.cad.is_some());
}

#[test]
fn hopeless_victim_terminates_within_budget() {
    let cfg = AttackConfig { budget: 900, ..AttackConfig::default() };
    let (out, counted) = run(LOOP, "constant:0.9", &cfg);
    assert!(!out.success);
    assert_eq!(out.queries_used, counted);
    assert!(counted <= 900);
    let switches = out.trace.iter().filter(|e| e.kind == EventKind::Switch).count();
    assert!(switches <= DEFAULT_MAX_SWITCHES);
    let last = out.trace.last().unwrap().kind;
    assert!(matches!(last, EventKind::Finished | EventKind::BudgetExhausted), "{last:?}");
}

#[test]
fn config_is_validated() {
    let lexicon = Lexicon::bundled();
    let cfg = AttackConfig { lambda: 0.0, ..AttackConfig::default() };
    let task = AttackTask { unit: parse_with_id("u", LOOP).unwrap(), true_label: 1, config: &cfg, lexicon: &lexicon };
    assert!(matches!(attack(&task, &mut victim("planted")), Err(AttackError::Config(_))));
    let empty = Lexicon { vocabulary: Vec::new(), provider: EmbeddingProvider::subword_hash() };
    let cfg = AttackConfig::default();
    let task = AttackTask { unit: parse_with_id("u", LOOP).unwrap(), true_label: 1, config: &cfg, lexicon: &empty };
    assert!(matches!(attack(&task, &mut victim("planted")), Err(AttackError::Config(_))));
}

fn warm_after_for2while() -> (Candidate, SourceUnit) {
    let lexicon = Lexicon::bundled();
    let base = parse_with_id("u", LOOP).unwrap();
    let pool = build_pool(&base, &lexicon.vocabulary, &lexicon.provider, 30).unwrap();
    let position: Vec<usize> = (0..pool.dims()).map(|d| d % 3 + 1).collect();
    let substitution = pool.substitution(&position);
    let site = base.ast.body_stmts()[2].id;
    let moved = apply_transform(&base, TransformOp { op: OpKind::For2While, site }).unwrap();
    let rendered = rename(&moved, &substitution).unwrap();
    let warm = Candidate { base: moved, substitution, transforms: Vec::new(), rendered, fitness: 0.0, flipped: false };
    (warm, base)
}

#[test]
fn pinned_particle_reproduces_inherited_code() {
    let lexicon = Lexicon::bundled();
    let (warm, _) = warm_after_for2while();
    let pool = build_pool(&warm.base, &lexicon.vocabulary, &lexicon.provider, 30).unwrap();
    let mut r = rng::stream(1, "u", rng::SWARM);
    let swarm = fuse_lexical(&warm, &pool, &ScheduleParams::default(), &mut r);
    let pinned = &swarm.particles[0].position;
    let code = rename(&warm.base, &pool.substitution(pinned)).unwrap().source_text;
    assert_eq!(code, warm.rendered.source_text);
    let mut v = victim("token-bag");
    let a = v.predict(&code).unwrap().p_vulnerable;
    let b = v.predict(&warm.rendered.source_text).unwrap().p_vulnerable;
    assert_eq!(a, b);
}

#[test]
fn pruning_drops_vanished_names_only() {
    let (warm, _) = warm_after_for2while();
    let mut sub = warm.substitution.clone();
    sub.insert("gone".into(), "elsewhere".into());
    let pruned = prune_substitution(&warm.base, &sub);
    assert_eq!(pruned, warm.substitution);
    assert_eq!(prune_substitution(&warm.base, &warm.substitution), warm.substitution);
}

#[test]
fn structural_fusion_keeps_renamings() {
    let (warm, _) = warm_after_for2while();
    let profile = fuse_structural(&warm, DEFAULT_LAMBDA).unwrap();
    let plain = extract_profile(&warm.base, DEFAULT_LAMBDA).unwrap();
    assert_eq!(profile.counts, plain.counts);
}

fn check_trace(out: &AttackOutcome, theta: usize) {
    let mut last = f64::NEG_INFINITY;
    for r in &out.iterations {
        assert!(r.best_fitness >= last);
        last = r.best_fitness;
    }
    // each switch follows θ consecutive stagnant iterations of the leaving channel
    for e in out.trace.iter().filter(|e| e.kind == EventKind::Switch) {
        assert_eq!(e.stagnation, theta);
        assert!(e.after_iterations >= theta);
        for k in 0..theta {
            let r = &out.iterations[e.after_iterations - 1 - k];
            assert_eq!(r.channel, e.channel);
            assert_eq!(r.stagnation, theta - k);
            assert!(!r.improved);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shared_best_monotone_and_switches_follow_stagnation(seed in 0u64..1000, bag in 0usize..2) {
        let spec = ["token-bag", "struct-sniffer"][bag];
        let cfg = AttackConfig { seed, budget: 700, ..AttackConfig::default() };
        let (out, counted) = run(LOOP, spec, &cfg);
        prop_assert!(counted <= 700);
        prop_assert_eq!(out.queries_used, counted);
        check_trace(&out, cfg.schedule.theta);
        if out.success {
            prop_assert!(out.p_adv < 0.5);
        }
    }
}
