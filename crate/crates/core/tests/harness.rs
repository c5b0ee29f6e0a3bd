use t3s::bench::{run_bench, BenchManifest, LoadedManifest};
use t3s::constraints::{check_constraints, ScoredScenario};
use t3s::synth::{
    build_suite, constraint_scenarios, gen_scene, perturb_noise, Scenario, SuiteKind, SuiteSpec, Vocabulary,
};
use t3s::{score_pair, FbdWeights, MetricConfig, ScoreReport};

fn score_with(scenarios: &[Scenario], vocab: &Vocabulary, metric: impl Fn(&Scenario, ScoreReport) -> ScoreReport) -> Vec<ScoredScenario> {
    scenarios
        .iter()
        .map(|sc| {
            let w = FbdWeights::identity(sc.base.entities.feature_dim);
            let report = score_pair(&sc.pair(), Some(&w), Some(&vocab.table), &MetricConfig::default()).unwrap();
            ScoredScenario { meta: sc.meta.clone(), report: metric(sc, report) }
        })
        .collect()
}

/// Fraction of reference predicates that reappear in the distorted annotation.
fn predicate_overlap(sc: &Scenario) -> f64 {
    let mut pool: Vec<&str> = sc.variant.annotation.relations.iter().map(|r| r.predicate()).collect();
    let rels = &sc.base.annotation.relations;
    let hits = rels
        .iter()
        .filter(|r| match pool.iter().position(|p| *p == r.predicate()) {
            Some(i) => {
                pool.swap_remove(i);
                true
            }
            None => false,
        })
        .count();
    if rels.is_empty() { 1.0 } else { hits as f64 / rels.len() as f64 }
}

fn small_spec(kind: SuiteKind, scenes: usize) -> SuiteSpec {
    SuiteSpec { scenes, ..SuiteSpec::new(kind) }
}

#[test]
fn entity_blind_metric_fails_the_entity_shift_check() {
    let vocab = Vocabulary::standard();
    let scenarios = constraint_scenarios(&small_spec(SuiteKind::Constraints, 20), 3, &vocab).unwrap();

    let honest = check_constraints(&score_with(&scenarios, &vocab, |_, r| r));
    assert!(honest.check("c2_entity_shift").unwrap().passed, "{honest}");

    let blind = check_constraints(&score_with(&scenarios, &vocab, |sc, mut r| {
        r.t3s = predicate_overlap(sc);
        r
    }));
    let c2 = blind.check("c2_entity_shift").unwrap();
    assert!(!c2.passed, "{blind}");
    assert!(blind.check("c3_relation_shift").unwrap().passed, "{blind}");
    assert!(!blind.passed());
}

#[test]
fn zero_noise_scores_exactly_one() {
    let vocab = Vocabulary::standard();
    let scenarios: Vec<Scenario> = (0..25)
        .map(|seed| {
            let scene = gen_scene(seed, 5, 16, &vocab).unwrap();
            perturb_noise(&scene, 0.0, seed).unwrap()
        })
        .collect();
    let report = check_constraints(&score_with(&scenarios, &vocab, |_, r| r));
    let c1 = report.check("c1_invariance").unwrap();
    assert!(c1.passed);
    assert_eq!(c1.stats["min"], 1.0);
    assert_eq!(c1.stats["mean"], 1.0);
}

#[test]
fn synthetic_bench_is_monotone_across_levels() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_suite(&small_spec(SuiteKind::Bench, 2), 11, dir.path()).unwrap();
    let report = run_bench(&LoadedManifest::load(&manifest).unwrap(), 2, false).unwrap();

    assert_eq!(report.pairs, 20);
    assert_eq!(report.levels.len(), 10);
    assert!(report.levels.iter().all(|l| l.n == 2));
    assert_eq!(report.degradations.len(), 2);
    assert!(report.monotone(), "{:?}", report.monotonicity);
    assert!(report.skips.is_empty());
}

#[test]
fn identical_pairs_score_one_at_every_level() {
    let dir = tempfile::tempdir().unwrap();
    let path = build_suite(&small_spec(SuiteKind::Bench, 1), 5, dir.path()).unwrap();
    let mut manifest = BenchManifest::parse(&std::fs::read(&path).unwrap()).unwrap();
    for p in &mut manifest.pairs {
        p.dist = p.reference.clone();
        p.ann_dist = p.ann_ref.clone();
    }
    let loaded = LoadedManifest { manifest, base_dir: dir.path().to_path_buf() };
    let report = run_bench(&loaded, 1, false).unwrap();

    assert!(report.scores.iter().all(|s| s.t3s == 1.0));
    assert_eq!(report.overall, Some(1.0));
    assert!(report.monotone());
}
