use proptest::prelude::*;
use t3s::embedding::EmbeddingTable;
use t3s::entity::{Entity, EntitySet, Region};
use t3s::fbd::{decouple, FbdWeights};
use t3s::matching::{set_score, variance_fusion};
use t3s::scorer::harmonic_couple;
use t3s::semantics::{avg_max_similarity, global_relation_prior};
use t3s::synth::{random_scene, Vocabulary};
use t3s::vector::cosine;
use t3s::{score_pair, MetricConfig, PairInput};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim)
}

fn nonzero(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    vector(dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn nonnegative_list(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(0.0..10.0f64, dim).prop_filter("nonzero", |v| v.iter().any(|x| *x > 1e-3)),
        1..=max,
    )
}

fn vector_list(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(nonzero(dim), 1..=max)
}

fn regions(dim: usize) -> impl Strategy<Value = Vec<Region>> {
    prop::collection::vec((nonzero(dim), 1.0..1e4f64), 1..=8)
        .prop_map(|v| v.into_iter().map(|(feature, area)| Region { feature, area }).collect())
}

fn entity_set(dim: usize) -> impl Strategy<Value = EntitySet> {
    (nonzero(dim), prop::collection::vec((nonzero(dim), 1.0..1e4f64), 1..=6)).prop_map(|(g, es)| {
        let entities = es
            .into_iter()
            .enumerate()
            .map(|(i, (f, a))| Entity::new(format!("e{i}"), f, a))
            .collect();
        EntitySet::new("p", g, entities).unwrap()
    })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded((a, b) in (1usize..8).prop_flat_map(|d| (vector(d), vector(d)))) {
        let c = cosine(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&b, &a));
    }

    #[test]
    fn avg_max_self_similarity_is_one(v in (1usize..6).prop_flat_map(|d| vector_list(d, 6))) {
        prop_assert_eq!(avg_max_similarity(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn avg_max_is_permutation_invariant(
        (v1, v2, p1, p2) in (1usize..5)
            .prop_flat_map(|d| (vector_list(d, 6), vector_list(d, 6)))
            .prop_flat_map(|(a, b)| {
                let (n1, n2) = (a.len(), b.len());
                (Just(a), Just(b), permutation(n1), permutation(n2))
            })
    ) {
        let base = avg_max_similarity(&v1, &v2).unwrap();
        let q1: Vec<_> = p1.iter().map(|&i| v1[i].clone()).collect();
        let q2: Vec<_> = p2.iter().map(|&i| v2[i].clone()).collect();
        prop_assert!((avg_max_similarity(&q1, &q2).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn zeroing_a_row_never_increases_avg_max(
        (v1, v2, k) in (1usize..5)
            .prop_flat_map(|d| (nonnegative_list(d, 6), nonnegative_list(d, 6)))
            .prop_flat_map(|(a, b)| { let n = a.len(); (Just(a), Just(b), 0..n) })
    ) {
        let before = avg_max_similarity(&v1, &v2).unwrap();
        let mut zeroed = v1.clone();
        zeroed[k].iter_mut().for_each(|x| *x = 0.0);
        prop_assert!(avg_max_similarity(&zeroed, &v2).unwrap() <= before + 1e-12);
    }

    #[test]
    fn global_prior_is_in_unit_interval((a, b) in (1usize..8).prop_flat_map(|d| (nonzero(d), nonzero(d)))) {
        let r = global_relation_prior(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn harmonic_mean_bounds(a in -2.0..2.0f64, b in -2.0..2.0f64, eps in 1e-9..1e-3f64) {
        let c = harmonic_couple(a, b, eps);
        let (ca, cb) = (a.clamp(eps, 1.0), b.clamp(eps, 1.0));
        prop_assert!(c.value >= ca.min(cb) && c.value <= ca.max(cb));
        prop_assert!(c.value <= 2.0 * ca.min(cb) + 1e-15);
        prop_assert!((eps..=1.0).contains(&c.value));
    }

    #[test]
    fn set_score_of_identical_sets_is_one(e in (1usize..10).prop_flat_map(regions)) {
        prop_assert_eq!(set_score(&e, &e, 0.1, 0.0).unwrap().score, 1.0);
    }

    #[test]
    fn set_score_is_a_mean_of_valid_similarities(
        (e1, e2, tau) in (1usize..10).prop_flat_map(|d| (regions(d), regions(d), 0.01..2.0f64))
    ) {
        let s = set_score(&e1, &e2, tau, 0.0).unwrap();
        if s.degenerate {
            prop_assert_eq!(s.score, 0.0);
        } else {
            prop_assert!(s.score > 0.0 && s.score <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn set_score_ignores_second_set_order(
        (e1, e2, p) in (1usize..6)
            .prop_flat_map(|d| (regions(d), regions(d)))
            .prop_flat_map(|(a, b)| { let n = b.len(); (Just(a), Just(b), permutation(n)) })
    ) {
        let shuffled: Vec<Region> = p.iter().map(|&i| e2[i].clone()).collect();
        let a = set_score(&e1, &e2, 0.1, 0.0).unwrap().score;
        let b = set_score(&e1, &shuffled, 0.1, 0.0).unwrap().score;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fusion_weights_are_convex(
        (a, b, c, d, lambda) in (1usize..6).prop_flat_map(|k| (regions(k), regions(k), regions(k), regions(k), 0.01..5.0f64))
    ) {
        let f = variance_fusion(&a, &b, &c, &d, lambda);
        prop_assert!((0.0..=1.0).contains(&f.w_fg) && (0.0..=1.0).contains(&f.w_bg));
        prop_assert!((f.w_fg + f.w_bg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decoupling_reconstructs_the_latent(
        (es, seed) in (1usize..6).prop_flat_map(|d| (entity_set(d), any::<u64>()))
    ) {
        let w = FbdWeights::random_scaled(es.feature_dim, 2 * es.feature_dim, seed, 0.5);
        let d = decouple(&es, &w).unwrap();
        for ((f, b), z) in d.fg.iter().zip(&d.bg).zip(&d.latent) {
            for ((x, y), zk) in f.feature.iter().zip(&b.feature).zip(z) {
                prop_assert!((x + y - zk).abs() <= 1e-12 * (1.0 + zk.abs()));
            }
        }
        prop_assert!(d.p.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn decoupling_is_permutation_equivariant(
        (es, p, seed) in (1usize..6)
            .prop_flat_map(entity_set)
            .prop_flat_map(|es| { let n = es.len(); (Just(es), permutation(n), any::<u64>()) })
    ) {
        let w = FbdWeights::random_scaled(es.feature_dim, 2 * es.feature_dim, seed, 0.5);
        let mut permuted = es.clone();
        permuted.entities = p.iter().map(|&i| es.entities[i].clone()).collect();
        let a = decouple(&es, &w).unwrap();
        let b = decouple(&permuted, &w).unwrap();
        for (k, &i) in p.iter().enumerate() {
            prop_assert!((a.p[i] - b.p[k]).abs() < 1e-9);
            for (x, y) in a.latent[i].iter().zip(&b.latent[k]) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }
}

fn vocab() -> Vocabulary {
    Vocabulary::standard()
}

fn scene_pair(seed: u64) -> (PairInput, usize) {
    let v = vocab();
    let dim = 1 + (seed % 12) as usize;
    let a = random_scene(seed, dim, &v, true).unwrap();
    let b = random_scene(seed ^ 0xABCD, dim, &v, true).unwrap();
    (PairInput::new(a.side(), b.side()), dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_in_unit_interval_and_deterministic(seed in any::<u64>(), symmetric in any::<bool>()) {
        let v = vocab();
        let (pair, dim) = scene_pair(seed);
        let w = FbdWeights::random_scaled(dim, 2 * dim, seed, 1.0);
        let cfg = MetricConfig { symmetric_mode: symmetric, ..Default::default() };
        let r = score_pair(&pair, Some(&w), Some(&v.table), &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.t3s));
        prop_assert!(r.scalars().iter().all(|x| x.is_finite()));
        let again = score_pair(&pair, Some(&w), Some(&v.table), &cfg).unwrap();
        prop_assert_eq!(r.to_json(), again.to_json());
    }

    #[test]
    fn self_similarity_is_one(seed in any::<u64>(), scale in 0.1..30.0f64) {
        let v = vocab();
        let dim = 1 + (seed % 12) as usize;
        let s = random_scene(seed, dim, &v, false).unwrap();
        let w = FbdWeights::random_scaled(dim, 2 * dim, seed, scale);
        let r = score_pair(&PairInput::new(s.side(), s.side()), Some(&w), Some(&v.table), &MetricConfig::default()).unwrap();
        prop_assert!((r.t3s - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn harmonic_bound_holds_for_scored_pairs(seed in any::<u64>()) {
        let v = vocab();
        let (pair, dim) = scene_pair(seed);
        let cfg = MetricConfig::default();
        let r = score_pair(&pair, Some(&FbdWeights::identity(dim)), Some(&v.table), &cfg).unwrap();
        let a = r.ent_term.clamp(cfg.clamp_eps, 1.0);
        let b = r.rel_term.clamp(cfg.clamp_eps, 1.0);
        prop_assert!(r.t3s >= a.min(b) && r.t3s <= a.max(b));
        prop_assert!(r.t3s <= 2.0 * a.min(b) + 1e-15);
    }

    #[test]
    fn without_relations_the_score_is_the_entity_term(seed in any::<u64>()) {
        let v = vocab();
        let (pair, dim) = scene_pair(seed);
        let cfg = MetricConfig { disable_relation: true, ..Default::default() };
        let r = score_pair(&pair, Some(&FbdWeights::identity(dim)), Some(&v.table), &cfg).unwrap();
        prop_assert_eq!(r.t3s, r.ent_term.clamp(cfg.clamp_eps, 1.0));
    }

    #[test]
    fn without_decoupling_fusion_is_foreground_only(seed in any::<u64>()) {
        let v = vocab();
        let (pair, _) = scene_pair(seed);
        let cfg = MetricConfig { disable_fbd: true, ..Default::default() };
        let r = score_pair(&pair, None, Some(&v.table), &cfg).unwrap();
        prop_assert_eq!((r.fusion.w_fg, r.fusion.w_bg), (1.0, 0.0));
        prop_assert_eq!(r.eps_f, r.eps_b);
        prop_assert_eq!(r.eps_ent, r.eps_f);
    }

    #[test]
    fn positive_rescaling_leaves_the_undecoupled_score_unchanged(
        seed in any::<u64>(),
        scale in 1e-3..1e3f64,
        rescale_reference in any::<bool>(),
    ) {
        let v = vocab();
        let (pair, _) = scene_pair(seed);
        let cfg = MetricConfig { disable_fbd: true, ..Default::default() };
        let mut scaled = pair.clone();
        let side = if rescale_reference { &mut scaled.reference } else { &mut scaled.distorted };
        side.entities.global_feature.iter_mut().for_each(|x| *x *= scale);
        for e in &mut side.entities.entities {
            e.feature.iter_mut().for_each(|x| *x *= scale);
        }
        let a = score_pair(&pair, None, Some(&v.table), &cfg).unwrap().t3s;
        let b = score_pair(&scaled, None, Some(&v.table), &cfg).unwrap().t3s;
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn positive_rescaling_commutes_with_linear_decoupling(seed in any::<u64>(), scale in 1e-2..1e2f64) {
        let v = vocab();
        let (pair, dim) = scene_pair(seed);
        let mut w = FbdWeights::random_scaled(dim, 2 * dim, seed, 1.0);
        w.b_e.iter_mut().for_each(|b| *b = 0.0);
        w.g_b = 0.0;
        w.g_w.iter_mut().for_each(|g| *g = 0.0);
        let w = w.with_strengths(Some(0.0), Some(0.0));
        let mut scaled = pair.clone();
        scaled.distorted.entities.global_feature.iter_mut().for_each(|x| *x *= scale);
        for e in &mut scaled.distorted.entities.entities {
            e.feature.iter_mut().for_each(|x| *x *= scale);
        }
        let cfg = MetricConfig::default();
        let a = score_pair(&pair, Some(&w), Some(&v.table), &cfg).unwrap().t3s;
        let b = score_pair(&scaled, Some(&w), Some(&v.table), &cfg).unwrap().t3s;
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn symmetric_mode_ignores_argument_order(seed in any::<u64>()) {
        let v = vocab();
        let (pair, dim) = scene_pair(seed);
        let w = FbdWeights::identity(dim);
        let cfg = MetricConfig { symmetric_mode: true, ..Default::default() };
        let a = score_pair(&pair, Some(&w), Some(&v.table), &cfg).unwrap().t3s;
        let b = score_pair(&pair.swapped(), Some(&w), Some(&v.table), &cfg).unwrap().t3s;
        prop_assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn phrase_embedding_ignores_word_order(words in prop::sample::subsequence(vec!["cls00", "kin01", "pred02", "alt03", "qux"], 1..=5)) {
        let t: &EmbeddingTable = &vocab().table;
        let forward = words.join(" ");
        let backward: Vec<_> = words.iter().rev().copied().collect();
        prop_assert_eq!(t.embed_phrase(&forward).vector, t.embed_phrase(&backward.join(" ")).vector);
    }
}
