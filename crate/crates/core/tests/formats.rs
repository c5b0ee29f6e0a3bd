use std::collections::BTreeSet;

use proptest::prelude::*;
use t3s::{EmbeddingTable, Entity, EntitySet, Error, FbdWeights, MetricConfig, Relation, SemanticAnnotation};

fn invalid_field(err: &Error) -> Option<&str> {
    match err {
        Error::Invalid { field, .. } => Some(field),
        Error::File { source, .. } => invalid_field(source),
        _ => None,
    }
}

fn dimension_context(err: &Error) -> Option<&str> {
    match err {
        Error::DimensionMismatch { context, .. } => Some(context),
        _ => None,
    }
}

#[test]
fn truncated_entity_set_is_malformed() {
    let err = EntitySet::parse(br#"{"image_id": "a", "feature_dim": 2, "global_fea"#).unwrap_err();
    assert!(matches!(err, Error::Malformed(_)), "{err}");
}

#[test]
fn entity_feature_of_wrong_width_names_the_entity() {
    let doc = br#"{"image_id": "a", "feature_dim": 2, "global_feature": [1, 0],
        "entities": [{"id": "e0", "feature": [1, 0], "area": 1},
                     {"id": "e1", "feature": [1, 0, 0], "area": 1}]}"#;
    let err = EntitySet::parse(doc).unwrap_err();
    assert!(dimension_context(&err).unwrap().contains("entities[1]"), "{err}");
}

#[test]
fn zero_area_is_invalid() {
    let doc = br#"{"image_id": "a", "feature_dim": 1, "global_feature": [1],
        "entities": [{"id": "e0", "feature": [1], "area": 0}]}"#;
    assert_eq!(invalid_field(&EntitySet::parse(doc).unwrap_err()), Some("entities[0].area"));
}

#[test]
fn duplicate_entity_ids_are_invalid() {
    let doc = br#"{"image_id": "a", "feature_dim": 1, "global_feature": [1],
        "entities": [{"id": "x", "feature": [1], "area": 1}, {"id": "x", "feature": [2], "area": 1}]}"#;
    assert_eq!(invalid_field(&EntitySet::parse(doc).unwrap_err()), Some("entities[1].id"));
}

#[test]
fn all_zero_global_feature_is_invalid() {
    let doc = br#"{"image_id": "a", "feature_dim": 2, "global_feature": [0, 0], "entities": []}"#;
    assert_eq!(invalid_field(&EntitySet::parse(doc).unwrap_err()), Some("global_feature"));
}

#[test]
fn annotation_with_numeric_class_is_malformed() {
    let doc = br#"{"image_id": "a", "classes": ["dog", 3], "relations": []}"#;
    assert!(matches!(SemanticAnnotation::parse(doc), Err(Error::Malformed(_))));
}

#[test]
fn embedding_row_count_must_match_header() {
    let err = EmbeddingTable::parse(b"3 2\ncat 1 0\ndog 0 1\n").unwrap_err();
    assert!(matches!(err, Error::Malformed(ref m) if m.contains("3 rows")), "{err}");
}

#[test]
fn embedding_row_of_wrong_width_names_the_line() {
    let err = EmbeddingTable::parse(b"2 2\ncat 1 0\ndog 0 1 1\n").unwrap_err();
    assert!(dimension_context(&err).unwrap().contains("line 3"), "{err}");
}

#[test]
fn weights_with_three_layers_are_rejected() {
    let mut w = FbdWeights::identity(2);
    w.layers = 3;
    w.p.push(w.p[0].clone());
    let err = FbdWeights::parse(w.to_json().as_bytes()).unwrap_err();
    assert_eq!(invalid_field(&err), Some("layers"));
}

#[test]
fn config_with_unknown_key_or_bad_tau_is_rejected() {
    assert!(matches!(MetricConfig::parse(br#"{"temperature": 0.1}"#), Err(Error::Malformed(_))));
    assert_eq!(invalid_field(&MetricConfig::parse(br#"{"tau": 0}"#).unwrap_err()), Some("tau"));
}

#[test]
fn load_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.entities.json");
    std::fs::write(&path, br#"{"image_id": "a", "feature_dim": 1, "global_feature": [0], "entities": []}"#).unwrap();
    let err = EntitySet::load(&path).unwrap_err();
    assert!(err.to_string().contains("bad.entities.json"), "{err}");
    assert_eq!(invalid_field(&err), Some("global_feature"));
}

fn float() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        Just(5e-324),
        Just(0.1),
    ]
}

fn entity_set() -> impl Strategy<Value = EntitySet> {
    (1usize..6).prop_flat_map(|d| {
        (
            "[a-z0-9/_]{1,12}",
            prop::collection::vec(float(), d).prop_filter("nonzero", |v| v.iter().any(|&x| x != 0.0)),
            prop::collection::vec(
                (
                    prop::collection::vec(float(), d),
                    (1e-300..1e12f64),
                    prop::option::of(0.0..=1.0f64),
                ),
                0..6,
            ),
        )
            .prop_map(|(id, g, es)| {
                let entities = es
                    .into_iter()
                    .enumerate()
                    .map(|(i, (f, a, p))| Entity { fg_prob: p, ..Entity::new(format!("e{i}"), f, a) })
                    .collect();
                EntitySet::new(id, g, entities).unwrap()
            })
    })
}

fn label() -> impl Strategy<Value = String> {
    "[a-z]{1,6}( [a-z]{1,6}){0,2}"
}

fn annotation() -> impl Strategy<Value = SemanticAnnotation> {
    (
        "[a-z0-9]{1,8}",
        prop::collection::vec(label(), 0..6),
        prop::collection::vec((label(), label(), label()), 0..6),
    )
        .prop_map(|(id, classes, rels)| {
            let rels = rels.iter().map(|(s, p, o)| Relation::new(s, p, o)).collect();
            SemanticAnnotation::new(id, classes, rels).unwrap()
        })
}

fn table() -> impl Strategy<Value = EmbeddingTable> {
    (1usize..6).prop_flat_map(|d| {
        prop::collection::btree_set("[a-z][a-z0-9_]{0,8}", 1..8).prop_flat_map(move |words: BTreeSet<String>| {
            let n = words.len();
            prop::collection::vec(prop::collection::vec(float(), d), n).prop_map(move |vs| {
                let mut t = EmbeddingTable::new(d);
                for (w, v) in words.iter().zip(vs) {
                    t.insert(w, v).unwrap();
                }
                t
            })
        })
    })
}

fn config() -> impl Strategy<Value = MetricConfig> {
    (
        (1e-6..10.0f64, 1e-6..10.0f64, 1e-9..0.0099f64),
        (prop::option::of(0.0..5.0f64), prop::option::of(0.0..5.0f64), -1.0..1.0f64),
        (any::<bool>(), any::<bool>(), any::<bool>()),
    )
        .prop_map(|((tau, lambda_bg, clamp_eps), (alpha_fbd, beta_fbd, match_threshold), (s, f, r))| MetricConfig {
            tau,
            lambda_bg,
            clamp_eps,
            alpha_fbd,
            beta_fbd,
            match_threshold,
            symmetric_mode: s,
            disable_fbd: f,
            disable_relation: r,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn entity_sets_round_trip(es in entity_set()) {
        let once = EntitySet::parse(es.to_json().as_bytes()).unwrap();
        prop_assert_eq!(&once, &es);
        prop_assert_eq!(once.to_json(), es.to_json());
    }

    #[test]
    fn annotations_round_trip(ann in annotation()) {
        let once = SemanticAnnotation::parse(ann.to_json().as_bytes()).unwrap();
        prop_assert_eq!(once, ann);
    }

    #[test]
    fn embedding_tables_round_trip(t in table()) {
        let once = EmbeddingTable::parse(t.to_text().as_bytes()).unwrap();
        prop_assert_eq!(once.to_text(), t.to_text());
        prop_assert_eq!(once, t);
    }

    #[test]
    fn weights_round_trip(d in 1usize..6, latent in 1usize..8, seed in any::<u64>(), scale in 1e-3..1e3f64) {
        let w = FbdWeights::random_scaled(d, latent, seed, scale);
        prop_assert_eq!(FbdWeights::parse(w.to_json().as_bytes()).unwrap(), w);
    }

    #[test]
    fn configs_round_trip(cfg in config()) {
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(MetricConfig::parse(text.as_bytes()).unwrap(), cfg);
    }
}
