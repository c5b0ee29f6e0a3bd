//! Deterministic synthetic scenes and perturbation operators with known
//! ground truth.
//!
//! Scenes use orthonormal entity features, log-uniform areas and labels
//! drawn from a [`Vocabulary`] whose embedding geometry is fixed exactly:
//! every class word has a related partner at cosine 0.8 and an unrelated
//! substitute at cosine 0, and every predicate has an orthogonal
//! replacement. All randomness flows from explicit `u64` seeds through
//! ChaCha8, so a seed reproduces its output bit for bit.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotation::{Relation, SemanticAnnotation};
use crate::bench::{BenchManifest, BenchPair};
use crate::embedding::EmbeddingTable;
use crate::entity::{Entity, EntitySet};
use crate::error::{create_dir, read_file, write_file, Error, Result};
use crate::fbd::FbdWeights;
use crate::matching::best_match;
use crate::scorer::{ImageSide, PairInput};
use crate::vector::{axpy, dot, norm, normalized, scaled};

pub const DEFAULT_ENTITIES: usize = 5;
pub const DEFAULT_DIM: usize = 16;
/// Attempts made by [`perturb_noise`] before giving up.
pub const NOISE_RETRIES: u32 = 16;
pub const CONSTRAINT_NOISE_SIGMA: f64 = 0.01;
pub const THREE_LEVEL_NOISE_SIGMA: f64 = 0.02;
pub const BENCH_NOISE_LEVELS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.4];
/// Cosine between a class word and its related partner.
pub const RELATED_COSINE: f64 = 0.8;
/// Angular range, in degrees, of a related feature shift.
pub const RELATED_ANGLE: (f64, f64) = (15.0, 30.0);

const MIN_AREA: f64 = 10.0;
const MAX_AREA: f64 = 1e4;

/// Word list with controlled embedding geometry on an orthonormal basis.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    pub classes: Vec<String>,
    /// `related[k]` has cosine [`RELATED_COSINE`] with `classes[k]` and 0 with every other class.
    pub related: Vec<String>,
    /// `unrelated[k]` is orthogonal to every other word.
    pub unrelated: Vec<String>,
    pub predicates: Vec<String>,
    pub unrelated_predicates: Vec<String>,
    pub table: EmbeddingTable,
}

impl Vocabulary {
    pub fn new(n_classes: usize, n_predicates: usize) -> Result<Self> {
        if n_classes == 0 || n_predicates == 0 {
            return Err(Error::invalid("vocabulary", "needs at least one class and one predicate"));
        }
        let (k, p) = (n_classes, n_predicates);
        let dim = 3 * k + 2 * p;
        let basis = |i: usize| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v
        };
        let names = |prefix: &str, n: usize| -> Vec<String> { (0..n).map(|i| format!("{prefix}{i:02}")).collect() };
        let vocab = Vocabulary {
            classes: names("cls", k),
            related: names("kin", k),
            unrelated: names("alt", k),
            predicates: names("pred", p),
            unrelated_predicates: names("xpred", p),
            table: EmbeddingTable::new(dim),
        };
        let sin = (1.0 - RELATED_COSINE * RELATED_COSINE).sqrt();
        let mut table = EmbeddingTable::new(dim);
        for i in 0..k {
            table.insert(&vocab.classes[i], basis(i))?;
            let mut r = vec![0.0; dim];
            r[i] = RELATED_COSINE;
            r[k + i] = sin;
            table.insert(&vocab.related[i], r)?;
            table.insert(&vocab.unrelated[i], basis(2 * k + i))?;
        }
        for j in 0..p {
            table.insert(&vocab.predicates[j], basis(3 * k + j))?;
            table.insert(&vocab.unrelated_predicates[j], basis(3 * k + p + j))?;
        }
        Ok(Vocabulary { table, ..vocab })
    }

    /// 12 classes and 6 predicates.
    pub fn standard() -> Self {
        Vocabulary::new(12, 6).expect("non-empty vocabulary")
    }

    pub fn all_words(&self) -> impl Iterator<Item = &String> {
        self.classes
            .iter()
            .chain(&self.related)
            .chain(&self.unrelated)
            .chain(&self.predicates)
            .chain(&self.unrelated_predicates)
    }

    fn class_index(&self, word: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == word)
            .ok_or_else(|| Error::invalid("class", format!("{word:?} is not a base class of the vocabulary")))
    }

    fn predicate_index(&self, word: &str) -> Result<usize> {
        self.predicates
            .iter()
            .position(|c| c == word)
            .ok_or_else(|| Error::invalid("predicate", format!("{word:?} is not a base predicate of the vocabulary")))
    }
}

/// An entity set, its annotation and per-entity foreground ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub entities: EntitySet,
    pub annotation: SemanticAnnotation,
    pub foreground: Vec<bool>,
}

impl Scene {
    pub fn side(&self) -> ImageSide {
        ImageSide::new(self.entities.clone(), self.annotation.clone())
    }

    fn renamed(&self, suffix: &str) -> Scene {
        let mut s = self.clone();
        let id = format!("{}/{suffix}", self.entities.image_id);
        s.entities.image_id = id.clone();
        s.annotation.image_id = id;
        s
    }
}

fn area_weighted_global(entities: &[Entity]) -> Vec<f64> {
    let mut g = vec![0.0; entities[0].feature.len()];
    for e in entities {
        axpy(&mut g, e.area, &e.feature);
    }
    normalized(&g)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Removes the components of `v` along an orthonormal `basis`, twice for
/// numerical safety, and returns the unit residual if it is not degenerate.
fn orthogonal_residual(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let start = norm(&v);
    for _ in 0..2 {
        for b in basis {
            let c = dot(&v, b);
            axpy(&mut v, -c, b);
        }
    }
    let n = norm(&v);
    (n > 1e-6 * start.max(f64::MIN_POSITIVE)).then(|| scaled(&v, 1.0 / n))
}

fn orthonormal_span(vectors: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut basis = Vec::new();
    for v in vectors {
        if let Some(u) = orthogonal_residual(v.to_vec(), &basis) {
            basis.push(u);
        }
    }
    basis
}

/// A random unit vector orthogonal to `basis`; the result is appended to it.
fn fresh_direction(rng: &mut ChaCha8Rng, basis: &mut Vec<Vec<f64>>, dim: usize) -> Result<Vec<f64>> {
    if basis.len() >= dim {
        return Err(Error::invalid(
            "dim",
            format!("no direction orthogonal to {} vectors exists in dimension {dim}", basis.len()),
        ));
    }
    for _ in 0..32 {
        if let Some(u) = orthogonal_residual(gaussian(rng, dim), basis) {
            basis.push(u.clone());
            return Ok(u);
        }
    }
    Err(Error::RetriesExhausted("could not draw an orthogonal direction".into()))
}

/// A scene of `n_entities` orthonormal entities in dimension `dim`, with
/// distinct classes and `n_entities - 1` relations over distinct entity pairs.
pub fn gen_scene(seed: u64, n_entities: usize, dim: usize, vocab: &Vocabulary) -> Result<Scene> {
    if n_entities == 0 {
        return Err(Error::invalid("n_entities", "must be >= 1"));
    }
    if dim < n_entities {
        return Err(Error::invalid("dim", format!("must be >= n_entities ({n_entities})")));
    }
    if vocab.classes.len() < n_entities {
        return Err(Error::invalid(
            "vocab",
            format!("{} classes cannot label {n_entities} distinct entities", vocab.classes.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = Vec::with_capacity(n_entities);
    let (lo, hi) = (MIN_AREA.ln(), MAX_AREA.ln());
    let mut entities = Vec::with_capacity(n_entities);
    for i in 0..n_entities {
        let feature = fresh_direction(&mut rng, &mut basis, dim)?;
        let area = rng.random_range(lo..=hi).exp().clamp(MIN_AREA, MAX_AREA);
        entities.push(Entity::new(format!("e{i}"), feature, area));
    }
    let classes: Vec<String> = index::sample(&mut rng, vocab.classes.len(), n_entities)
        .into_iter()
        .map(|k| vocab.classes[k].clone())
        .collect();

    let mut relations = Vec::new();
    if n_entities >= 2 {
        let pairs: Vec<(usize, usize)> = (0..n_entities)
            .flat_map(|a| (a + 1..n_entities).map(move |b| (a, b)))
            .collect();
        for k in index::sample(&mut rng, pairs.len(), n_entities - 1) {
            let (a, b) = pairs[k];
            let (s, o) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            let p = &vocab.predicates[rng.random_range(0..vocab.predicates.len())];
            relations.push(Relation::new(&classes[s], p, &classes[o]));
        }
    }
    let foreground = (0..n_entities).map(|i| i < n_entities.div_ceil(2)).collect();

    let id = format!("scene{seed}");
    let global = area_weighted_global(&entities);
    Ok(Scene {
        entities: EntitySet::new(id.clone(), global, entities)?,
        annotation: SemanticAnnotation::new(id, classes, relations)?,
        foreground,
    })
}

/// A random valid scene with unconstrained geometry: Gaussian features of
/// random scale, 1 to 8 entities, up to 4 (possibly repeated) classes and
/// relations. With `allow_oov`, labels may include words missing from the
/// vocabulary.
pub fn random_scene(seed: u64, dim: usize, vocab: &Vocabulary, allow_oov: bool) -> Result<Scene> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<&str> = vocab.all_words().map(String::as_str).collect();
    if allow_oov {
        words.extend(["qux", "blorp", "zzyzx"]);
    }
    let nonzero = |rng: &mut ChaCha8Rng| loop {
        let scale = rng.random_range(-3.0..3.0f64).exp();
        let v = scaled(&gaussian(rng, dim), scale);
        if norm(&v) > 0.0 {
            return v;
        }
    };
    let n = rng.random_range(1..=8);
    let entities: Vec<Entity> = (0..n)
        .map(|i| {
            let f = nonzero(&mut rng);
            Entity::new(format!("e{i}"), f, rng.random_range(MIN_AREA.ln()..=MAX_AREA.ln()).exp())
        })
        .collect();
    let global = nonzero(&mut rng);
    let pick = |rng: &mut ChaCha8Rng| words[rng.random_range(0..words.len())].to_string();
    let classes = (0..rng.random_range(0..=4)).map(|_| pick(&mut rng)).collect();
    let relations = (0..rng.random_range(0..=4))
        .map(|_| {
            let (s, p, o) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            Relation::new(&s, &p, &o)
        })
        .collect();
    let foreground = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let id = format!("random{seed}");
    Ok(Scene {
        entities: EntitySet::new(id.clone(), global, entities)?,
        annotation: SemanticAnnotation::new(id, classes, relations)?,
        foreground,
    })
}

/// Two independent [`random_scene`]s of a shared random dimension (1 to 16).
pub fn fuzz_pair(seed: u64, vocab: &Vocabulary) -> Result<(Scene, Scene)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=16);
    let a = random_scene(rng.random(), dim, vocab, true)?;
    let mut b = random_scene(rng.random(), dim, vocab, true)?;
    b.entities.image_id.push('b');
    Ok((a, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Noise,
    EntityShift,
    RelationShift,
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDistance {
    Related,
    Unrelated,
}

/// What a scenario is and how strongly it perturbs its base scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub kind: ScenarioKind,
    /// Noise sigma, or the number of shifted entities/relations.
    pub magnitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<ShiftDistance>,
    pub seed: u64,
    /// Index of the base scene within its suite.
    #[serde(default)]
    pub scene: usize,
    /// Every entity (or relation) of the base scene was shifted.
    #[serde(default)]
    pub full: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    pub base: Scene,
    pub variant: Scene,
}

impl Scenario {
    pub fn pair(&self) -> PairInput {
        PairInput::new(self.base.side(), self.variant.side())
    }
}

fn jitter(v: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = norm(v);
    let mut out = v.to_vec();
    axpy(&mut out, sigma * n, &gaussian(rng, v.len()));
    let m = norm(&out);
    if m == 0.0 {
        v.to_vec()
    } else {
        scaled(&out, n / m)
    }
}

fn sub_seed(seed: u64, attempt: u32) -> u64 {
    seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn correspondence_preserved(base: &EntitySet, variant: &EntitySet) -> Result<bool> {
    let r = best_match(&base.regions(), &variant.regions(), f64::NEG_INFINITY)?;
    Ok(r.pairs.iter().all(|p| p.j_star == p.i))
}

/// Adds Gaussian noise of scale `sigma * |e|` to every entity feature and to
/// the global feature, rescaling each back to its original norm. Labels are
/// untouched. A draw that changes any best-match correspondence is
/// discarded and redrawn from a derived seed, up to [`NOISE_RETRIES`] times.
pub fn perturb_noise(scene: &Scene, sigma: f64, seed: u64) -> Result<Scenario> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be finite and >= 0"));
    }
    let meta = ScenarioMeta {
        kind: ScenarioKind::Noise,
        magnitude: sigma,
        distance: None,
        seed,
        scene: 0,
        full: false,
    };
    for attempt in 0..NOISE_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, attempt));
        let mut variant = scene.renamed("noise");
        for e in &mut variant.entities.entities {
            e.feature = jitter(&e.feature, sigma, &mut rng);
        }
        variant.entities.global_feature = jitter(&scene.entities.global_feature, sigma, &mut rng);
        if correspondence_preserved(&scene.entities, &variant.entities)? {
            return Ok(Scenario {
                meta,
                base: scene.clone(),
                variant,
            });
        }
    }
    Err(Error::RetriesExhausted(format!(
        "noise sigma {sigma} broke best-match correspondence in {NOISE_RETRIES} draws"
    )))
}

fn rename_in_relations(relations: &mut [Relation], from: &str, to: &str) {
    for r in relations {
        if r.0 == from {
            r.0 = to.to_string();
        }
        if r.2 == from {
            r.2 = to.to_string();
        }
    }
}

/// Changes the identity of `k` entities. Unrelated shifts give each selected
/// entity a feature orthogonal to every original feature and a class word
/// orthogonal to its old one. Related shifts rotate the feature by 15 to 30
/// degrees and use the class's related partner. Relations follow the
/// renamed classes, and the global feature is recomputed.
///
/// Entities are selected along a seeded permutation, so the scenario for
/// `k + 1` shifts the same entities as the one for `k` plus one more.
pub fn perturb_entity_shift(
    scene: &Scene,
    vocab: &Vocabulary,
    k: usize,
    distance: ShiftDistance,
    seed: u64,
) -> Result<Scenario> {
    let n = scene.entities.len();
    if k > n {
        return Err(Error::invalid("k", format!("{k} exceeds the entity count {n}")));
    }
    if scene.annotation.classes.len() != n {
        return Err(Error::invalid("classes", "entity shifts need one class per entity"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let dim = scene.entities.feature_dim;
    let mut basis = orthonormal_span(&scene.entities.features());
    let tag = match distance {
        ShiftDistance::Related => "related",
        ShiftDistance::Unrelated => "unrelated",
    };
    let mut variant = scene.renamed(&format!("{tag}{k}"));
    for &i in &order[..k] {
        let u = fresh_direction(&mut rng, &mut basis, dim)?;
        let theta = rng.random_range(RELATED_ANGLE.0..=RELATED_ANGLE.1).to_radians();
        let e = &mut variant.entities.entities[i];
        let len = norm(&e.feature);
        let old = &scene.annotation.classes[i];
        let c = vocab.class_index(old)?;
        let new = match distance {
            ShiftDistance::Unrelated => {
                e.feature = scaled(&u, len);
                vocab.unrelated[c].clone()
            }
            ShiftDistance::Related => {
                let mut f = scaled(&e.feature, theta.cos());
                axpy(&mut f, len * theta.sin(), &u);
                e.feature = f;
                vocab.related[c].clone()
            }
        };
        rename_in_relations(&mut variant.annotation.relations, old, &new);
        variant.annotation.classes[i] = new;
    }
    variant.entities.global_feature = area_weighted_global(&variant.entities.entities);
    variant.entities.validate()?;
    Ok(Scenario {
        meta: ScenarioMeta {
            kind: ScenarioKind::EntityShift,
            magnitude: k as f64,
            distance: Some(distance),
            seed,
            scene: 0,
            full: k == n,
        },
        base: scene.clone(),
        variant,
    })
}

/// Replaces `k` relation predicates, chosen along a seeded permutation, with
/// their orthogonal counterparts. Entities and classes are unchanged.
pub fn perturb_relation_shift(scene: &Scene, vocab: &Vocabulary, k: usize, seed: u64) -> Result<Scenario> {
    let m = scene.annotation.relations.len();
    if k > m {
        return Err(Error::invalid("k", format!("{k} exceeds the relation count {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut variant = scene.renamed(&format!("rel{k}"));
    for &r in &order[..k] {
        let rel = &mut variant.annotation.relations[r];
        rel.1 = vocab.unrelated_predicates[vocab.predicate_index(&rel.1)?].clone();
    }
    Ok(Scenario {
        meta: ScenarioMeta {
            kind: ScenarioKind::RelationShift,
            magnitude: k as f64,
            distance: None,
            seed,
            scene: 0,
            full: k == m,
        },
        base: scene.clone(),
        variant,
    })
}

/// An entity shift of `k_entities` followed by a relation shift of `k_relations`.
pub fn perturb_combined(
    scene: &Scene,
    vocab: &Vocabulary,
    k_entities: usize,
    k_relations: usize,
    distance: ShiftDistance,
    seed: u64,
) -> Result<Scenario> {
    let shifted = perturb_entity_shift(scene, vocab, k_entities, distance, seed)?;
    let m = shifted.variant.annotation.relations.len();
    if k_relations > m {
        return Err(Error::invalid("k", format!("{k_relations} exceeds the relation count {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut variant = shifted.variant;
    for &r in &order[..k_relations] {
        let rel = &mut variant.annotation.relations[r];
        if let Ok(p) = vocab.predicate_index(&rel.1) {
            rel.1 = vocab.unrelated_predicates[p].clone();
        }
    }
    variant.entities.image_id.push_str("+rel");
    variant.annotation.image_id = variant.entities.image_id.clone();
    Ok(Scenario {
        meta: ScenarioMeta {
            kind: ScenarioKind::Combined,
            magnitude: (k_entities + k_relations) as f64,
            distance: Some(distance),
            seed,
            scene: 0,
            full: false,
        },
        base: scene.clone(),
        variant,
    })
}

/// Noise on background entities only, with the global feature recomputed.
/// Used to plant clutter that a foreground-aware metric should discount.
pub fn add_clutter(scene: &Scene, sigma: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.renamed("clutter");
    for (e, &fg) in out.entities.entities.iter_mut().zip(&scene.foreground) {
        if !fg {
            e.feature = jitter(&e.feature, sigma, &mut rng);
        }
    }
    out.entities.global_feature = area_weighted_global(&out.entities.entities);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteKind {
    /// Noise, entity-shift, relation-shift and combined scenarios per scene.
    Constraints,
    /// Noise, one related and one unrelated substitution of the same entity per scene.
    ThreeLevel,
    /// Two degradations at five increasing levels, written as a bench manifest.
    Bench,
}

impl FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constraints" => Ok(SuiteKind::Constraints),
            "three-level" => Ok(SuiteKind::ThreeLevel),
            "bench" => Ok(SuiteKind::Bench),
            other => Err(Error::invalid("suite", format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteSpec {
    pub kind: SuiteKind,
    pub scenes: usize,
    pub n_entities: usize,
    pub dim: usize,
}

impl SuiteSpec {
    pub fn new(kind: SuiteKind) -> Self {
        SuiteSpec {
            kind,
            scenes: if kind == SuiteKind::Bench { 10 } else { 100 },
            n_entities: DEFAULT_ENTITIES,
            dim: DEFAULT_DIM,
        }
    }
}

struct SceneSeeds {
    scene: u64,
    noise: u64,
    entity: u64,
    relation: u64,
}

fn scene_seeds(seed: u64, scenes: usize) -> Vec<SceneSeeds> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..scenes)
        .map(|_| SceneSeeds {
            scene: rng.random(),
            noise: rng.random(),
            entity: rng.random(),
            relation: rng.random(),
        })
        .collect()
}

fn tagged(mut s: Scenario, scene: usize) -> Scenario {
    s.meta.scene = scene;
    s
}

/// Scenarios for the constraint checks, per scene: noise at
/// [`CONSTRAINT_NOISE_SIGMA`], unrelated entity shifts for every `k` in
/// `0..=n`, relation shifts for every `k` up to the relation count, and one
/// combined shift.
pub fn constraint_scenarios(spec: &SuiteSpec, seed: u64, vocab: &Vocabulary) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for (s, seeds) in scene_seeds(seed, spec.scenes).iter().enumerate() {
        let scene = gen_scene(seeds.scene, spec.n_entities, spec.dim, vocab)?;
        out.push(tagged(perturb_noise(&scene, CONSTRAINT_NOISE_SIGMA, seeds.noise)?, s));
        for k in 0..=spec.n_entities {
            let sc = perturb_entity_shift(&scene, vocab, k, ShiftDistance::Unrelated, seeds.entity)?;
            out.push(tagged(sc, s));
        }
        for k in 0..=scene.annotation.relations.len() {
            out.push(tagged(perturb_relation_shift(&scene, vocab, k, seeds.relation)?, s));
        }
        let k_rel = scene.annotation.relations.len().min(1);
        let sc = perturb_combined(&scene, vocab, 1, k_rel, ShiftDistance::Related, seeds.entity)?;
        out.push(tagged(sc, s));
    }
    Ok(out)
}

/// Per scene: noise at [`THREE_LEVEL_NOISE_SIGMA`], then a related and an
/// unrelated substitution of the same entity.
pub fn three_level_scenarios(spec: &SuiteSpec, seed: u64, vocab: &Vocabulary) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for (s, seeds) in scene_seeds(seed, spec.scenes).iter().enumerate() {
        let scene = gen_scene(seeds.scene, spec.n_entities, spec.dim, vocab)?;
        out.push(tagged(perturb_noise(&scene, THREE_LEVEL_NOISE_SIGMA, seeds.noise)?, s));
        for d in [ShiftDistance::Related, ShiftDistance::Unrelated] {
            out.push(tagged(perturb_entity_shift(&scene, vocab, 1, d, seeds.entity)?, s));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchCase {
    pub degradation: String,
    pub level: u8,
    pub scenario: Scenario,
}

/// Two degradations with strictly increasing magnitude over levels 1 to 5:
/// `noise` at [`BENCH_NOISE_LEVELS`] and `entity_shift` with `level`
/// unrelated entities shifted (capped at the entity count).
pub fn bench_cases(spec: &SuiteSpec, seed: u64, vocab: &Vocabulary) -> Result<Vec<BenchCase>> {
    let mut out = Vec::new();
    for (s, seeds) in scene_seeds(seed, spec.scenes).iter().enumerate() {
        let scene = gen_scene(seeds.scene, spec.n_entities, spec.dim, vocab)?;
        for (l, &sigma) in BENCH_NOISE_LEVELS.iter().enumerate() {
            out.push(BenchCase {
                degradation: "noise".into(),
                level: l as u8 + 1,
                scenario: tagged(perturb_noise(&scene, sigma, sub_seed(seeds.noise, l as u32))?, s),
            });
        }
        for level in 1..=5u8 {
            let k = (level as usize).min(spec.n_entities);
            let sc = perturb_entity_shift(&scene, vocab, k, ShiftDistance::Unrelated, seeds.entity)?;
            out.push(BenchCase {
                degradation: "entity_shift".into(),
                level,
                scenario: tagged(sc, s),
            });
        }
    }
    Ok(out)
}

/// One scenario of an on-disk suite. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    #[serde(flatten)]
    pub meta: ScenarioMeta,
    #[serde(rename = "ref")]
    pub reference: String,
    pub dist: String,
    pub ann_ref: String,
    pub ann_dist: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub embedding_table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fbd_weights: Option<String>,
    pub scenarios: Vec<ScenarioEntry>,
}

pub const SUITE_MANIFEST: &str = "suite.json";
pub const BENCH_MANIFEST: &str = "bench.json";
const TABLE_FILE: &str = "embeddings.txt";
const WEIGHTS_FILE: &str = "fbd.json";

/// Writes scene files under `out/scenes`, the vocabulary table and default
/// decoupling weights, and returns the manifest path ([`SUITE_MANIFEST`],
/// or [`BENCH_MANIFEST`] for bench suites).
pub fn build_suite(spec: &SuiteSpec, seed: u64, out: &Path) -> Result<PathBuf> {
    let vocab = Vocabulary::standard();
    create_dir(&out.join("scenes"))?;
    vocab.table.save(out.join(TABLE_FILE))?;
    FbdWeights::identity(spec.dim).save(out.join(WEIGHTS_FILE))?;

    let mut writer = SceneWriter {
        out,
        written: HashMap::new(),
    };
    match spec.kind {
        SuiteKind::Constraints | SuiteKind::ThreeLevel => {
            let scenarios = if spec.kind == SuiteKind::Constraints {
                constraint_scenarios(spec, seed, &vocab)?
            } else {
                three_level_scenarios(spec, seed, &vocab)?
            };
            let mut entries = Vec::with_capacity(scenarios.len());
            for sc in &scenarios {
                let (reference, ann_ref) = writer.write(&sc.base)?;
                let (dist, ann_dist) = writer.write(&sc.variant)?;
                entries.push(ScenarioEntry {
                    meta: sc.meta.clone(),
                    reference,
                    dist,
                    ann_ref,
                    ann_dist,
                });
            }
            let manifest = SuiteManifest {
                embedding_table: TABLE_FILE.into(),
                fbd_weights: Some(WEIGHTS_FILE.into()),
                scenarios: entries,
            };
            let path = out.join(SUITE_MANIFEST);
            write_file(&path, to_json(&manifest).as_bytes())?;
            Ok(path)
        }
        SuiteKind::Bench => {
            let mut pairs = Vec::new();
            for case in bench_cases(spec, seed, &vocab)? {
                let (reference, ann_ref) = writer.write(&case.scenario.base)?;
                let (dist, ann_dist) = writer.write(&case.scenario.variant)?;
                pairs.push(BenchPair {
                    reference,
                    dist,
                    ann_ref,
                    ann_dist,
                    degradation: case.degradation,
                    level: case.level,
                });
            }
            let manifest = BenchManifest {
                embedding_table: Some(TABLE_FILE.into()),
                fbd_weights: Some(WEIGHTS_FILE.into()),
                config: None,
                pairs,
            };
            let path = out.join(BENCH_MANIFEST);
            write_file(&path, to_json(&manifest).as_bytes())?;
            Ok(path)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("manifest serializes")
}

struct SceneWriter<'a> {
    out: &'a Path,
    written: HashMap<String, (String, String)>,
}

impl SceneWriter<'_> {
    /// Writes each distinct image id once and returns its relative paths.
    fn write(&mut self, scene: &Scene) -> Result<(String, String)> {
        let id = &scene.entities.image_id;
        if let Some(paths) = self.written.get(id) {
            return Ok(paths.clone());
        }
        let stem: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let stem = format!("{stem}_{}", self.written.len());
        let es = format!("scenes/{stem}.entities.json");
        let ann = format!("scenes/{stem}.ann.json");
        scene.entities.save(self.out.join(&es))?;
        scene.annotation.save(self.out.join(&ann))?;
        self.written.insert(id.clone(), (es.clone(), ann.clone()));
        Ok((es, ann))
    }
}

/// A suite read back from disk, with every file loaded and validated.
#[derive(Clone, Debug)]
pub struct LoadedSuite {
    pub table: EmbeddingTable,
    pub weights: Option<FbdWeights>,
    pub cases: Vec<(ScenarioMeta, PairInput)>,
}

/// Loads a suite from its manifest, or from a directory containing [`SUITE_MANIFEST`].
pub fn load_suite(path: impl AsRef<Path>) -> Result<LoadedSuite> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(SUITE_MANIFEST)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: SuiteManifest = serde_json::from_slice(&read_file(&manifest_path)?)
        .map_err(|e| Error::Malformed(e.to_string()).in_file(&manifest_path))?;
    let table = EmbeddingTable::load(dir.join(&manifest.embedding_table))?;
    let weights = manifest
        .fbd_weights
        .as_ref()
        .map(|w| FbdWeights::load(dir.join(w)))
        .transpose()?;
    let cases = manifest
        .scenarios
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let reference = ImageSide::load(dir.join(&e.reference), dir.join(&e.ann_ref));
            let distorted = ImageSide::load(dir.join(&e.dist), dir.join(&e.ann_dist));
            match (reference, distorted) {
                (Ok(r), Ok(d)) => Ok((e.meta.clone(), PairInput::new(r, d))),
                (Err(source), _) | (_, Err(source)) => Err(Error::Pair {
                    index,
                    source: Box::new(source),
                }),
            }
        })
        .collect::<Result<_>>()?;
    Ok(LoadedSuite { table, weights, cases })
}
