//! End-to-end scoring of a reference/distorted pair.
//!
//! ```text
//! ent_term = eps_ent * alpha_cls
//! rel_term = alpha_rel * eps_r
//! T3S      = 2 ent rel / (ent + rel)     both terms clamped to [clamp_eps, 1]
//! ```

use std::path::Path;

use crate::annotation::SemanticAnnotation;
use crate::config::MetricConfig;
use crate::embedding::EmbeddingTable;
use crate::entity::EntitySet;
use crate::error::{Error, Result};
use crate::fbd::{decouple, FbdWeights};
use crate::matching::{entity_score, set_score, variance_fusion, FusionWeights};
use crate::report::{Flags, MatchCounts, PartitionStats, ScoreReport};
use crate::semantics::{class_consistency, global_relation_prior, relation_consistency};

/// One side of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSide {
    pub entities: EntitySet,
    pub annotation: SemanticAnnotation,
}

impl ImageSide {
    pub fn new(entities: EntitySet, annotation: SemanticAnnotation) -> Self {
        ImageSide {
            entities,
            annotation,
        }
    }

    pub fn load(entities: impl AsRef<Path>, annotation: impl AsRef<Path>) -> Result<Self> {
        Ok(ImageSide {
            entities: EntitySet::load(entities)?,
            annotation: SemanticAnnotation::load(annotation)?,
        })
    }
}

/// The reference image is always `reference`; scoring is directional unless
/// `MetricConfig::symmetric_mode` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct PairInput {
    pub reference: ImageSide,
    pub distorted: ImageSide,
}

impl PairInput {
    pub fn new(reference: ImageSide, distorted: ImageSide) -> Self {
        PairInput {
            reference,
            distorted,
        }
    }

    pub fn swapped(&self) -> PairInput {
        PairInput {
            reference: self.distorted.clone(),
            distorted: self.reference.clone(),
        }
    }
}

/// Shared, read-only scoring resources.
#[derive(Clone, Copy, Debug)]
pub struct Scorer<'a> {
    pub weights: Option<&'a FbdWeights>,
    pub table: Option<&'a EmbeddingTable>,
    pub config: &'a MetricConfig,
}

impl Scorer<'_> {
    pub fn score(&self, pair: &PairInput) -> Result<ScoreReport> {
        score_pair(pair, self.weights, self.table, self.config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupled {
    pub value: f64,
    pub clamped_a: bool,
    pub clamped_b: bool,
}

fn clamp_term(x: f64, eps: f64) -> (f64, bool) {
    let c = x.clamp(eps, 1.0);
    (c, c != x)
}

/// Harmonic mean after clamping both terms to `[clamp_eps, 1]`.
pub fn harmonic_couple(a: f64, b: f64, clamp_eps: f64) -> Coupled {
    let (a, clamped_a) = clamp_term(a, clamp_eps);
    let (b, clamped_b) = clamp_term(b, clamp_eps);
    let value = if a == b { a } else { 2.0 * a * b / (a + b) };
    Coupled {
        value: value.clamp(a.min(b), a.max(b)),
        clamped_a,
        clamped_b,
    }
}

pub fn score_pair(
    pair: &PairInput,
    weights: Option<&FbdWeights>,
    table: Option<&EmbeddingTable>,
    cfg: &MetricConfig,
) -> Result<ScoreReport> {
    cfg.validate()?;
    if cfg.symmetric_mode {
        let one_way = MetricConfig {
            symmetric_mode: false,
            ..cfg.clone()
        };
        let forward = score_directed(pair, weights, table, &one_way)?;
        let reverse = score_directed(&pair.swapped(), weights, table, &one_way)?;
        return Ok(ScoreReport::symmetrized(&forward, &reverse));
    }
    score_directed(pair, weights, table, cfg)
}

fn mean_p(p: &[f64]) -> f64 {
    if p.is_empty() {
        0.0
    } else {
        p.iter().sum::<f64>() / p.len() as f64
    }
}

fn score_directed(
    pair: &PairInput,
    weights: Option<&FbdWeights>,
    table: Option<&EmbeddingTable>,
    cfg: &MetricConfig,
) -> Result<ScoreReport> {
    let r = &pair.reference;
    let d = &pair.distorted;
    if r.entities.feature_dim != d.entities.feature_dim {
        return Err(Error::dim(
            "distorted entity set feature_dim",
            r.entities.feature_dim,
            d.entities.feature_dim,
        ));
    }
    if table.is_none() && !cfg.disable_relation {
        return Err(Error::MissingEmbeddings(
            "an embedding table is required while the relation branch is enabled".into(),
        ));
    }

    let mut flags = Flags::default();
    let mut matched = MatchCounts::default();
    let (eps_f, eps_b, fusion, partition) = if cfg.disable_fbd {
        let s = set_score(&r.entities.regions(), &d.entities.regions(), cfg.tau, cfg.match_threshold)?;
        matched.fg = s.matched;
        matched.fg_many_to_one = s.many_to_one;
        flags.fg_degenerate = s.degenerate;
        (s.score, s.score, FusionWeights::foreground_only(), None)
    } else {
        let w = weights
            .ok_or_else(|| Error::invalid("fbd_weights", "required unless decoupling is disabled"))?
            .clone()
            .with_strengths(cfg.alpha_fbd, cfg.beta_fbd);
        w.validate()?;
        let dr = decouple(&r.entities, &w)?;
        let dd = decouple(&d.entities, &w)?;
        let fg = set_score(&dr.fg, &dd.fg, cfg.tau, cfg.match_threshold)?;
        let bg = set_score(&dr.bg, &dd.bg, cfg.tau, cfg.match_threshold)?;
        matched = MatchCounts {
            fg: fg.matched,
            bg: bg.matched,
            fg_many_to_one: fg.many_to_one,
            bg_many_to_one: bg.many_to_one,
        };
        flags.fg_degenerate = fg.degenerate;
        flags.bg_degenerate = bg.degenerate;
        let fusion = variance_fusion(&dr.fg, &dd.fg, &dr.bg, &dd.bg, cfg.lambda_bg);
        let partition = PartitionStats {
            ref_mean_p: mean_p(&dr.p),
            dist_mean_p: mean_p(&dd.p),
            ref_fg_count: dr.p.iter().filter(|&&p| p > 0.5).count(),
            dist_fg_count: dd.p.iter().filter(|&&p| p > 0.5).count(),
        };
        (fg.score, bg.score, fusion, Some(partition))
    };
    let eps_ent = entity_score(eps_f, eps_b, &fusion);

    let alpha_cls = match table {
        Some(t) => {
            let c = class_consistency(&r.annotation, &d.annotation, t)?;
            flags.oov_labels += c.oov;
            c.value
        }
        None => {
            flags.class_branch_skipped = true;
            1.0
        }
    };
    let alpha_rel = global_relation_prior(&r.entities.global_feature, &d.entities.global_feature)?;
    let ent_term = eps_ent * alpha_cls;

    let (eps_r, rel_term, t3s) = if cfg.disable_relation {
        let (clamped, was) = clamp_term(ent_term, cfg.clamp_eps);
        flags.clamped_entity_term = was;
        flags.clamped_relation_term = was;
        // eps_r is not computed without the relation branch
        (0.0, ent_term, clamped)
    } else {
        let table = table.expect("checked above");
        let c = relation_consistency(&r.annotation, &d.annotation, table)?;
        flags.oov_labels += c.oov;
        let rel_term = alpha_rel * c.value;
        let coupled = harmonic_couple(ent_term, rel_term, cfg.clamp_eps);
        flags.clamped_entity_term = coupled.clamped_a;
        flags.clamped_relation_term = coupled.clamped_b;
        (c.value, rel_term, coupled.value)
    };

    Ok(ScoreReport {
        ref_id: r.entities.image_id.clone(),
        dist_id: d.entities.image_id.clone(),
        eps_f,
        eps_b,
        eps_ent,
        alpha_cls,
        eps_r,
        alpha_rel,
        ent_term,
        rel_term,
        t3s,
        fusion,
        matched,
        partition,
        flags,
        symmetric: false,
        disable_fbd: cfg.disable_fbd,
        disable_relation: cfg.disable_relation,
    })
}
