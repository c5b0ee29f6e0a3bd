//! Class- and relation-level consistency from word embeddings, plus the
//! global relation prior.

use serde::{Deserialize, Serialize};

use crate::annotation::SemanticAnnotation;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::vector::cosine;

#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbeddings {
    pub cls_vectors: Vec<Vec<f64>>,
    /// `[subject; predicate; object]`, three times the word width.
    pub rel_vectors: Vec<Vec<f64>>,
    pub cls_oov: Vec<bool>,
    /// Set when any of the three parts is out of vocabulary.
    pub rel_oov: Vec<bool>,
}

impl LabelEmbeddings {
    pub fn oov_count(&self) -> usize {
        self.cls_oov.iter().chain(&self.rel_oov).filter(|&&o| o).count()
    }
}

pub fn embed_annotation(ann: &SemanticAnnotation, table: &EmbeddingTable) -> LabelEmbeddings {
    let (cls_vectors, cls_oov) = ann
        .classes
        .iter()
        .map(|c| {
            let e = table.embed_phrase(c);
            (e.vector, e.oov)
        })
        .unzip();
    let (rel_vectors, rel_oov) = ann
        .relations
        .iter()
        .map(|r| {
            let parts = [r.subject(), r.predicate(), r.object()].map(|p| table.embed_phrase(p));
            let oov = parts.iter().any(|p| p.oov);
            let v: Vec<f64> = parts.into_iter().flat_map(|p| p.vector).collect();
            (v, oov)
        })
        .unzip();
    LabelEmbeddings {
        cls_vectors,
        rel_vectors,
        cls_oov,
        rel_oov,
    }
}

/// Average over rows of the best cosine match after zero-padding the shorter
/// list to `N = max(|v1|, |v2|)`.
///
/// Padded rows contribute 0 and padded columns add a 0 candidate to every
/// row's maximum. Both lists empty gives 1, exactly one empty gives 0.
pub fn avg_max_similarity(v1: &[Vec<f64>], v2: &[Vec<f64>]) -> Result<f64> {
    match (v1.is_empty(), v2.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let width = v1[0].len();
    if let Some(bad) = v1.iter().chain(v2).find(|v| v.len() != width) {
        return Err(Error::dim("similarity matrix operand", width, bad.len()));
    }
    let n = v1.len().max(v2.len());
    let padded_columns = v2.len() < n;
    let total: f64 = v1
        .iter()
        .map(|a| {
            let best = v2
                .iter()
                .map(|b| cosine(a, b))
                .fold(f64::NEG_INFINITY, f64::max);
            if padded_columns {
                best.max(0.0)
            } else {
                best
            }
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub value: f64,
    /// Labels (or triplets) on either side with no in-vocabulary token.
    pub oov: usize,
}

/// α_cls: avg-max similarity of the two class-label embedding lists.
pub fn class_consistency(
    ann1: &SemanticAnnotation,
    ann2: &SemanticAnnotation,
    table: &EmbeddingTable,
) -> Result<Consistency> {
    let a = embed_annotation(ann1, table);
    let b = embed_annotation(ann2, table);
    Ok(Consistency {
        value: avg_max_similarity(&a.cls_vectors, &b.cls_vectors)?,
        oov: a.cls_oov.iter().chain(&b.cls_oov).filter(|&&o| o).count(),
    })
}

/// ε_R: avg-max similarity of the two relation-triplet embedding lists.
pub fn relation_consistency(
    ann1: &SemanticAnnotation,
    ann2: &SemanticAnnotation,
    table: &EmbeddingTable,
) -> Result<Consistency> {
    let a = embed_annotation(ann1, table);
    let b = embed_annotation(ann2, table);
    Ok(Consistency {
        value: avg_max_similarity(&a.rel_vectors, &b.rel_vectors)?,
        oov: a.rel_oov.iter().chain(&b.rel_oov).filter(|&&o| o).count(),
    })
}

/// α_rel: cosine of the two global features, clamped to `[0, 1]`.
pub fn global_relation_prior(g1: &[f64], g2: &[f64]) -> Result<f64> {
    if g1.len() != g2.len() {
        return Err(Error::dim("global features", g1.len(), g2.len()));
    }
    if g1.iter().all(|&x| x == 0.0) || g2.iter().all(|&x| x == 0.0) {
        return Err(Error::invalid("global_feature", "zero vector"));
    }
    Ok(cosine(g1, g2).clamp(0.0, 1.0))
}
