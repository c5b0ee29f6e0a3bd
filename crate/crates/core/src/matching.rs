//! Greedy entity-set matching.
//!
//! Every entity of the first set is paired with its most similar entity of
//! the second set (cosine, lowest index wins ties). Pairs whose similarity
//! exceeds the match threshold form the valid set Ω. Ω members are weighted by
//! a temperature softmax over their similarities times their area in the
//! first set, and the set score is the weighted mean similarity. Weights use
//! first-set areas only, so the score is directional.

use serde::{Deserialize, Serialize};

use crate::entity::Region;
use crate::error::{Error, Result};
use crate::vector::cosine;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchPair {
    pub i: usize,
    pub j_star: usize,
    pub s_star: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    /// Indices into `pairs` of the valid matches.
    pub omega: Vec<usize>,
}

impl MatchResult {
    /// Valid matches that reuse a second-set entity already claimed by an
    /// earlier valid match.
    pub fn many_to_one(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        self.omega
            .iter()
            .filter(|&&k| !seen.insert(self.pairs[k].j_star))
            .count()
    }
}

pub fn best_match(e1: &[Region], e2: &[Region], threshold: f64) -> Result<MatchResult> {
    if e1.is_empty() || e2.is_empty() {
        return Err(Error::Empty("best_match needs two non-empty entity lists".into()));
    }
    let dim = e1[0].feature.len();
    for (name, set) in [("first", e1), ("second", e2)] {
        if let Some((k, r)) = set.iter().enumerate().find(|(_, r)| r.feature.len() != dim) {
            return Err(Error::dim(format!("{name} entity list [{k}]"), dim, r.feature.len()));
        }
    }

    let pairs: Vec<MatchPair> = e1
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut best = MatchPair {
                i,
                j_star: 0,
                s_star: cosine(&a.feature, &e2[0].feature),
            };
            for (j, b) in e2.iter().enumerate().skip(1) {
                let s = cosine(&a.feature, &b.feature);
                if s > best.s_star {
                    best.j_star = j;
                    best.s_star = s;
                }
            }
            best
        })
        .collect();
    let omega = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.s_star > threshold)
        .map(|(k, _)| k)
        .collect();
    Ok(MatchResult { pairs, omega })
}

/// Softmax of the valid matches' similarities at temperature `tau`,
/// aligned with `result.omega`.
pub fn confidence_weights(result: &MatchResult, tau: f64) -> Result<Vec<f64>> {
    if result.omega.is_empty() {
        return Err(Error::Empty("no valid correspondence".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", "must be > 0"));
    }
    let logits: Vec<f64> = result
        .omega
        .iter()
        .map(|&k| result.pairs[k].s_star / tau)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `alpha_i * area_i / sum_t alpha_t * area_t`.
pub fn area_weights(alpha: &[f64], areas: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != areas.len() {
        return Err(Error::dim("area weights", alpha.len(), areas.len()));
    }
    let raw: Vec<f64> = alpha.iter().zip(areas).map(|(a, s)| a * s).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("area weights", "degenerate normalizer"));
    }
    Ok(raw.into_iter().map(|x| x / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetScore {
    pub score: f64,
    /// |Ω|
    pub matched: usize,
    pub many_to_one: usize,
    /// Set when either list is empty or no match is valid; `score` is then 0.
    pub degenerate: bool,
}

impl SetScore {
    fn degenerate() -> Self {
        SetScore {
            score: 0.0,
            matched: 0,
            many_to_one: 0,
            degenerate: true,
        }
    }
}

/// Matching score `sum_{i in Ω} w_i s*_i` of `e1` against `e2`.
pub fn set_score(e1: &[Region], e2: &[Region], tau: f64, threshold: f64) -> Result<SetScore> {
    if e1.is_empty() || e2.is_empty() {
        return Ok(SetScore::degenerate());
    }
    let result = best_match(e1, e2, threshold)?;
    if result.omega.is_empty() {
        return Ok(SetScore::degenerate());
    }
    let alpha = confidence_weights(&result, tau)?;
    let areas: Vec<f64> = result.omega.iter().map(|&k| e1[result.pairs[k].i].area).collect();
    // Same value as area_weights() followed by a weighted sum; dividing once
    // keeps the score exactly 1 when every s* is 1.
    let raw: Vec<f64> = alpha.iter().zip(&areas).map(|(a, s)| a * s).collect();
    let total: f64 = raw.iter().sum();
    let weighted: f64 = result
        .omega
        .iter()
        .zip(&raw)
        .map(|(&k, w)| w * result.pairs[k].s_star)
        .sum();
    let score = weighted / total;
    Ok(SetScore {
        score,
        matched: result.omega.len(),
        many_to_one: result.many_to_one(),
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w_fg: f64,
    pub w_bg: f64,
    pub v_fg: f64,
    pub v_bg: f64,
}

impl FusionWeights {
    pub fn foreground_only() -> Self {
        FusionWeights {
            w_fg: 1.0,
            w_bg: 0.0,
            v_fg: 0.0,
            v_bg: 0.0,
        }
    }
}

/// Mean over dimensions of the population variance across the set's
/// vectors. Empty and singleton sets have variance 0.
pub fn set_variance(set: &[Region]) -> f64 {
    if set.len() < 2 {
        return 0.0;
    }
    let n = set.len() as f64;
    let dim = set[0].feature.len();
    if dim == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..dim {
        let mean = set.iter().map(|r| r.feature[k]).sum::<f64>() / n;
        total += set.iter().map(|r| (r.feature[k] - mean).powi(2)).sum::<f64>() / n;
    }
    total / dim as f64
}

/// True when the set has no region with a nonzero feature.
pub fn is_vacuous(set: &[Region]) -> bool {
    set.iter().all(|r| r.feature.iter().all(|&x| x == 0.0))
}

/// Variance-based fusion coefficients. A branch that is vacuous in both
/// images gets weight 0 while the other branch has content; otherwise the
/// rule falls back to `(1, 0)` when both variances vanish.
pub fn variance_fusion(
    fg1: &[Region],
    fg2: &[Region],
    bg1: &[Region],
    bg2: &[Region],
    lambda_bg: f64,
) -> FusionWeights {
    let v_fg = set_variance(fg1) + set_variance(fg2);
    let v_bg = set_variance(bg1) + set_variance(bg2);
    let fg_absent = is_vacuous(fg1) && is_vacuous(fg2);
    let bg_absent = is_vacuous(bg1) && is_vacuous(bg2);
    if fg_absent != bg_absent {
        let (w_fg, w_bg) = if fg_absent { (0.0, 1.0) } else { (1.0, 0.0) };
        return FusionWeights { w_fg, w_bg, v_fg, v_bg };
    }
    let denom = v_fg + lambda_bg * v_bg;
    if !(denom > 0.0) {
        return FusionWeights {
            v_fg,
            v_bg,
            ..FusionWeights::foreground_only()
        };
    }
    let raw_fg = v_fg / denom;
    let raw_bg = lambda_bg * v_bg / denom;
    let total = raw_fg + raw_bg;
    FusionWeights {
        w_fg: raw_fg / total,
        w_bg: raw_bg / total,
        v_fg,
        v_bg,
    }
}

/// `w_fg * eps_f + w_bg * eps_b`
pub fn entity_score(eps_f: f64, eps_b: f64, fw: &FusionWeights) -> f64 {
    fw.w_fg * eps_f + fw.w_bg * eps_b
}
