//! Executable versions of the four metric constraints, plus the three-level
//! ordering check, evaluated over scored synthetic scenarios.
//!
//! A check is only reported when the suite contains the scenarios it needs;
//! a suite passes when at least one check ran and every reported check passed.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::report::ScoreReport;
use crate::synth::{ScenarioKind, ScenarioMeta, ShiftDistance};

/// Every noise score must reach this value.
pub const C1_MIN: f64 = 0.90;
/// The mean noise score must reach this value.
pub const C1_MEAN: f64 = 0.95;
/// Mean score with every entity shifted, as a fraction of the unshifted mean.
pub const C2_RATIO: f64 = 0.2;
/// Relation consistency with every predicate replaced by an orthogonal word.
pub const C3_FULL_SHIFT_BOUND: f64 = 2.0 / 3.0;
/// Allowance for rounding in the mean of exact `2/3` rows.
pub const C3_ROUNDING: f64 = 1e-12;
/// Fraction of scenes that must show the strict three-level ordering.
pub const ORDERING_FRACTION: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredScenario {
    pub meta: ScenarioMeta,
    pub report: ScoreReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub stats: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub scenarios: usize,
    pub checks: Vec<CheckResult>,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Means of `value` grouped by the integer magnitude, in increasing order.
fn curve(items: &[&ScoredScenario], value: impl Fn(&ScoreReport) -> f64) -> Vec<(usize, f64)> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in items {
        groups
            .entry(s.meta.magnitude.round() as usize)
            .or_default()
            .push(value(&s.report));
    }
    groups.into_iter().map(|(k, v)| (k, mean(&v))).collect()
}

/// First `k` at which the curve increases, if any.
fn first_increase(curve: &[(usize, f64)]) -> Option<usize> {
    curve.windows(2).find(|w| w[1].1 > w[0].1).map(|w| w[1].0)
}

fn fmt_curve(curve: &[(usize, f64)]) -> String {
    curve
        .iter()
        .map(|(k, m)| format!("{k}:{m:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn invariance(noise: &[&ScoredScenario]) -> CheckResult {
    let scores: Vec<f64> = noise.iter().map(|s| s.report.t3s).collect();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let m = mean(&scores);
    CheckResult {
        name: "c1_invariance".into(),
        passed: min >= C1_MIN && m >= C1_MEAN,
        detail: format!("{} noise scenarios, min {min:.6} (>= {C1_MIN}), mean {m:.6} (>= {C1_MEAN})", scores.len()),
        stats: BTreeMap::from([("min".into(), min), ("mean".into(), m), ("n".into(), scores.len() as f64)]),
    }
}

fn entity_sensitivity(shifts: &[&ScoredScenario]) -> Option<CheckResult> {
    let t3s = curve(shifts, |r| r.t3s);
    let (&(k0, base), full): (&(usize, f64), Vec<f64>) = (
        t3s.first()?,
        shifts.iter().filter(|s| s.meta.full).map(|s| s.report.t3s).collect(),
    );
    if k0 != 0 || full.is_empty() {
        return None;
    }
    let full_mean = mean(&full);
    let increase = first_increase(&t3s);
    let ratio_ok = full_mean <= C2_RATIO * base;
    let mut stats: BTreeMap<String, f64> = t3s.iter().map(|(k, m)| (format!("mean_t3s_k{k}"), *m)).collect();
    stats.insert("full_shift_mean".into(), full_mean);
    Some(CheckResult {
        name: "c2_entity_shift".into(),
        passed: increase.is_none() && ratio_ok,
        detail: format!(
            "mean T3S by k [{}]{}; all shifted {full_mean:.6} vs {C2_RATIO} x {base:.6}{}",
            fmt_curve(&t3s),
            increase.map_or(String::new(), |k| format!(" increases at k={k}")),
            if ratio_ok { "" } else { " (ratio exceeded)" },
        ),
        stats,
    })
}

fn relation_sensitivity(shifts: &[&ScoredScenario]) -> CheckResult {
    let eps_r = curve(shifts, |r| r.eps_r);
    let t3s = curve(shifts, |r| r.t3s);
    let full_max = shifts
        .iter()
        .filter(|s| s.meta.full && s.meta.magnitude > 0.0)
        .map(|s| s.report.eps_r)
        .fold(f64::NEG_INFINITY, f64::max);
    let bound_ok = full_max <= C3_FULL_SHIFT_BOUND + C3_ROUNDING;
    let increase = first_increase(&eps_r).or(first_increase(&t3s));
    let mut stats: BTreeMap<String, f64> = eps_r.iter().map(|(k, m)| (format!("mean_eps_r_k{k}"), *m)).collect();
    stats.extend(t3s.iter().map(|(k, m)| (format!("mean_t3s_k{k}"), *m)));
    stats.insert("full_shift_max_eps_r".into(), full_max);
    CheckResult {
        name: "c3_relation_shift".into(),
        passed: increase.is_none() && bound_ok,
        detail: format!(
            "mean eps_R by k [{}]; mean T3S by k [{}]; max eps_R with all predicates replaced {full_max:.6} (<= 2/3){}",
            fmt_curve(&eps_r),
            fmt_curve(&t3s),
            increase.map_or(String::new(), |k| format!("; increases at k={k}")),
        ),
        stats,
    }
}

fn range(all: &[ScoredScenario]) -> CheckResult {
    let out_of_range = all.iter().filter(|s| !(0.0..=1.0).contains(&s.report.t3s)).count();
    let non_finite = all
        .iter()
        .filter(|s| s.report.scalars().iter().any(|x| !x.is_finite()))
        .count();
    CheckResult {
        name: "c4_range".into(),
        passed: out_of_range == 0 && non_finite == 0,
        detail: format!(
            "{} scores, {out_of_range} outside [0, 1], {non_finite} with non-finite intermediates",
            all.len()
        ),
        stats: BTreeMap::from([
            ("out_of_range".into(), out_of_range as f64),
            ("non_finite".into(), non_finite as f64),
        ]),
    }
}

fn three_level(all: &[ScoredScenario]) -> Option<CheckResult> {
    let mut scenes: BTreeMap<usize, [Option<f64>; 3]> = BTreeMap::new();
    for s in all {
        let slot = match (s.meta.kind, s.meta.distance) {
            (ScenarioKind::Noise, _) => 0,
            (ScenarioKind::EntityShift, Some(ShiftDistance::Related)) => 1,
            (ScenarioKind::EntityShift, Some(ShiftDistance::Unrelated)) if s.meta.magnitude > 0.0 => 2,
            _ => continue,
        };
        scenes.entry(s.meta.scene).or_default()[slot] = Some(s.report.t3s);
    }
    let complete: Vec<[f64; 3]> = scenes
        .values()
        .filter_map(|v| Some([v[0]?, v[1]?, v[2]?]))
        .collect();
    let has_related = all.iter().any(|s| s.meta.distance == Some(ShiftDistance::Related) && s.meta.kind == ScenarioKind::EntityShift);
    if complete.is_empty() || !has_related {
        return None;
    }
    let ordered = complete.iter().filter(|v| v[0] > v[1] && v[1] > v[2]).count();
    let fraction = ordered as f64 / complete.len() as f64;
    let means = [0, 1, 2].map(|i| mean(&complete.iter().map(|v| v[i]).collect::<Vec<_>>()));
    let means_ok = means[0] > means[1] && means[1] > means[2];
    Some(CheckResult {
        name: "three_level_ordering".into(),
        passed: fraction >= ORDERING_FRACTION && means_ok,
        detail: format!(
            "{ordered}/{} scenes strictly ordered ({:.1}%, need {:.0}%); means noise {:.4} > related {:.4} > unrelated {:.4}",
            complete.len(),
            100.0 * fraction,
            100.0 * ORDERING_FRACTION,
            means[0],
            means[1],
            means[2]
        ),
        stats: BTreeMap::from([
            ("fraction".into(), fraction),
            ("mean_noise".into(), means[0]),
            ("mean_related".into(), means[1]),
            ("mean_unrelated".into(), means[2]),
        ]),
    })
}

pub fn check_constraints(scored: &[ScoredScenario]) -> ConstraintReport {
    let of = |kind: ScenarioKind, pred: &dyn Fn(&ScenarioMeta) -> bool| -> Vec<&ScoredScenario> {
        scored.iter().filter(|s| s.meta.kind == kind && pred(&s.meta)).collect()
    };
    let noise = of(ScenarioKind::Noise, &|_| true);
    let entity = of(ScenarioKind::EntityShift, &|m| m.distance != Some(ShiftDistance::Related));
    let relation = of(ScenarioKind::RelationShift, &|_| true);

    let mut checks = Vec::new();
    if !noise.is_empty() {
        checks.push(invariance(&noise));
    }
    checks.extend(entity_sensitivity(&entity));
    if !relation.is_empty() {
        checks.push(relation_sensitivity(&relation));
    }
    if !scored.is_empty() {
        checks.push(range(scored));
    }
    checks.extend(three_level(scored));
    ConstraintReport {
        scenarios: scored.len(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::FusionWeights;
    use crate::report::{Flags, MatchCounts};

    fn report(t3s: f64, eps_r: f64) -> ScoreReport {
        ScoreReport {
            ref_id: "a".into(),
            dist_id: "b".into(),
            eps_f: 1.0,
            eps_b: 1.0,
            eps_ent: 1.0,
            alpha_cls: 1.0,
            eps_r,
            alpha_rel: 1.0,
            ent_term: 1.0,
            rel_term: eps_r,
            t3s,
            fusion: FusionWeights::foreground_only(),
            matched: MatchCounts::default(),
            partition: None,
            flags: Flags::default(),
            symmetric: false,
            disable_fbd: false,
            disable_relation: false,
        }
    }

    fn scenario(kind: ScenarioKind, k: f64, full: bool, t3s: f64, eps_r: f64) -> ScoredScenario {
        ScoredScenario {
            meta: ScenarioMeta {
                kind,
                magnitude: k,
                distance: (kind == ScenarioKind::EntityShift).then_some(ShiftDistance::Unrelated),
                seed: 0,
                scene: 0,
                full,
            },
            report: report(t3s, eps_r),
        }
    }

    #[test]
    fn zero_perturbation_suite_passes_invariance() {
        let s: Vec<_> = (0..3).map(|_| scenario(ScenarioKind::Noise, 0.0, false, 1.0, 1.0)).collect();
        let r = check_constraints(&s);
        assert!(r.passed());
        assert_eq!(r.check("c1_invariance").unwrap().stats["mean"], 1.0);
    }

    #[test]
    fn entity_shift_curve_rules() {
        let good = vec![
            scenario(ScenarioKind::EntityShift, 0.0, false, 1.0, 1.0),
            scenario(ScenarioKind::EntityShift, 1.0, false, 0.6, 1.0),
            scenario(ScenarioKind::EntityShift, 2.0, true, 0.1, 1.0),
        ];
        assert!(check_constraints(&good).check("c2_entity_shift").unwrap().passed);

        let mut flat = good.clone();
        flat[2].report.t3s = 0.5;
        assert!(!check_constraints(&flat).passed());

        let mut bump = good;
        bump[1].report.t3s = 1.01;
        let r = check_constraints(&bump);
        let c2 = r.check("c2_entity_shift").unwrap();
        assert!(!c2.passed && c2.detail.contains("increases at k=1"), "{}", c2.detail);
    }

    #[test]
    fn relation_bound() {
        let s = vec![
            scenario(ScenarioKind::RelationShift, 0.0, false, 1.0, 1.0),
            scenario(ScenarioKind::RelationShift, 3.0, true, 0.8, 0.7),
        ];
        assert!(!check_constraints(&s).passed());
    }

    #[test]
    fn range_flags_non_finite_intermediates() {
        let mut s = scenario(ScenarioKind::Noise, 0.0, false, 1.0, 1.0);
        s.report.alpha_rel = f64::NAN;
        let r = check_constraints(&[s]);
        assert!(!r.check("c4_range").unwrap().passed);
    }

    #[test]
    fn empty_suite_does_not_pass() {
        assert!(!check_constraints(&[]).passed());
    }
}
