use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::matching::FusionWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    /// Valid foreground matches (all entities when decoupling is disabled).
    pub fg: usize,
    pub bg: usize,
    pub fg_many_to_one: usize,
    pub bg_many_to_one: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub ref_mean_p: f64,
    pub dist_mean_p: f64,
    /// Entities with `p > 0.5`.
    pub ref_fg_count: usize,
    pub dist_fg_count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    /// The entity term was raised to `clamp_eps` or lowered to 1.
    pub clamped_entity_term: bool,
    pub clamped_relation_term: bool,
    /// Foreground matching had no valid correspondence.
    pub fg_degenerate: bool,
    pub bg_degenerate: bool,
    /// No embedding table was supplied, so α_cls was taken as 1.
    pub class_branch_skipped: bool,
    pub oov_labels: usize,
}

/// Every intermediate quantity of one scored pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub ref_id: String,
    pub dist_id: String,
    pub eps_f: f64,
    pub eps_b: f64,
    pub eps_ent: f64,
    pub alpha_cls: f64,
    pub eps_r: f64,
    pub alpha_rel: f64,
    /// `eps_ent * alpha_cls`, before clamping.
    pub ent_term: f64,
    /// `alpha_rel * eps_r`, before clamping (equal to `ent_term` without the relation branch).
    pub rel_term: f64,
    pub t3s: f64,
    pub fusion: FusionWeights,
    pub matched: MatchCounts,
    pub partition: Option<PartitionStats>,
    pub flags: Flags,
    pub symmetric: bool,
    pub disable_fbd: bool,
    pub disable_relation: bool,
}

pub const CSV_HEADER: &str = "ref_id,dist_id,eps_f,eps_b,eps_ent,alpha_cls,eps_r,alpha_rel,ent_term,rel_term,t3s,w_fg,w_bg,matched_fg,matched_bg,clamped_ent,clamped_rel";

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&self.ref_id),
            csv_field(&self.dist_id),
            self.eps_f,
            self.eps_b,
            self.eps_ent,
            self.alpha_cls,
            self.eps_r,
            self.alpha_rel,
            self.ent_term,
            self.rel_term,
            self.t3s,
            self.fusion.w_fg,
            self.fusion.w_bg,
            self.matched.fg,
            self.matched.bg,
            self.flags.clamped_entity_term,
            self.flags.clamped_relation_term,
        )
        .unwrap();
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }

    /// Every scalar intermediate, used for finiteness checks.
    pub fn scalars(&self) -> [f64; 11] {
        [
            self.eps_f,
            self.eps_b,
            self.eps_ent,
            self.alpha_cls,
            self.eps_r,
            self.alpha_rel,
            self.ent_term,
            self.rel_term,
            self.t3s,
            self.fusion.w_fg,
            self.fusion.w_bg,
        ]
    }

    /// Mean of the two scoring directions. Counts, ids and the partition
    /// statistics come from `forward`; flags are combined.
    pub fn symmetrized(forward: &ScoreReport, reverse: &ScoreReport) -> ScoreReport {
        let mean = |a: f64, b: f64| 0.5 * (a + b);
        ScoreReport {
            eps_f: mean(forward.eps_f, reverse.eps_f),
            eps_b: mean(forward.eps_b, reverse.eps_b),
            eps_ent: mean(forward.eps_ent, reverse.eps_ent),
            alpha_cls: mean(forward.alpha_cls, reverse.alpha_cls),
            eps_r: mean(forward.eps_r, reverse.eps_r),
            alpha_rel: mean(forward.alpha_rel, reverse.alpha_rel),
            ent_term: mean(forward.ent_term, reverse.ent_term),
            rel_term: mean(forward.rel_term, reverse.rel_term),
            t3s: mean(forward.t3s, reverse.t3s),
            fusion: FusionWeights {
                w_fg: mean(forward.fusion.w_fg, reverse.fusion.w_fg),
                w_bg: mean(forward.fusion.w_bg, reverse.fusion.w_bg),
                ..forward.fusion
            },
            flags: Flags {
                clamped_entity_term: forward.flags.clamped_entity_term || reverse.flags.clamped_entity_term,
                clamped_relation_term: forward.flags.clamped_relation_term || reverse.flags.clamped_relation_term,
                fg_degenerate: forward.flags.fg_degenerate || reverse.flags.fg_degenerate,
                bg_degenerate: forward.flags.bg_degenerate || reverse.flags.bg_degenerate,
                class_branch_skipped: forward.flags.class_branch_skipped,
                oov_labels: forward.flags.oov_labels,
            },
            symmetric: true,
            ..forward.clone()
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
