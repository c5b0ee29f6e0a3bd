//! Benchmark harness: scores a manifest of reference/distorted pairs grouped
//! by degradation type and severity level, and aggregates the results.
//!
//! Pairs are scored on a dedicated rayon pool and collected by index, and
//! every aggregate is summed in manifest order, so reports are byte-identical
//! for any worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::MetricConfig;
use crate::embedding::EmbeddingTable;
use crate::error::{read_file, Error, Result};
use crate::fbd::FbdWeights;
use crate::scorer::{score_pair, ImageSide, PairInput};

pub const DEFAULT_SLACK: f64 = 0.02;
pub const LEVELS: std::ops::RangeInclusive<u8> = 1..=5;

/// One manifest entry. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchPair {
    #[serde(rename = "ref")]
    pub reference: String,
    pub dist: String,
    pub ann_ref: String,
    pub ann_dist: String,
    pub degradation: String,
    pub level: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fbd_weights: Option<String>,
    /// Overrides applied on top of the default metric configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<MetricConfig>,
    pub pairs: Vec<BenchPair>,
}

impl BenchManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let m: BenchManifest = serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if !LEVELS.contains(&p.level) {
                return Err(Error::invalid(format!("pairs[{i}].level"), "must lie in 1..=5"));
            }
            if p.degradation.is_empty() {
                return Err(Error::invalid(format!("pairs[{i}].degradation"), "must be non-empty"));
            }
        }
        if let Some(c) = &self.config {
            c.validate()?;
        }
        Ok(())
    }
}

/// A parsed manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub manifest: BenchManifest,
    pub base_dir: PathBuf,
}

impl LoadedManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = BenchManifest::parse(&read_file(path)?).map_err(|e| e.in_file(path))?;
        Ok(LoadedManifest {
            manifest,
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        })
    }

    fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    fn load_pair(&self, p: &BenchPair) -> Result<PairInput> {
        Ok(PairInput::new(
            ImageSide::load(self.resolve(&p.reference), self.resolve(&p.ann_ref))?,
            ImageSide::load(self.resolve(&p.dist), self.resolve(&p.ann_dist))?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub index: usize,
    pub degradation: String,
    pub level: u8,
    pub t3s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub degradation: String,
    pub level: u8,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationStats {
    pub degradation: String,
    /// Mean of the per-level means.
    pub mean: f64,
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub degradation: String,
    pub passed: bool,
    /// First transition `(from, to, increase)` that exceeded the slack.
    pub offending: Option<(u8, u8, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Row label for the markdown table.
    pub config_label: String,
    pub pairs: usize,
    pub levels: Vec<LevelStats>,
    pub degradations: Vec<DegradationStats>,
    /// Mean of the per-degradation means; `None` when nothing was scored.
    pub overall: Option<f64>,
    pub slack: f64,
    pub monotonicity: Vec<Verdict>,
    pub skips: Vec<Skip>,
    pub scores: Vec<PairScore>,
}

impl BenchReport {
    pub fn monotone(&self) -> bool {
        self.monotonicity.iter().all(|v| v.passed)
    }
}

fn config_label(cfg: &MetricConfig) -> String {
    match (cfg.disable_fbd, cfg.disable_relation) {
        (false, false) => "T3S".into(),
        (true, false) => "T3S w/o FBD".into(),
        (false, true) => "T3S w/o Rel.".into(),
        (true, true) => "T3S w/o FBD, w/o Rel.".into(),
    }
}

/// Scores every pair on `parallelism` workers. Without `keep_going` the
/// first failing pair (lowest index) aborts the run; with it, failures are
/// recorded in [`BenchReport::skips`].
pub fn run_bench(loaded: &LoadedManifest, parallelism: usize, keep_going: bool) -> Result<BenchReport> {
    let m = &loaded.manifest;
    m.validate()?;
    let cfg = m.config.clone().unwrap_or_default();
    let table = m
        .embedding_table
        .as_ref()
        .map(|p| EmbeddingTable::load(loaded.resolve(p)))
        .transpose()?;
    if table.is_none() && !cfg.disable_relation {
        return Err(Error::MissingEmbeddings(
            "the manifest names no embedding_table while the relation branch is enabled".into(),
        ));
    }
    let weights = m
        .fbd_weights
        .as_ref()
        .map(|p| FbdWeights::load(loaded.resolve(p)))
        .transpose()?;
    if weights.is_none() && !cfg.disable_fbd {
        return Err(Error::invalid("fbd_weights", "required unless decoupling is disabled"));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid("parallel", e.to_string()))?;
    let results: Vec<Result<f64>> = pool.install(|| {
        m.pairs
            .par_iter()
            .map(|p| {
                let pair = loaded.load_pair(p)?;
                Ok(score_pair(&pair, weights.as_ref(), table.as_ref(), &cfg)?.t3s)
            })
            .collect()
    });

    let mut scores = Vec::with_capacity(results.len());
    let mut skips = Vec::new();
    for (index, (r, p)) in results.into_iter().zip(&m.pairs).enumerate() {
        match r {
            Ok(t3s) => scores.push(PairScore {
                index,
                degradation: p.degradation.clone(),
                level: p.level,
                t3s,
            }),
            Err(e) if keep_going => {
                log::warn!("skipping pair {index}: {e}");
                skips.push(Skip {
                    index,
                    reason: e.to_string(),
                });
            }
            Err(e) => {
                return Err(Error::Pair {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(aggregate(config_label(&cfg), m.pairs.len(), scores, skips, DEFAULT_SLACK))
}

/// Builds the report from per-pair scores listed in manifest order.
pub fn aggregate(config_label: String, pairs: usize, scores: Vec<PairScore>, skips: Vec<Skip>, slack: f64) -> BenchReport {
    let mut groups: BTreeMap<(&str, u8), Vec<f64>> = BTreeMap::new();
    for s in &scores {
        groups.entry((&s.degradation, s.level)).or_default().push(s.t3s);
    }
    let levels: Vec<LevelStats> = groups
        .iter()
        .map(|(&(d, level), v)| LevelStats {
            degradation: d.to_string(),
            level,
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();

    let mut by_degradation: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for l in &levels {
        by_degradation.entry(&l.degradation).or_default().push(l.mean);
    }
    let degradations: Vec<DegradationStats> = by_degradation
        .iter()
        .map(|(d, means)| DegradationStats {
            degradation: d.to_string(),
            mean: means.iter().sum::<f64>() / means.len() as f64,
            levels: means.len(),
        })
        .collect();
    let overall =
        (!degradations.is_empty()).then(|| degradations.iter().map(|d| d.mean).sum::<f64>() / degradations.len() as f64);

    let mut report = BenchReport {
        config_label,
        pairs,
        levels,
        degradations,
        overall,
        slack,
        monotonicity: Vec::new(),
        skips,
        scores,
    };
    report.monotonicity = monotonicity_check(&report, slack);
    report
}

/// Per degradation, passes iff every level's mean exceeds the previous
/// present level's mean by at most `slack`.
pub fn monotonicity_check(report: &BenchReport, slack: f64) -> Vec<Verdict> {
    let mut out: Vec<Verdict> = Vec::new();
    for d in &report.degradations {
        let curve: Vec<&LevelStats> = report.levels.iter().filter(|l| l.degradation == d.degradation).collect();
        let offending = curve
            .windows(2)
            .find(|w| w[1].mean > w[0].mean + slack)
            .map(|w| (w[0].level, w[1].level, w[1].mean - w[0].mean));
        out.push(Verdict {
            degradation: d.degradation.clone(),
            passed: offending.is_none(),
            offending,
        });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid("format", format!("unknown report format {other:?}"))),
        }
    }
}

pub fn emit_report(report: &BenchReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("degradation,level,n,mean,min,max\n");
            for l in &report.levels {
                writeln!(out, "{},{},{},{},{},{}", l.degradation, l.level, l.n, l.mean, l.min, l.max).unwrap();
            }
        }
        ReportFormat::Markdown => {
            let names: Vec<&str> = report.degradations.iter().map(|d| d.degradation.as_str()).collect();
            writeln!(out, "| Config | {} | Overall |", names.join(" | ")).unwrap();
            writeln!(out, "|{}", " --- |".repeat(names.len() + 2)).unwrap();
            let cells: Vec<String> = report.degradations.iter().map(|d| format!("{:.4}", d.mean)).collect();
            let overall = report.overall.map_or("-".to_string(), |o| format!("{o:.4}"));
            writeln!(out, "| {} | {} | {} |", report.config_label, cells.join(" | "), overall).unwrap();
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(report).expect("report serializes");
            out.push('\n');
        }
    }
    out
}
