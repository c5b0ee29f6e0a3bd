use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

/// Free parameters of the metric. Every field has a default, so a config
/// document only needs to list overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Softmax temperature for match-confidence weights.
    pub tau: f64,
    /// Background attenuation factor in variance fusion.
    pub lambda_bg: f64,
    /// Lower clamp applied to both coupled terms before the harmonic mean.
    pub clamp_eps: f64,
    /// Attraction strength; overrides the value stored in the weights file.
    pub alpha_fbd: Option<f64>,
    /// Repulsion strength; overrides the value stored in the weights file.
    pub beta_fbd: Option<f64>,
    /// A best match is valid only if its cosine exceeds this value.
    pub match_threshold: f64,
    /// Average both scoring directions instead of treating the first image as reference.
    pub symmetric_mode: bool,
    /// Score raw features of all entities as foreground.
    pub disable_fbd: bool,
    /// Drop the relation branch; the score becomes the class-augmented entity term.
    pub disable_relation: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            tau: 0.1,
            lambda_bg: 0.5,
            clamp_eps: 1e-6,
            alpha_fbd: None,
            beta_fbd: None,
            match_threshold: 0.0,
            symmetric_mode: false,
            disable_fbd: false,
            disable_relation: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau", "must be finite and > 0"));
        }
        if !(self.lambda_bg.is_finite() && self.lambda_bg > 0.0) {
            return Err(Error::invalid("lambda_bg", "must be finite and > 0"));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.01) {
            return Err(Error::invalid("clamp_eps", "must lie in (0, 0.01)"));
        }
        for (name, v) in [("alpha_fbd", self.alpha_fbd), ("beta_fbd", self.beta_fbd)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(name, "must be finite and >= 0"));
                }
            }
        }
        if !self.match_threshold.is_finite() {
            return Err(Error::invalid("match_threshold", "must be finite"));
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let cfg: MetricConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_file(path)?).map_err(|e| e.in_file(path))
    }
}
