//! Per-image entity sets: the engine's surrogate for an image.
//!
//! On disk an entity set is a UTF-8 JSON document:
//!
//! ```json
//! {"image_id": "img", "feature_dim": 2, "global_feature": [1.0, 0.0],
//!  "entities": [{"id": "e0", "feature": [1.0, 0.0], "area": 120.0}]}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so
//! `parse -> serialize -> parse` is exact.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};

/// One segmented region: pooled encoder feature plus mask area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub feature: Vec<f64>,
    pub area: f64,
    /// Foreground partition coefficient, filled in by decoupling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fg_prob: Option<f64>,
}

impl Entity {
    pub fn new(id: impl Into<String>, feature: Vec<f64>, area: f64) -> Self {
        Entity {
            id: id.into(),
            feature,
            area,
            fg_prob: None,
        }
    }
}

/// A feature vector with the mask area it inherits; the unit the matcher works on.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub feature: Vec<f64>,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySet {
    pub image_id: String,
    pub feature_dim: usize,
    pub global_feature: Vec<f64>,
    pub entities: Vec<Entity>,
}

impl EntitySet {
    /// Builds a validated set; `feature_dim` is taken from the global feature.
    pub fn new(
        image_id: impl Into<String>,
        global_feature: Vec<f64>,
        entities: Vec<Entity>,
    ) -> Result<Self> {
        let set = EntitySet {
            image_id: image_id.into(),
            feature_dim: global_feature.len(),
            global_feature,
            entities,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let set: EntitySet =
            serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_file(path)?).map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("entity set serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.entities.iter().map(|e| e.feature.as_slice()).collect()
    }

    /// Raw entity features paired with their areas.
    pub fn regions(&self) -> Vec<Region> {
        self.entities
            .iter()
            .map(|e| Region {
                feature: e.feature.clone(),
                area: e.area,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be a positive integer"));
        }
        if self.global_feature.len() != self.feature_dim {
            return Err(Error::dim(
                "global_feature",
                self.feature_dim,
                self.global_feature.len(),
            ));
        }
        if !self.global_feature.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("global_feature", "non-finite component"));
        }
        if self.global_feature.iter().all(|&x| x == 0.0) {
            return Err(Error::invalid(
                "global_feature",
                "must have at least one nonzero component",
            ));
        }

        let mut seen = HashSet::with_capacity(self.entities.len());
        for (i, e) in self.entities.iter().enumerate() {
            if e.id.is_empty() {
                return Err(Error::invalid(format!("entities[{i}].id"), "empty id"));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(
                    format!("entities[{i}].id"),
                    format!("duplicate id {:?}", e.id),
                ));
            }
            if e.feature.len() != self.feature_dim {
                return Err(Error::dim(
                    format!("entities[{i}].feature (id {:?})", e.id),
                    self.feature_dim,
                    e.feature.len(),
                ));
            }
            if !e.feature.iter().all(|x| x.is_finite()) {
                return Err(Error::invalid(
                    format!("entities[{i}].feature"),
                    "non-finite component",
                ));
            }
            if !(e.area.is_finite() && e.area > 0.0) {
                return Err(Error::invalid(
                    format!("entities[{i}].area"),
                    format!("must be finite and > 0, got {}", e.area),
                ));
            }
            if let Some(p) = e.fg_prob {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(
                        format!("entities[{i}].fg_prob"),
                        format!("must lie in [0, 1], got {p}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{
        "image_id": "a",
        "feature_dim": 4,
        "global_feature": [1, 0, 0, 0],
        "entities": [
            {"id": "e0", "feature": [1, 0, 0, 0], "area": 10},
            {"id": "e1", "feature": [0, 1, 0, 0.5], "area": 2.5, "fg_prob": 0.25}
        ]
    }"#;

    #[test]
    fn parses_valid_document() {
        let set = EntitySet::parse(VALID.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.feature_dim, 4);
        assert_eq!(set.entities[1].fg_prob, Some(0.25));
        assert_eq!(set.entities[0].fg_prob, None);
    }

    #[test]
    fn rejects_short_feature_naming_entity() {
        let doc = VALID.replace("[0, 1, 0, 0.5]", "[0, 1, 0]");
        let err = EntitySet::parse(doc.as_bytes()).unwrap_err();
        match &err {
            Error::DimensionMismatch {
                context,
                expected,
                actual,
            } => {
                assert!(context.contains("entities[1]"), "{context}");
                assert!(context.contains("e1"));
                assert_eq!((*expected, *actual), (4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_area() {
        let doc = VALID.replace("\"area\": 10", "\"area\": 0");
        let err = EntitySet::parse(doc.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("entities[0].area"), "{err}");
    }

    #[test]
    fn round_trip_is_exact() {
        let mut set = EntitySet::parse(VALID.as_bytes()).unwrap();
        set.entities[0].feature[2] = 0.1 + 0.2;
        set.global_feature[3] = std::f64::consts::PI * 1e-7;
        let again = EntitySet::parse(set.to_json().as_bytes()).unwrap();
        assert_eq!(set, again);
    }
}
