//! Class labels and relation triplets for one image.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};

/// A `<subject, predicate, object>` statement. Serialized as a 3-element array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation(pub String, pub String, pub String);

impl Relation {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Relation(subject.into(), predicate.into(), object.into())
    }

    pub fn subject(&self) -> &str {
        &self.0
    }

    pub fn predicate(&self) -> &str {
        &self.1
    }

    pub fn object(&self) -> &str {
        &self.2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticAnnotation {
    pub image_id: String,
    pub classes: Vec<String>,
    pub relations: Vec<Relation>,
}

/// Lowercases and collapses internal whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl SemanticAnnotation {
    /// Builds an annotation, normalizing every label.
    pub fn new(image_id: impl Into<String>, classes: Vec<String>, relations: Vec<Relation>) -> Result<Self> {
        let mut ann = SemanticAnnotation {
            image_id: image_id.into(),
            classes,
            relations,
        };
        ann.normalize()?;
        Ok(ann)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut ann: SemanticAnnotation =
            serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
        ann.normalize()?;
        Ok(ann)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_file(path)?).map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json().as_bytes())
    }

    fn normalize(&mut self) -> Result<()> {
        if self.image_id.trim().is_empty() {
            return Err(Error::invalid("image_id", "empty"));
        }
        for (i, c) in self.classes.iter_mut().enumerate() {
            *c = normalize_label(c);
            if c.is_empty() {
                return Err(Error::invalid(format!("classes[{i}]"), "empty label"));
            }
        }
        for (i, r) in self.relations.iter_mut().enumerate() {
            for (slot, name) in [(&mut r.0, "subject"), (&mut r.1, "predicate"), (&mut r.2, "object")] {
                *slot = normalize_label(slot);
                if slot.is_empty() {
                    return Err(Error::invalid(format!("relations[{i}].{name}"), "empty label"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_normalized_on_load() {
        let doc = r#"{"image_id": "x", "classes": ["  Horse ", "Traffic   Light"],
                      "relations": [["Horse", "STANDS on", "grass"]]}"#;
        let ann = SemanticAnnotation::parse(doc.as_bytes()).unwrap();
        assert_eq!(ann.classes, vec!["horse", "traffic light"]);
        assert_eq!(ann.relations[0], Relation::new("horse", "stands on", "grass"));
    }

    #[test]
    fn duplicates_are_kept() {
        let doc = r#"{"image_id": "x", "classes": ["dog", "dog"], "relations": []}"#;
        let ann = SemanticAnnotation::parse(doc.as_bytes()).unwrap();
        assert_eq!(ann.classes.len(), 2);
    }

    #[test]
    fn blank_predicate_is_rejected() {
        let doc = r#"{"image_id": "x", "classes": [], "relations": [["a", "  ", "b"]]}"#;
        let err = SemanticAnnotation::parse(doc.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("relations[0].predicate"), "{err}");
    }

    #[test]
    fn two_element_relation_is_malformed() {
        let doc = r#"{"image_id": "x", "classes": [], "relations": [["a", "b"]]}"#;
        assert!(matches!(
            SemanticAnnotation::parse(doc.as_bytes()),
            Err(Error::Malformed(_))
        ));
    }
}
