//! Keypoint datasets: in-memory form, validation and COCO interchange.

mod coco;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoints::{KeypointIndex, KeypointSet};

pub use coco::{decode_coco, encode_coco, lint_coco, parse_coco, serialize_coco, Decoded};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation document ({context}): {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("annotation {annotation_id}: {message}")]
    Schema { annotation_id: u64, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("dataset failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    #[default]
    Test,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// One annotated fish image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FishImageRecord {
    pub width: u32,
    pub height: u32,
    pub keypoints: KeypointSet,
}

impl FishImageRecord {
    pub fn image_id(&self) -> u64 {
        self.keypoints.image_id
    }
}

/// Ordered collection of annotated images. Immutable once built.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub role: Role,
    pub records: Vec<FishImageRecord>,
}

impl Dataset {
    pub fn new(role: Role, records: Vec<FishImageRecord>) -> Self {
        Dataset { role, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn keypoint_sets(&self) -> impl Iterator<Item = &KeypointSet> {
        self.records.iter().map(|r| &r.keypoints)
    }

    pub fn find(&self, image_id: u64) -> Option<&FishImageRecord> {
        self.records.iter().find(|r| r.image_id() == image_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Annotation does not carry exactly 66 keypoint values.
    TripletCount,
    /// Visibility flag outside {0, 1, 2}.
    VisibilityFlag,
    NegativeCoordinate,
    NonFiniteCoordinate,
    /// Labeled keypoint beyond the image width or height.
    OutsideImage,
    NonPositiveImageSize,
    DuplicateImageId,
    UnknownImage,
    MultipleAnnotations,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::TripletCount => "triplet_count",
            Rule::VisibilityFlag => "visibility_flag",
            Rule::NegativeCoordinate => "negative_coordinate",
            Rule::NonFiniteCoordinate => "non_finite_coordinate",
            Rule::OutsideImage => "outside_image",
            Rule::NonPositiveImageSize => "non_positive_image_size",
            Rule::DuplicateImageId => "duplicate_image_id",
            Rule::UnknownImage => "unknown_image",
            Rule::MultipleAnnotations => "multiple_annotations",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub image_id: u64,
    pub keypoint: Option<KeypointIndex>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "image {}", self.image_id)?;
        if let Some(k) = self.keypoint {
            write!(f, " {k}")?;
        }
        write!(f, ": {}", self.rule.name())
    }
}

/// Checks every record invariant. An empty result means the dataset is valid.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in &dataset.records {
        let image_id = record.image_id();
        if !seen.insert(image_id) {
            out.push(Violation {
                image_id,
                keypoint: None,
                rule: Rule::DuplicateImageId,
            });
        }
        if record.width == 0 || record.height == 0 {
            out.push(Violation {
                image_id,
                keypoint: None,
                rule: Rule::NonPositiveImageSize,
            });
        }
        for index in KeypointIndex::all() {
            let p = record.keypoints.get(index);
            if !p.is_labeled() {
                continue;
            }
            let rule = if !p.x.is_finite() || !p.y.is_finite() {
                Some(Rule::NonFiniteCoordinate)
            } else if p.x < 0.0 || p.y < 0.0 {
                Some(Rule::NegativeCoordinate)
            } else if p.x > record.width as f64 || p.y > record.height as f64 {
                Some(Rule::OutsideImage)
            } else {
                None
            };
            if let Some(rule) = rule {
                out.push(Violation {
                    image_id,
                    keypoint: Some(index),
                    rule,
                });
            }
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::Species;

    #[test]
    fn clean_fixture_has_no_violations() {
        assert!(validate(&fixtures::two_image()).is_empty());
    }

    #[test]
    fn negative_coordinate_is_one_violation() {
        let mut d = fixtures::two_image();
        d.records[0].keypoints.points[2].x = -3.0;
        let v = validate(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::NegativeCoordinate);
        assert_eq!(v[0].image_id, 3);
        assert_eq!(v[0].keypoint, KeypointIndex::new(3));
    }

    #[test]
    fn hidden_keypoints_are_not_checked() {
        let mut d = fixtures::two_image();
        d.records[1].keypoints.points[21].x = -50.0;
        assert!(validate(&d).is_empty());
    }

    #[test]
    fn duplicate_id_is_one_violation() {
        let mut d = fixtures::two_image();
        d.records.push(fixtures::record(3, Species::Other));
        let v = validate(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DuplicateImageId);
    }

    #[test]
    fn outside_image_and_zero_size() {
        let mut d = fixtures::two_image();
        d.records[0].keypoints.points[0].x = 641.0;
        d.records[1].height = 0;
        let rules: Vec<_> = validate(&d).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::OutsideImage));
        assert!(rules.contains(&Rule::NonPositiveImageSize));
    }
}
