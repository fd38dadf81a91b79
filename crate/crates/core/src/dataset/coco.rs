//! COCO keypoint annotation files.
//!
//! Reading accepts any COCO-style document with an `images` array and an
//! `annotations` array whose `keypoints` hold 22 flat `(x, y, v)` triplets.
//! Skeleton edges and unknown fields are ignored. One annotation per image.
//!
//! Writing emits a canonical document: images and annotations sorted by image
//! id, annotation ids numbered from 1 in that order, a fixed key order, and a
//! fixed `categories` block with one entry per species tag (ids 1..=5 in
//! [`Species::ALL`] order) whose skeleton lists the phenotype endpoint pairs.
//! The dataset role is stored as `info.role`.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use super::{validate, Dataset, DatasetError, FishImageRecord, Role, Rule, Violation};
use crate::keypoints::{Keypoint, KeypointSet, Species, Visibility, KEYPOINT_NAMES, NUM_KEYPOINTS};
use crate::morphometry::PhenotypeTable;

const TRIPLET_LEN: usize = 3 * NUM_KEYPOINTS;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
struct RawDocument {
    #[serde(default)]
    info: Option<RawInfo>,
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<RawCategory>,
}

#[derive(Debug, Deserialize)]
struct RawInfo {
    #[serde(default)]
    role: Option<Role>,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default)]
    category_id: Option<u64>,
    keypoints: Vec<f64>,
    #[serde(default)]
    num_keypoints: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
}

/// A decoded dataset plus the non-fatal observations made while reading it.
#[derive(Debug)]
pub struct Decoded {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

enum Issue {
    Schema {
        annotation_id: u64,
        image_id: u64,
        rule: Rule,
        message: String,
    },
    Integrity {
        image_id: u64,
        rule: Rule,
        message: String,
    },
}

impl Issue {
    fn into_error(self) -> DatasetError {
        match self {
            Issue::Schema {
                annotation_id,
                message,
                ..
            } => DatasetError::Schema {
                annotation_id,
                message,
            },
            Issue::Integrity { message, .. } => DatasetError::Integrity(message),
        }
    }

    fn into_violation(self) -> Violation {
        let (image_id, rule) = match self {
            Issue::Schema { image_id, rule, .. } | Issue::Integrity { image_id, rule, .. } => {
                (image_id, rule)
            }
        };
        Violation {
            image_id,
            keypoint: None,
            rule,
        }
    }
}

fn read_document(text: &str, context: &str) -> Result<RawDocument, DatasetError> {
    serde_json::from_str(text).map_err(|source| DatasetError::Parse {
        context: context.to_string(),
        source,
    })
}

fn decode_triplets(ann: &RawAnnotation) -> Result<[Keypoint; NUM_KEYPOINTS], Issue> {
    let schema = |rule, message| Issue::Schema {
        annotation_id: ann.id,
        image_id: ann.image_id,
        rule,
        message,
    };
    if ann.keypoints.len() != TRIPLET_LEN {
        return Err(schema(
            Rule::TripletCount,
            format!(
                "expected {TRIPLET_LEN} keypoint values (22 triplets), found {}",
                ann.keypoints.len()
            ),
        ));
    }
    let mut points = [Keypoint::default(); NUM_KEYPOINTS];
    for (i, triplet) in ann.keypoints.chunks_exact(3).enumerate() {
        let flag = triplet[2];
        let v = (flag.fract() == 0.0 && (0.0..=2.0).contains(&flag))
            .then(|| Visibility::from_flag(flag as u8))
            .flatten()
            .ok_or_else(|| {
                schema(
                    Rule::VisibilityFlag,
                    format!("keypoint K-{} has visibility flag {flag}", i + 1),
                )
            })?;
        points[i] = Keypoint {
            x: triplet[0],
            y: triplet[1],
            v,
        };
    }
    Ok(points)
}

/// Builds the dataset, collecting every structural issue instead of stopping at the first.
fn assemble(doc: RawDocument) -> (Dataset, Vec<Issue>, Vec<String>) {
    let mut issues = Vec::new();
    let mut warnings = Vec::new();

    let species_by_category: HashMap<u64, Species> = doc
        .categories
        .iter()
        .map(|c| (c.id, Species::from_name(&c.name)))
        .collect();

    // the first occurrence of a duplicated id wins
    let mut first: BTreeMap<u64, &RawImage> = BTreeMap::new();
    for image in &doc.images {
        match first.entry(image.id) {
            Entry::Occupied(_) => issues.push(Issue::Integrity {
                image_id: image.id,
                rule: Rule::DuplicateImageId,
                message: format!("duplicate image id {}", image.id),
            }),
            Entry::Vacant(slot) => {
                slot.insert(image);
            }
        }
    }

    if doc.annotations.is_empty() {
        warnings.push("document has no annotations; dataset is empty".to_string());
    }

    let mut annotated = HashSet::new();
    let mut records = Vec::with_capacity(doc.annotations.len());
    for ann in &doc.annotations {
        let Some(image) = first.get(&ann.image_id) else {
            issues.push(Issue::Integrity {
                image_id: ann.image_id,
                rule: Rule::UnknownImage,
                message: format!(
                    "annotation {} references unknown image {}",
                    ann.id, ann.image_id
                ),
            });
            continue;
        };
        if !annotated.insert(ann.image_id) {
            issues.push(Issue::Integrity {
                image_id: ann.image_id,
                rule: Rule::MultipleAnnotations,
                message: format!(
                    "image {} has more than one keypoint annotation (annotation {})",
                    ann.image_id, ann.id
                ),
            });
            continue;
        }
        let points = match decode_triplets(ann) {
            Ok(points) => points,
            Err(issue) => {
                issues.push(issue);
                continue;
            }
        };
        let species = ann
            .category_id
            .and_then(|c| species_by_category.get(&c).copied())
            .unwrap_or_default();
        let keypoints = KeypointSet::new(ann.image_id, species, points);
        if let Some(n) = ann.num_keypoints {
            let labeled = keypoints.labeled_count();
            if n as usize != labeled {
                warnings.push(format!(
                    "annotation {}: num_keypoints is {n} but {labeled} keypoints are labeled",
                    ann.id
                ));
            }
        }
        records.push(FishImageRecord {
            width: image.width,
            height: image.height,
            keypoints,
        });
    }

    for id in first.keys() {
        if !annotated.contains(id) {
            warnings.push(format!("image {id} has no keypoint annotation; skipped"));
        }
    }
    warnings.sort();

    records.sort_by_key(|r| r.image_id());
    let role = doc.info.and_then(|i| i.role).unwrap_or_default();
    (Dataset::new(role, records), issues, warnings)
}

/// Decodes a COCO keypoint document held in memory.
pub fn decode_coco(text: &str) -> Result<Decoded, DatasetError> {
    let doc = read_document(text, "<memory>")?;
    let (dataset, issues, warnings) = assemble(doc);
    if let Some(issue) = issues.into_iter().next() {
        return Err(issue.into_error());
    }
    Ok(Decoded { dataset, warnings })
}

/// Reads a COCO keypoint file. Warnings are sent to the logger.
pub fn parse_coco(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc = read_document(&text, &path.display().to_string())?;
    let (dataset, issues, warnings) = assemble(doc);
    if let Some(issue) = issues.into_iter().next() {
        return Err(issue.into_error());
    }
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(dataset)
}

/// Lists every violation in a COCO document, including the structural ones
/// that make [`decode_coco`] fail. Only a document that is not valid JSON of
/// the expected shape is an error.
pub fn lint_coco(text: &str) -> Result<Vec<Violation>, DatasetError> {
    let doc = read_document(text, "<memory>")?;
    let (dataset, issues, _) = assemble(doc);
    let mut out: Vec<Violation> = issues.into_iter().map(Issue::into_violation).collect();
    out.extend(validate(&dataset));
    Ok(out)
}

#[derive(Serialize)]
struct OutInfo<'a> {
    description: &'a str,
    format_version: u32,
    role: Role,
}

#[derive(Serialize)]
struct OutImage {
    id: u64,
    width: u32,
    height: u32,
}

struct Triplets<'a>(&'a [Keypoint; NUM_KEYPOINTS]);

impl Serialize for Triplets<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(TRIPLET_LEN))?;
        for p in self.0 {
            let (x, y) = if p.x.is_finite() && p.y.is_finite() {
                (p.x, p.y)
            } else {
                (0.0, 0.0)
            };
            seq.serialize_element(&x)?;
            seq.serialize_element(&y)?;
            seq.serialize_element(&p.v.flag())?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct OutAnnotation<'a> {
    id: u64,
    image_id: u64,
    category_id: u64,
    iscrowd: u8,
    num_keypoints: usize,
    keypoints: Triplets<'a>,
}

#[derive(Serialize)]
struct OutCategory {
    id: u64,
    name: &'static str,
    supercategory: &'static str,
    keypoints: Vec<&'static str>,
    skeleton: Vec<[usize; 2]>,
}

#[derive(Serialize)]
struct OutDocument<'a> {
    info: OutInfo<'a>,
    images: Vec<OutImage>,
    annotations: Vec<OutAnnotation<'a>>,
    categories: Vec<OutCategory>,
}

fn category_id(species: Species) -> u64 {
    Species::ALL.iter().position(|s| *s == species).unwrap() as u64 + 1
}

/// Canonical COCO text for a valid dataset.
pub fn encode_coco(dataset: &Dataset) -> Result<String, DatasetError> {
    let violations = validate(dataset);
    if !violations.is_empty() {
        return Err(DatasetError::Invalid(violations));
    }
    let mut records: Vec<&FishImageRecord> = dataset.records.iter().collect();
    records.sort_by_key(|r| r.image_id());

    let skeleton: Vec<[usize; 2]> = PhenotypeTable::standard()
        .defs()
        .iter()
        .map(|d| [d.endpoints.0.get(), d.endpoints.1.get()])
        .collect();
    let categories = Species::ALL
        .iter()
        .map(|&s| OutCategory {
            id: category_id(s),
            name: s.tag(),
            supercategory: "fish",
            keypoints: KEYPOINT_NAMES.to_vec(),
            skeleton: skeleton.clone(),
        })
        .collect();

    let doc = OutDocument {
        info: OutInfo {
            description: "phenokey canonical keypoint annotations",
            format_version: FORMAT_VERSION,
            role: dataset.role,
        },
        images: records
            .iter()
            .map(|r| OutImage {
                id: r.image_id(),
                width: r.width,
                height: r.height,
            })
            .collect(),
        annotations: records
            .iter()
            .enumerate()
            .map(|(i, r)| OutAnnotation {
                id: i as u64 + 1,
                image_id: r.image_id(),
                category_id: category_id(r.keypoints.species),
                iscrowd: 0,
                num_keypoints: r.keypoints.labeled_count(),
                keypoints: Triplets(&r.keypoints.points),
            })
            .collect(),
        categories,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("canonical document serializes");
    text.push('\n');
    Ok(text)
}

/// Writes the canonical COCO form. Validation runs before the file is touched.
pub fn serialize_coco(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let text = encode_coco(dataset)?;
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}
