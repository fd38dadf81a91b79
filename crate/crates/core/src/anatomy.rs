//! Anatomical priors and the box-constraint (ACR) loss.
//!
//! A prior stores, for every keypoint, the range its body-normalized
//! coordinates took over a training set. Placed over a fish bounding box it
//! becomes one box per keypoint; the loss is the L1 distance of each
//! prediction to its box.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::keypoints::{BBox, KeypointIndex, KeypointSet, Species, NUM_KEYPOINTS};

#[derive(Debug, Error, PartialEq)]
pub enum AnatomyError {
    #[error("image {image_id}: need at least 2 labeled keypoints to normalize, found {found}")]
    TooFewKeypoints { image_id: u64, found: usize },
    #[error("image {image_id}: degenerate pose, labeled keypoints span {width} x {height} px")]
    DegeneratePose {
        image_id: u64,
        width: f64,
        height: f64,
    },
    #[error("cannot fit a prior on an empty training set")]
    EmptyTrainingSet,
    #[error("box frame must have positive width and height, got {width} x {height}")]
    DegenerateFrame { width: f64, height: f64 },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
}

/// Keypoints mapped into the unit square spanned by the labeled keypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedKeypoints {
    pub image_id: u64,
    /// `None` for unlabeled keypoints.
    pub points: [Option<[f64; 2]>; NUM_KEYPOINTS],
    pub bbox: BBox,
}

pub fn normalize(keypoints: &KeypointSet) -> Result<NormalizedKeypoints, AnatomyError> {
    let found = keypoints.labeled_count();
    if found < 2 {
        return Err(AnatomyError::TooFewKeypoints {
            image_id: keypoints.image_id,
            found,
        });
    }
    let bbox = keypoints.bounding_box().expect("labeled keypoints exist");
    if !bbox.has_positive_extent() {
        return Err(AnatomyError::DegeneratePose {
            image_id: keypoints.image_id,
            width: bbox.width(),
            height: bbox.height(),
        });
    }
    let (w, h) = (bbox.width(), bbox.height());
    let points = std::array::from_fn(|slot| {
        keypoints
            .labeled(KeypointIndex::from_slot(slot))
            .map(|[x, y]| [(x - bbox.x_min) / w, (y - bbox.y_min) / h])
    });
    Ok(NormalizedKeypoints {
        image_id: keypoints.image_id,
        points,
        bbox,
    })
}

/// Range of one keypoint's normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointExtremes {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl KeypointExtremes {
    /// The whole unit square; used for keypoints never labeled in training.
    pub const UNCONSTRAINED: KeypointExtremes = KeypointExtremes {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };

    fn point(p: [f64; 2]) -> Self {
        KeypointExtremes {
            x_min: p[0],
            x_max: p[0],
            y_min: p[1],
            y_max: p[1],
        }
    }

    fn merge(self, other: Self) -> Self {
        KeypointExtremes {
            x_min: self.x_min.min(other.x_min),
            x_max: self.x_max.max(other.x_max),
            y_min: self.y_min.min(other.y_min),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

pub const PRIOR_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnatomicalPrior {
    pub schema_version: u32,
    pub species: Species,
    pub training_set_size: usize,
    /// Training images in which each keypoint was labeled.
    pub observations: [usize; NUM_KEYPOINTS],
    pub extremes: [KeypointExtremes; NUM_KEYPOINTS],
}

impl AnatomicalPrior {
    pub fn get(&self, k: KeypointIndex) -> &KeypointExtremes {
        &self.extremes[k.slot()]
    }

    pub fn check(&self) -> Result<(), AnatomyError> {
        for (slot, e) in self.extremes.iter().enumerate() {
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            if !(e.x_min <= e.x_max && e.y_min <= e.y_max)
                || ![e.x_min, e.x_max, e.y_min, e.y_max].into_iter().all(unit)
            {
                return Err(AnatomyError::InvalidPrior(format!(
                    "{} has extremes {e:?}",
                    KeypointIndex::from_slot(slot)
                )));
            }
        }
        Ok(())
    }
}

type Accumulator = [(usize, Option<KeypointExtremes>); NUM_KEYPOINTS];

fn merge_acc(mut a: Accumulator, b: Accumulator) -> Accumulator {
    for (x, y) in a.iter_mut().zip(b) {
        x.0 += y.0;
        x.1 = match (x.1, y.1) {
            (Some(p), Some(q)) => Some(p.merge(q)),
            (p, q) => p.or(q),
        };
    }
    a
}

/// Per-keypoint extremes of the normalized ground-truth coordinates, taken over
/// all training images. The species tag is the records' common species, or
/// `Other` when they disagree.
pub fn fit_prior(train: &Dataset) -> Result<AnatomicalPrior, AnatomyError> {
    if train.is_empty() {
        return Err(AnatomyError::EmptyTrainingSet);
    }
    let normalized: Vec<NormalizedKeypoints> = train
        .records
        .par_iter()
        .map(|r| normalize(&r.keypoints))
        .collect::<Result<_, _>>()?;
    // min/max are associative and commutative, so the reduction order does not matter
    let acc = normalized
        .par_iter()
        .map(|n| {
            let mut acc: Accumulator = [(0, None); NUM_KEYPOINTS];
            for (slot, p) in n.points.iter().enumerate() {
                if let Some(p) = p {
                    acc[slot] = (1, Some(KeypointExtremes::point(*p)));
                }
            }
            acc
        })
        .reduce(|| [(0, None); NUM_KEYPOINTS], merge_acc);

    for (slot, (count, _)) in acc.iter().enumerate() {
        if *count == 0 {
            log::warn!(
                "{} never labeled in training; its box is unconstrained",
                KeypointIndex::from_slot(slot)
            );
        }
    }
    let first = train.records[0].keypoints.species;
    let species = if train.keypoint_sets().all(|k| k.species == first) {
        first
    } else {
        Species::Other
    };
    Ok(AnatomicalPrior {
        schema_version: PRIOR_SCHEMA_VERSION,
        species,
        training_set_size: train.len(),
        observations: acc.map(|(c, _)| c),
        extremes: acc.map(|(_, e)| e.unwrap_or(KeypointExtremes::UNCONSTRAINED)),
    })
}

/// Prior extremes placed over a fish bounding box.
///
/// Box corners are `frame.min + extreme * frame.extent`. Whether a point lies
/// outside is decided in the frame's normalized coordinates, so a point whose
/// normalized coordinate took part in fitting the prior is never outside its
/// box because of rounding. Violation sizes are measured in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    pub frame: BBox,
    /// Normalized `[x, y]` lower corner per keypoint.
    pub lower: [[f64; 2]; NUM_KEYPOINTS],
    /// Normalized `[x, y]` upper corner per keypoint.
    pub upper: [[f64; 2]; NUM_KEYPOINTS],
}

impl BoxConstraint {
    fn origin(&self) -> [f64; 2] {
        [self.frame.x_min, self.frame.y_min]
    }

    fn extent(&self) -> [f64; 2] {
        [self.frame.width(), self.frame.height()]
    }

    /// Upper-left corner in pixels.
    pub fn k_min(&self, k: KeypointIndex) -> [f64; 2] {
        let (o, e, l) = (self.origin(), self.extent(), self.lower[k.slot()]);
        [o[0] + l[0] * e[0], o[1] + l[1] * e[1]]
    }

    /// Lower-right corner in pixels.
    pub fn k_max(&self, k: KeypointIndex) -> [f64; 2] {
        let (o, e, u) = (self.origin(), self.extent(), self.upper[k.slot()]);
        [o[0] + u[0] * e[0], o[1] + u[1] * e[1]]
    }

    /// Hinge terms for one coordinate, (below lower, above upper), in pixels.
    /// Which side is active is decided in normalized coordinates.
    fn hinges(&self, slot: usize, axis: usize, value: f64) -> (f64, f64) {
        let (o, e) = (self.origin()[axis], self.extent()[axis]);
        let u = (value - o) / e;
        let lo = self.lower[slot][axis];
        let hi = self.upper[slot][axis];
        let below = if u < lo {
            (o + lo * e - value).max(0.0)
        } else {
            0.0
        };
        let above = if u > hi {
            (value - (o + hi * e)).max(0.0)
        } else {
            0.0
        };
        (below, above)
    }

    /// Distance in pixels from a scalar coordinate to the nearest box edge on
    /// its axis, positive inside or outside alike.
    pub fn boundary_distance(&self, k: KeypointIndex, axis: usize, value: f64) -> f64 {
        let lo = self.k_min(k)[axis];
        let hi = self.k_max(k)[axis];
        (value - lo).abs().min((value - hi).abs())
    }
}

pub fn box_for_image(prior: &AnatomicalPrior, bbox: &BBox) -> Result<BoxConstraint, AnatomyError> {
    if !bbox.has_positive_extent() {
        return Err(AnatomyError::DegenerateFrame {
            width: bbox.width(),
            height: bbox.height(),
        });
    }
    Ok(BoxConstraint {
        frame: *bbox,
        lower: prior.extremes.map(|e| [e.x_min, e.y_min]),
        upper: prior.extremes.map(|e| [e.x_max, e.y_max]),
    })
}

/// Box placed over the bounding rectangle of the labeled predicted keypoints,
/// for use when the true fish extent is unknown.
pub fn box_from_predictions(
    prior: &AnatomicalPrior,
    preds: &KeypointSet,
) -> Result<BoxConstraint, AnatomyError> {
    let bbox = preds.bounding_box().ok_or(AnatomyError::TooFewKeypoints {
        image_id: preds.image_id,
        found: 0,
    })?;
    box_for_image(prior, &bbox)
}

/// `Σ max(0, k_min − p) + max(0, p − k_max)` over labeled keypoints and both axes, in pixels.
pub fn acr_loss(preds: &KeypointSet, bx: &BoxConstraint) -> f64 {
    acr_loss_coords(&preds.coords(), Some(preds), bx)
}

pub(crate) fn acr_loss_coords(
    coords: &[f64; 2 * NUM_KEYPOINTS],
    mask: Option<&KeypointSet>,
    bx: &BoxConstraint,
) -> f64 {
    let mut total = 0.0;
    for slot in 0..NUM_KEYPOINTS {
        if mask.is_some_and(|m| !m.points[slot].is_labeled()) {
            continue;
        }
        for axis in 0..2 {
            let (below, above) = bx.hinges(slot, axis, coords[2 * slot + axis]);
            total += below + above;
        }
    }
    total
}

/// Subgradient of [`acr_loss`] per keypoint `[d/dx, d/dy]`: −1 below the box,
/// +1 above, 0 inside or exactly on an edge.
pub fn acr_gradient(preds: &KeypointSet, bx: &BoxConstraint) -> [[f64; 2]; NUM_KEYPOINTS] {
    let g = acr_gradient_coords(&preds.coords(), Some(preds), bx);
    std::array::from_fn(|slot| [g[2 * slot], g[2 * slot + 1]])
}

pub(crate) fn acr_gradient_coords(
    coords: &[f64; 2 * NUM_KEYPOINTS],
    mask: Option<&KeypointSet>,
    bx: &BoxConstraint,
) -> [f64; 2 * NUM_KEYPOINTS] {
    let mut g = [0.0; 2 * NUM_KEYPOINTS];
    for slot in 0..NUM_KEYPOINTS {
        if mask.is_some_and(|m| !m.points[slot].is_labeled()) {
            continue;
        }
        for axis in 0..2 {
            let (below, above) = bx.hinges(slot, axis, coords[2 * slot + axis]);
            g[2 * slot + axis] = if below > 0.0 {
                -1.0
            } else if above > 0.0 {
                1.0
            } else {
                0.0
            };
        }
    }
    g
}

/// Number of coordinates (out of 44) lying outside their box.
pub fn count_violations(coords: &[f64; 2 * NUM_KEYPOINTS], bx: &BoxConstraint) -> usize {
    count_violations_coords(coords, None, bx)
}

pub(crate) fn count_violations_coords(
    coords: &[f64; 2 * NUM_KEYPOINTS],
    mask: Option<&KeypointSet>,
    bx: &BoxConstraint,
) -> usize {
    (0..NUM_KEYPOINTS)
        .filter(|&slot| mask.is_none_or(|m| m.points[slot].is_labeled()))
        .flat_map(|slot| (0..2).map(move |axis| (slot, axis)))
        .filter(|&(slot, axis)| {
            let (below, above) = bx.hinges(slot, axis, coords[2 * slot + axis]);
            below > 0.0 || above > 0.0
        })
        .count()
}
