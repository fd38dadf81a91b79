//! Keypoint metrics (OKS, PCK, PMP) and phenotype statistics.
//!
//! Distances in PCK and PMP are plain Euclidean distances divided by a length
//! (the per-sample scale for PCK, the shortest related ground-truth phenotype
//! for PMP), so the normalized deviation is dimensionless. Thresholds are
//! strict: a normalized deviation equal to the threshold does not count.
//!
//! Per-sample terms are computed in parallel and reduced in sample order, so
//! results do not depend on the number of worker threads.

mod report;
pub mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoints::{distance, KeypointIndex, KeypointSet, NUM_KEYPOINTS};
use crate::morphometry::{shortest_related_phenotype, PhenotypeTable};

pub use report::{
    evaluate, pixel_deviations, KeypointMmape, MetricReport, MetricSelection, OksSummary,
    PhenotypeSection, PhenotypeStats, RateSection, SampleCounts, REPORT_SCHEMA_VERSION,
};
pub use stats::{mape, mmape, ols_fit, pearson, OlsFit};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("image {image_id}: degenerate {mode:?} scale {scale}")]
    DegenerateScale {
        image_id: u64,
        mode: PckScaleMode,
        scale: f64,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("sample {sample}: ground-truth value {value} is not positive")]
    NonPositiveGroundTruth { sample: usize, value: f64 },
    #[error("no MAPE entry for phenotype {0}")]
    MissingPhenotype(String),
    #[error("image {0} has no prediction")]
    MissingPrediction(u64),
    #[error("prediction for image {pred} paired with ground truth for image {gt}")]
    ImageMismatch { gt: u64, pred: u64 },
}

/// Per-sample length that normalizes PCK deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PckScaleMode {
    /// Head length, K-1 to K-2.
    Head,
    /// Trunk length, K-2 (operculum) to K-10 (end of caudal vertebrae).
    Torso,
    /// Diagonal of the labeled ground-truth keypoints' bounding box.
    #[default]
    BboxDiagonal,
}

pub const DEFAULT_OKS_CONSTANT: f64 = 0.025;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pmp_threshold: f64,
    pub pck_threshold: f64,
    pub pck_scale_mode: PckScaleMode,
    /// Fixed OKS object scale in pixels; `None` uses each image's ground-truth bounding-box diagonal.
    pub oks_scale: Option<f64>,
    pub oks_constants: [f64; NUM_KEYPOINTS],
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pmp_threshold: 0.1,
            pck_threshold: 0.1,
            pck_scale_mode: PckScaleMode::BboxDiagonal,
            oks_scale: None,
            oks_constants: [DEFAULT_OKS_CONSTANT; NUM_KEYPOINTS],
        }
    }
}

impl EvalConfig {
    pub fn check(&self) -> Result<(), MetricError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.pmp_threshold) {
            return Err(MetricError::Domain(format!(
                "pmp_threshold must be > 0, got {}",
                self.pmp_threshold
            )));
        }
        if !positive(self.pck_threshold) {
            return Err(MetricError::Domain(format!(
                "pck_threshold must be > 0, got {}",
                self.pck_threshold
            )));
        }
        if let Some(s) = self.oks_scale {
            if !positive(s) {
                return Err(MetricError::Domain(format!(
                    "oks_scale must be > 0, got {s}"
                )));
            }
        }
        if let Some(i) = self.oks_constants.iter().position(|&k| !positive(k)) {
            return Err(MetricError::Domain(format!(
                "oks constant for {} must be > 0",
                KeypointIndex::from_slot(i)
            )));
        }
        Ok(())
    }
}

/// `exp(-d² / (2 s² k²))`.
pub fn keypoint_similarity(d: f64, s: f64, k: f64) -> Result<f64, MetricError> {
    if !(s > 0.0) || !(k > 0.0) {
        return Err(MetricError::Domain(format!(
            "scale and constant must be positive (s = {s}, k = {k})"
        )));
    }
    if !(d >= 0.0) {
        return Err(MetricError::Domain(format!(
            "distance must be >= 0, got {d}"
        )));
    }
    Ok((-(d * d) / (2.0 * s * s * k * k)).exp())
}

fn oks_scale(gt: &KeypointSet, cfg: &EvalConfig) -> Result<f64, MetricError> {
    match cfg.oks_scale {
        Some(s) => Ok(s),
        None => gt
            .bounding_box()
            .map(|b| b.diagonal())
            .filter(|&s| s > 0.0)
            .ok_or_else(|| {
                MetricError::Domain(format!(
                    "image {}: ground-truth bounding box has zero diagonal",
                    gt.image_id
                ))
            }),
    }
}

/// Object keypoint similarity: mean keypoint similarity over labeled ground-truth keypoints.
pub fn oks(pred: &KeypointSet, gt: &KeypointSet, cfg: &EvalConfig) -> Result<f64, MetricError> {
    let labeled = gt.labeled_count();
    if labeled == 0 {
        return Err(MetricError::Undefined(format!(
            "OKS of image {} with no labeled keypoints",
            gt.image_id
        )));
    }
    let s = oks_scale(gt, cfg)?;
    let mut sum = 0.0;
    for k in KeypointIndex::all() {
        let Some(g) = gt.labeled(k) else { continue };
        let d = distance(pred.get(k).xy(), g);
        sum += keypoint_similarity(d, s, cfg.oks_constants[k.slot()])?;
    }
    Ok(sum / labeled as f64)
}

/// Normalization length for PCK on one ground-truth sample.
pub fn pck_scale(gt: &KeypointSet, mode: PckScaleMode) -> Result<f64, MetricError> {
    let pair = |a: usize, b: usize| -> Option<f64> {
        let a = gt.labeled(KeypointIndex::new(a)?)?;
        let b = gt.labeled(KeypointIndex::new(b)?)?;
        Some(distance(a, b))
    };
    let scale = match mode {
        PckScaleMode::Head => pair(1, 2),
        PckScaleMode::Torso => pair(2, 10),
        PckScaleMode::BboxDiagonal => gt.bounding_box().map(|b| b.diagonal()),
    }
    .unwrap_or(0.0);
    if scale > 0.0 && scale.is_finite() {
        Ok(scale)
    } else {
        Err(MetricError::DegenerateScale {
            image_id: gt.image_id,
            mode,
            scale,
        })
    }
}

/// Hit rate of one keypoint over a set of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointRate {
    pub index: KeypointIndex,
    /// `hits / evaluated`, `None` when no sample could be evaluated.
    pub rate: Option<f64>,
    pub hits: usize,
    pub evaluated: usize,
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Hit,
    Miss,
    Skip,
}

fn tally(per_sample: &[[Outcome; NUM_KEYPOINTS]]) -> Vec<KeypointRate> {
    KeypointIndex::all()
        .map(|k| {
            let (mut hits, mut evaluated, mut skipped) = (0, 0, 0);
            for row in per_sample {
                match row[k.slot()] {
                    Outcome::Hit => {
                        hits += 1;
                        evaluated += 1;
                    }
                    Outcome::Miss => evaluated += 1,
                    Outcome::Skip => skipped += 1,
                }
            }
            KeypointRate {
                index: k,
                rate: (evaluated > 0).then(|| hits as f64 / evaluated as f64),
                hits,
                evaluated,
                skipped,
            }
        })
        .collect()
}

fn check_pairing(preds: &[KeypointSet], gts: &[KeypointSet]) -> Result<(), MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch {
            left: preds.len(),
            right: gts.len(),
        });
    }
    if let Some((p, g)) = preds
        .iter()
        .zip(gts)
        .find(|(p, g)| p.image_id != g.image_id)
    {
        return Err(MetricError::ImageMismatch {
            gt: g.image_id,
            pred: p.image_id,
        });
    }
    Ok(())
}

/// Percentage of correct keypoints, per keypoint.
///
/// Samples where the ground-truth keypoint is unlabeled are skipped for that keypoint.
pub fn pck(
    preds: &[KeypointSet],
    gts: &[KeypointSet],
    cfg: &EvalConfig,
) -> Result<Vec<KeypointRate>, MetricError> {
    check_pairing(preds, gts)?;
    let rows: Vec<[Outcome; NUM_KEYPOINTS]> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(pred, gt)| {
            let h = pck_scale(gt, cfg.pck_scale_mode)?;
            Ok(std::array::from_fn(|slot| {
                let k = KeypointIndex::from_slot(slot);
                match gt.labeled(k) {
                    None => Outcome::Skip,
                    Some(g) if distance(pred.get(k).xy(), g) / h < cfg.pck_threshold => {
                        Outcome::Hit
                    }
                    Some(_) => Outcome::Miss,
                }
            }))
        })
        .collect::<Result<_, MetricError>>()?;
    Ok(tally(&rows))
}

/// Percentage of measured phenotype, per keypoint.
///
/// The deviation of keypoint `j` is divided by the shortest ground-truth
/// phenotype that uses `j`. Samples where `j` is unlabeled, has no measurable
/// related phenotype, or whose shortest related phenotype has zero length are
/// skipped for that keypoint.
pub fn pmp(
    preds: &[KeypointSet],
    gts: &[KeypointSet],
    table: &PhenotypeTable,
    cfg: &EvalConfig,
) -> Result<Vec<KeypointRate>, MetricError> {
    check_pairing(preds, gts)?;
    let rows: Vec<[Outcome; NUM_KEYPOINTS]> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(pred, gt)| {
            std::array::from_fn(|slot| {
                let k = KeypointIndex::from_slot(slot);
                let Some(g) = gt.labeled(k) else {
                    return Outcome::Skip;
                };
                match shortest_related_phenotype(k, gt, table) {
                    Ok(m) if m.value > 0.0 => {
                        if distance(pred.get(k).xy(), g) / m.value < cfg.pmp_threshold {
                            Outcome::Hit
                        } else {
                            Outcome::Miss
                        }
                    }
                    _ => Outcome::Skip,
                }
            })
        })
        .collect();
    Ok(tally(&rows))
}

/// Mean of the defined per-keypoint rates.
pub fn mean_rate(rates: &[KeypointRate]) -> Option<f64> {
    let defined: Vec<f64> = rates.iter().filter_map(|r| r.rate).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}
