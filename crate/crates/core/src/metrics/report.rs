use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    mape, mean_rate, mmape, oks, ols_fit, pck, pearson, pmp, EvalConfig, KeypointRate, MetricError,
};
use crate::dataset::Dataset;
use crate::keypoints::{distance, KeypointIndex, KeypointSet, NUM_KEYPOINTS};
use crate::morphometry::PhenotypeTable;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricSelection {
    Oks,
    Pck,
    Pmp,
    #[default]
    All,
}

impl MetricSelection {
    fn includes(self, other: MetricSelection) -> bool {
        self == MetricSelection::All || self == other
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageOks {
    pub image_id: u64,
    /// `None` when the ground truth has no labeled keypoint.
    pub oks: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OksSummary {
    pub per_image: Vec<ImageOks>,
    pub mean: Option<f64>,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSection {
    pub per_keypoint: Vec<KeypointRate>,
    /// Mean over keypoints with a defined rate.
    pub mean: Option<f64>,
}

impl RateSection {
    fn new(per_keypoint: Vec<KeypointRate>) -> Self {
        let mean = mean_rate(&per_keypoint);
        RateSection { per_keypoint, mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeStats {
    pub abbrev: String,
    /// Samples with both ground-truth endpoints labeled and a positive ground-truth length.
    pub samples: usize,
    pub skipped: usize,
    pub mape: Option<f64>,
    pub pearson: Option<f64>,
    pub r2: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointMmape {
    pub index: KeypointIndex,
    pub mmape: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeSection {
    pub per_phenotype: Vec<PhenotypeStats>,
    pub per_keypoint_mmape: Vec<KeypointMmape>,
    /// Mean over keypoints with a defined mMAPE.
    pub mean_mmape: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub images: usize,
    pub labeled_keypoints: usize,
}

/// Everything `evaluate` computes. Sections that were not requested are absent;
/// values that are undefined for the data are explicit nulls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub metric: MetricSelection,
    pub config: EvalConfig,
    pub sample_counts: SampleCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oks: Option<OksSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pck: Option<RateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmp: Option<RateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phenotypes: Option<PhenotypeSection>,
}

/// Predictions reordered to follow the ground-truth records.
fn align(
    gt: &Dataset,
    pred: &Dataset,
) -> Result<(Vec<KeypointSet>, Vec<KeypointSet>), MetricError> {
    let by_id: HashMap<u64, &KeypointSet> = pred.keypoint_sets().map(|k| (k.image_id, k)).collect();
    let gts: Vec<KeypointSet> = gt.keypoint_sets().cloned().collect();
    let preds = gts
        .iter()
        .map(|g| {
            by_id
                .get(&g.image_id)
                .map(|&p| p.clone())
                .ok_or(MetricError::MissingPrediction(g.image_id))
        })
        .collect::<Result<_, _>>()?;
    Ok((preds, gts))
}

fn phenotype_section(
    preds: &[KeypointSet],
    gts: &[KeypointSet],
    table: &PhenotypeTable,
) -> PhenotypeSection {
    let mut per_phenotype = Vec::with_capacity(table.defs().len());
    let mut mapes = BTreeMap::new();
    for def in table.defs() {
        let mut gt_values = Vec::new();
        let mut pred_values = Vec::new();
        let mut skipped = 0;
        for (p, g) in preds.iter().zip(gts) {
            let (Some(a), Some(b)) = (g.labeled(def.endpoints.0), g.labeled(def.endpoints.1))
            else {
                skipped += 1;
                continue;
            };
            let gt_len = distance(a, b);
            if gt_len <= 0.0 {
                skipped += 1;
                continue;
            }
            gt_values.push(gt_len);
            pred_values.push(def.length(p));
        }
        let m = mape(&gt_values, &pred_values).ok();
        if let Some(m) = m {
            mapes.insert(def.abbrev.clone(), m);
        }
        let fit = ols_fit(&gt_values, &pred_values).ok();
        per_phenotype.push(PhenotypeStats {
            abbrev: def.abbrev.clone(),
            samples: gt_values.len(),
            skipped,
            mape: m,
            pearson: pearson(&gt_values, &pred_values).ok(),
            r2: fit.map(|f| f.r2),
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
        });
    }
    let per_keypoint_mmape: Vec<KeypointMmape> = KeypointIndex::all()
        .map(|k| KeypointMmape {
            index: k,
            mmape: mmape(k, &mapes, table).ok(),
        })
        .collect();
    let defined: Vec<f64> = per_keypoint_mmape.iter().filter_map(|m| m.mmape).collect();
    let mean_mmape =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    PhenotypeSection {
        per_phenotype,
        per_keypoint_mmape,
        mean_mmape,
    }
}

/// Scores predictions against ground truth. Images are matched by id; every
/// ground-truth image needs a prediction, extra predictions are ignored.
pub fn evaluate(
    gt: &Dataset,
    pred: &Dataset,
    table: &PhenotypeTable,
    cfg: &EvalConfig,
    metric: MetricSelection,
) -> Result<MetricReport, MetricError> {
    cfg.check()?;
    let (preds, gts) = align(gt, pred)?;
    let sample_counts = SampleCounts {
        images: gts.len(),
        labeled_keypoints: gts.iter().map(KeypointSet::labeled_count).sum(),
    };

    let oks = if metric.includes(MetricSelection::Oks) {
        let per_image: Vec<ImageOks> = preds
            .par_iter()
            .zip(gts.par_iter())
            .map(|(p, g)| match oks(p, g, cfg) {
                Ok(v) => Ok(ImageOks {
                    image_id: g.image_id,
                    oks: Some(v),
                }),
                Err(MetricError::Undefined(_)) => Ok(ImageOks {
                    image_id: g.image_id,
                    oks: None,
                }),
                Err(e) => Err(e),
            })
            .collect::<Result<_, _>>()?;
        let defined: Vec<f64> = per_image.iter().filter_map(|o| o.oks).collect();
        Some(OksSummary {
            mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            skipped: per_image.len() - defined.len(),
            per_image,
        })
    } else {
        None
    };
    let pck = if metric.includes(MetricSelection::Pck) {
        Some(RateSection::new(pck(&preds, &gts, cfg)?))
    } else {
        None
    };
    let pmp = if metric.includes(MetricSelection::Pmp) {
        Some(RateSection::new(pmp(&preds, &gts, table, cfg)?))
    } else {
        None
    };
    let phenotypes =
        (metric == MetricSelection::All).then(|| phenotype_section(&preds, &gts, table));

    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metric,
        config: cfg.clone(),
        sample_counts,
        oks,
        pck,
        pmp,
        phenotypes,
    })
}

/// Pixel distance between prediction and ground truth for every labeled
/// ground-truth keypoint, images in ground-truth order.
pub fn pixel_deviations(gt: &Dataset, pred: &Dataset) -> Result<Vec<f64>, MetricError> {
    let (preds, gts) = align(gt, pred)?;
    let mut out = Vec::with_capacity(gts.len() * NUM_KEYPOINTS);
    for (p, g) in preds.iter().zip(&gts) {
        for k in KeypointIndex::all() {
            if let Some(gk) = g.labeled(k) {
                out.push(distance(p.get(k).xy(), gk));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FishImageRecord, Role};
    use crate::keypoints::Species;

    fn dataset(offset: f64) -> Dataset {
        let records = (0..4)
            .map(|id| {
                let coords: [f64; 44] = std::array::from_fn(|i| {
                    let base = if i % 2 == 0 {
                        15.0 * (i / 2) as f64
                    } else {
                        40.0 + ((i * 7) % 9) as f64 * 6.0
                    };
                    base + offset * (id as f64 + 1.0) + id as f64
                });
                FishImageRecord {
                    width: 1000,
                    height: 1000,
                    keypoints: KeypointSet::from_coords(id, Species::Other, &coords),
                }
            })
            .collect();
        Dataset::new(Role::Test, records)
    }

    #[test]
    fn perfect_predictions() {
        let gt = dataset(0.0);
        let r = evaluate(
            &gt,
            &gt,
            &PhenotypeTable::standard(),
            &EvalConfig::default(),
            MetricSelection::All,
        )
        .unwrap();
        assert_eq!(r.oks.as_ref().unwrap().mean, Some(1.0));
        assert_eq!(r.pck.as_ref().unwrap().mean, Some(1.0));
        assert_eq!(r.pmp.as_ref().unwrap().mean, Some(1.0));
        let ph = r.phenotypes.unwrap();
        assert_eq!(ph.mean_mmape, Some(0.0));
        assert!(ph
            .per_phenotype
            .iter()
            .all(|s| s.r2 == Some(1.0) || s.r2.is_none()));
    }

    #[test]
    fn selection_limits_sections() {
        let gt = dataset(0.0);
        let pred = dataset(0.5);
        let r = evaluate(
            &gt,
            &pred,
            &PhenotypeTable::standard(),
            &EvalConfig::default(),
            MetricSelection::Pmp,
        )
        .unwrap();
        assert!(r.oks.is_none() && r.pck.is_none() && r.phenotypes.is_none());
        assert_eq!(r.pmp.unwrap().per_keypoint.len(), 22);
        let json = serde_json::to_value(
            evaluate(
                &gt,
                &pred,
                &PhenotypeTable::standard(),
                &EvalConfig::default(),
                MetricSelection::Oks,
            )
            .unwrap(),
        )
        .unwrap();
        assert!(json.get("pmp").is_none());
        assert_eq!(json["schema_version"], 1);
    }

    #[test]
    fn missing_prediction_is_error() {
        let gt = dataset(0.0);
        let mut pred = gt.clone();
        pred.records.pop();
        assert_eq!(
            evaluate(
                &gt,
                &pred,
                &PhenotypeTable::standard(),
                &EvalConfig::default(),
                MetricSelection::All
            )
            .unwrap_err(),
            MetricError::MissingPrediction(3)
        );
    }

    #[test]
    fn deviations_follow_gt_order() {
        let gt = dataset(0.0);
        let mut pred = gt.clone();
        pred.records.reverse();
        pred.records[0].keypoints.points[0].x += 3.0; // image 3
        let d = pixel_deviations(&gt, &pred).unwrap();
        assert_eq!(d.len(), 88);
        assert_eq!(d[66], 3.0);
        assert_eq!(d.iter().filter(|&&v| v != 0.0).count(), 1);
    }
}
