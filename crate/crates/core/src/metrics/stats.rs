//! Phenotype-level statistics: MAPE, mMAPE, Pearson correlation, OLS fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::keypoints::KeypointIndex;
use crate::morphometry::PhenotypeTable;

fn check_lengths(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Mean absolute percentage error as a fraction: mean of `|pred - gt| / gt`.
pub fn mape(gt_values: &[f64], pred_values: &[f64]) -> Result<f64, MetricError> {
    check_lengths(gt_values.len(), pred_values.len())?;
    if gt_values.is_empty() {
        return Err(MetricError::Undefined("MAPE of an empty sample".into()));
    }
    let mut sum = 0.0;
    for (i, (&g, &p)) in gt_values.iter().zip(pred_values).enumerate() {
        if g <= 0.0 || !g.is_finite() {
            return Err(MetricError::NonPositiveGroundTruth {
                sample: i,
                value: g,
            });
        }
        sum += (p - g).abs() / g;
    }
    Ok(sum / gt_values.len() as f64)
}

/// Unweighted mean of the MAPEs of every phenotype that uses `keypoint`.
pub fn mmape(
    keypoint: KeypointIndex,
    per_phenotype_mape: &BTreeMap<String, f64>,
    table: &PhenotypeTable,
) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for def in table.related(keypoint) {
        let m = per_phenotype_mape
            .get(&def.abbrev)
            .ok_or_else(|| MetricError::MissingPhenotype(def.abbrev.clone()))?;
        sum += m;
        n += 1;
    }
    Ok(sum / n as f64)
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Result<Moments, MetricError> {
    check_lengths(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(MetricError::Undefined(format!(
            "need at least 2 samples, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    Ok(Moments {
        mean_x,
        mean_y,
        sxx,
        syy,
        sxy,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let m = moments(x, y)?;
    if m.sxx == 0.0 || m.syy == 0.0 {
        return Err(MetricError::Undefined(
            "correlation with a constant series".into(),
        ));
    }
    Ok((m.sxy / (m.sxx * m.syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line `pred ≈ slope * gt + intercept` with its coefficient of determination.
///
/// When `pred` is constant the line fits exactly with slope 0 and there is no
/// variance to explain; `r2` is reported as 0.
pub fn ols_fit(gt: &[f64], pred: &[f64]) -> Result<OlsFit, MetricError> {
    let m = moments(gt, pred)?;
    if m.sxx == 0.0 {
        return Err(MetricError::Undefined(
            "regression on a constant ground-truth series".into(),
        ));
    }
    let slope = m.sxy / m.sxx;
    let intercept = m.mean_y - slope * m.mean_x;
    let ss_res: f64 = gt
        .iter()
        .zip(pred)
        .map(|(&g, &p)| {
            let r = p - (slope * g + intercept);
            r * r
        })
        .sum();
    let r2 = if m.syy == 0.0 {
        0.0
    } else {
        (1.0 - ss_res / m.syy).min(1.0)
    };
    Ok(OlsFit {
        slope,
        intercept,
        r2,
    })
}
