//! A toy coordinate regressor trained on MSE + ACR with GradNorm loss balancing.
//!
//! The predictor is affine, `coords = W·features + b`, with `W` of shape
//! `44 × F`. Flattened parameter vectors list `W` row-major followed by `b`.
//! Box constraints are inputs to the loss, never differentiated through.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::{
    acr_gradient_coords, acr_loss_coords, box_for_image, box_from_predictions,
    count_violations_coords, fit_prior, AnatomicalPrior, AnatomyError, BoxConstraint,
};
use crate::dataset::{Dataset, FishImageRecord, Role};
use crate::keypoints::{KeypointIndex, KeypointSet, NUM_COORDS};
use crate::metrics::{mean_rate, pmp, EvalConfig, MetricError};
use crate::morphometry::PhenotypeTable;
use crate::synth::{generate_population, SpeciesTemplate, SynthError};

/// Total loss above which training is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Floor applied to each GradNorm weight before renormalization.
pub const MIN_WEIGHT: f64 = 1e-3;
/// Finite-difference step on parameters used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
const NUM_TASKS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("expected {expected} values, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("sample {sample}: expected {expected} features, got {found}")]
    FeatureMismatch {
        sample: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step} (total loss {loss})")]
    Diverged {
        step: usize,
        loss: f64,
        trace: Box<TrainTrace>,
    },
    #[error(transparent)]
    Anatomy(#[from] AnatomyError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyPredictor {
    features: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyPredictor {
    pub fn zeros(features: usize) -> Self {
        ToyPredictor {
            features,
            weights: vec![0.0; NUM_COORDS * features],
            bias: vec![0.0; NUM_COORDS],
        }
    }

    /// `weights` is row-major `44 × features`.
    pub fn new(features: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, OptimError> {
        if weights.len() != NUM_COORDS * features {
            return Err(OptimError::ShapeMismatch {
                expected: NUM_COORDS * features,
                found: weights.len(),
            });
        }
        if bias.len() != NUM_COORDS {
            return Err(OptimError::ShapeMismatch {
                expected: NUM_COORDS,
                found: bias.len(),
            });
        }
        let p = ToyPredictor {
            features,
            weights,
            bias,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), OptimError> {
        if self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(OptimError::NonFinite("predictor parameters"))
        }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), OptimError> {
        if params.len() != self.num_params() {
            return Err(OptimError::ShapeMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> [f64; NUM_COORDS] {
        debug_assert_eq!(x.len(), self.features);
        std::array::from_fn(|o| {
            let row = &self.weights[o * self.features..(o + 1) * self.features];
            row.iter()
                .zip(x)
                .fold(self.bias[o], |acc, (w, v)| acc + w * v)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub features: Vec<f64>,
    pub target: KeypointSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainBatch {
    samples: Vec<TrainSample>,
    features: usize,
}

impl TrainBatch {
    pub fn new(samples: Vec<TrainSample>) -> Result<Self, OptimError> {
        let first = samples.first().ok_or(OptimError::EmptyBatch)?;
        let features = first.features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != features {
                return Err(OptimError::FeatureMismatch {
                    sample: i,
                    expected: features,
                    found: s.features.len(),
                });
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(OptimError::NonFinite("features"));
            }
        }
        Ok(TrainBatch { samples, features })
    }

    pub fn samples(&self) -> &[TrainSample] {
        &self.samples
    }

    pub fn feature_dim(&self) -> usize {
        self.features
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<KeypointSet> {
        self.samples.iter().map(|s| s.target.clone()).collect()
    }

    pub fn predictions(&self, predictor: &ToyPredictor) -> Vec<KeypointSet> {
        self.samples
            .iter()
            .map(|s| {
                KeypointSet::from_coords(
                    s.target.image_id,
                    s.target.species,
                    &predictor.predict(&s.features),
                )
            })
            .collect()
    }

    fn check_predictor(&self, predictor: &ToyPredictor) -> Result<(), OptimError> {
        if predictor.features != self.features {
            return Err(OptimError::FeatureMismatch {
                sample: 0,
                expected: predictor.features,
                found: self.features,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_mse: f64,
    pub w_acr: f64,
    pub alpha: f64,
    /// `[L_mse(0), L_acr(0)]` once recorded.
    pub initial_losses: Option<[f64; 2]>,
    /// When false the weights never change.
    pub adaptive: bool,
}

impl LossWeights {
    pub fn gradnorm(alpha: f64) -> Self {
        LossWeights {
            w_mse: 1.0,
            w_acr: 1.0,
            alpha,
            initial_losses: None,
            adaptive: true,
        }
    }

    pub fn fixed(w_mse: f64, w_acr: f64) -> Self {
        LossWeights {
            w_mse,
            w_acr,
            alpha: 0.0,
            initial_losses: None,
            adaptive: false,
        }
    }

    /// Stores the step-0 losses. A zero initial loss makes relative training
    /// rates undefined; the weights then stay fixed at `(1, 1)`.
    pub fn record_initial(&mut self, losses: [f64; 2]) {
        if !self.adaptive {
            return;
        }
        if losses.iter().any(|&l| l <= 0.0) {
            warn!(
                "initial losses {losses:?} include zero; GradNorm disabled, weights fixed at (1, 1)"
            );
            self.w_mse = 1.0;
            self.w_acr = 1.0;
            self.adaptive = false;
            return;
        }
        self.initial_losses = Some(losses);
    }
}

/// One GradNorm update of the two task weights.
///
/// `G_i = w_i·‖∇L_i‖` and the target is `mean(G)·r_i^alpha`, where `r_i` is the
/// task's loss ratio `L_i/L_i(0)` relative to the mean ratio. Each weight takes
/// a step of `lr_w` along the gradient of `Σ|G_i − target_i| / mean(G)`, is
/// floored at [`MIN_WEIGHT`], and the pair is rescaled to sum to 2.
pub fn gradnorm_step(
    w: &LossWeights,
    grad_norms: [f64; 2],
    losses: [f64; 2],
    lr_w: f64,
) -> LossWeights {
    let mut next = w.clone();
    if !w.adaptive {
        return next;
    }
    let Some(initial) = w.initial_losses else {
        next.record_initial(losses);
        return next;
    };
    let ratio = [losses[0] / initial[0], losses[1] / initial[1]];
    let mean_ratio = (ratio[0] + ratio[1]) / NUM_TASKS;
    let rel = if mean_ratio > 0.0 {
        [ratio[0] / mean_ratio, ratio[1] / mean_ratio]
    } else {
        [1.0, 1.0]
    };
    let weights = [w.w_mse, w.w_acr];
    let g = [weights[0] * grad_norms[0], weights[1] * grad_norms[1]];
    let g_mean = (g[0] + g[1]) / NUM_TASKS;
    if g_mean <= 0.0 || !g_mean.is_finite() {
        return next;
    }
    let mut updated = [0.0; 2];
    for i in 0..2 {
        let target = g_mean * rel[i].powf(w.alpha);
        let diff = g[i] - target;
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        updated[i] = (weights[i] - lr_w * sign * grad_norms[i] / g_mean).max(MIN_WEIGHT);
    }
    let scale = NUM_TASKS / (updated[0] + updated[1]);
    next.w_mse = updated[0] * scale;
    next.w_acr = updated[1] * scale;
    next
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub acr: f64,
}

/// Loss of one prediction against one target; every coordinate counts.
pub fn combined_loss(
    pred_coords: &[f64],
    gt_coords: &[f64],
    bx: &BoxConstraint,
    w: &LossWeights,
) -> Result<LossParts, OptimError> {
    let pred: &[f64; NUM_COORDS] =
        pred_coords
            .try_into()
            .map_err(|_| OptimError::ShapeMismatch {
                expected: NUM_COORDS,
                found: pred_coords.len(),
            })?;
    if gt_coords.len() != NUM_COORDS {
        return Err(OptimError::ShapeMismatch {
            expected: NUM_COORDS,
            found: gt_coords.len(),
        });
    }
    let mse = pred
        .iter()
        .zip(gt_coords)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / NUM_COORDS as f64;
    let acr = acr_loss_coords(pred, None, bx);
    Ok(LossParts {
        total: w.w_mse * mse + w.w_acr * acr,
        mse,
        acr,
    })
}

/// Which rectangle the prior is placed over during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(clap::ValueEnum)]
pub enum BoxSource {
    /// The ground-truth bounding box; boxes are fixed for the whole run.
    GroundTruth,
    /// The bounding box of the current predictions, recomputed every step.
    /// A prediction with zero extent falls back to the ground-truth box.
    #[default]
    Predicted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Heavy-ball momentum coefficient in `[0, 1)`.
    pub momentum: f64,
    /// Step `t` uses `lr / (1 + lr_decay·t)`.
    pub lr_decay: f64,
    pub acr: bool,
    pub alpha: f64,
    pub lr_w: f64,
    pub box_source: BoxSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 10.0,
            momentum: 0.0,
            lr_decay: 0.0,
            acr: true,
            alpha: 1.5,
            lr_w: 0.025,
            box_source: BoxSource::Predicted,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay must be >= 0, got {}", self.lr_decay));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.lr_w >= 0.0 && self.lr_w.is_finite()) {
            return bad(format!("lr_w must be >= 0, got {}", self.lr_w));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub l_mse: f64,
    pub l_acr: f64,
    pub w_mse: f64,
    pub w_acr: f64,
    pub grad_norm_mse: f64,
    pub grad_norm_acr: f64,
    pub violation_count: usize,
}

/// Record `t` describes the parameters after `t` updates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str =
        "step,l_mse,l_acr,w_mse,w_acr,grad_norm_mse,grad_norm_acr,violation_count";

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.step,
                r.l_mse,
                r.l_acr,
                r.w_mse,
                r.w_acr,
                r.grad_norm_mse,
                r.grad_norm_acr,
                r.violation_count
            );
        }
        out
    }
}

/// Losses and per-task parameter gradients over a batch.
///
/// `L_mse` is the mean squared error over labeled target coordinates;
/// `L_acr` is the mean over images of the per-image hinge sum.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEval {
    pub mse: f64,
    pub acr: f64,
    pub grad_mse: Vec<f64>,
    pub grad_acr: Vec<f64>,
    pub violations: usize,
}

impl BatchEval {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.w_mse * self.mse + w.w_acr * self.acr
    }

    pub fn combined_grad(&self, w: &LossWeights) -> Vec<f64> {
        self.grad_mse
            .iter()
            .zip(&self.grad_acr)
            .map(|(m, a)| w.w_mse * m + w.w_acr * a)
            .collect()
    }

    /// Norms of the two task gradients restricted to the weight matrix.
    pub fn weight_grad_norms(&self, features: usize) -> [f64; 2] {
        let n = NUM_COORDS * features;
        let norm = |g: &[f64]| g[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        [norm(&self.grad_mse), norm(&self.grad_acr)]
    }
}

struct SampleTerms {
    sq: f64,
    labeled: usize,
    acr: f64,
    violations: usize,
    d_mse: [f64; NUM_COORDS],
    d_acr: [f64; NUM_COORDS],
}

fn sample_terms(
    predictor: &ToyPredictor,
    sample: &TrainSample,
    bx: &BoxConstraint,
    with_grad: bool,
) -> SampleTerms {
    let pred = predictor.predict(&sample.features);
    let gt = sample.target.coords();
    let mut sq = 0.0;
    let mut labeled = 0;
    let mut d_mse = [0.0; NUM_COORDS];
    for (c, d) in d_mse.iter_mut().enumerate() {
        if sample.target.points[c / 2].is_labeled() {
            let r = pred[c] - gt[c];
            sq += r * r;
            labeled += 1;
            *d = 2.0 * r;
        }
    }
    let mask = Some(&sample.target);
    SampleTerms {
        sq,
        labeled,
        acr: acr_loss_coords(&pred, mask, bx),
        violations: count_violations_coords(&pred, mask, bx),
        d_mse,
        d_acr: if with_grad {
            acr_gradient_coords(&pred, mask, bx)
        } else {
            [0.0; NUM_COORDS]
        },
    }
}

fn accumulate(grad: &mut [f64], d: &[f64; NUM_COORDS], x: &[f64], scale: f64) {
    let f = x.len();
    let (gw, gb) = grad.split_at_mut(NUM_COORDS * f);
    for (o, &dv) in d.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        let s = dv * scale;
        for (g, v) in gw[o * f..(o + 1) * f].iter_mut().zip(x) {
            *g += s * v;
        }
        gb[o] += s;
    }
}

/// Losses and gradients with the given per-sample boxes held fixed.
pub fn evaluate_batch(
    predictor: &ToyPredictor,
    batch: &TrainBatch,
    boxes: &[BoxConstraint],
) -> Result<BatchEval, OptimError> {
    batch.check_predictor(predictor)?;
    if boxes.len() != batch.len() {
        return Err(OptimError::ShapeMismatch {
            expected: batch.len(),
            found: boxes.len(),
        });
    }
    let terms: Vec<SampleTerms> = batch
        .samples
        .par_iter()
        .zip(boxes.par_iter())
        .map(|(s, bx)| sample_terms(predictor, s, bx, true))
        .collect();
    let labeled: usize = terms.iter().map(|t| t.labeled).sum();
    let inv_n = if labeled > 0 {
        1.0 / labeled as f64
    } else {
        0.0
    };
    let inv_b = 1.0 / batch.len() as f64;
    let mut eval = BatchEval {
        mse: 0.0,
        acr: 0.0,
        grad_mse: vec![0.0; predictor.num_params()],
        grad_acr: vec![0.0; predictor.num_params()],
        violations: 0,
    };
    for (t, s) in terms.iter().zip(&batch.samples) {
        eval.mse += t.sq;
        eval.acr += t.acr;
        eval.violations += t.violations;
        accumulate(&mut eval.grad_mse, &t.d_mse, &s.features, inv_n);
        accumulate(&mut eval.grad_acr, &t.d_acr, &s.features, inv_b);
    }
    eval.mse *= inv_n;
    eval.acr *= inv_b;
    Ok(eval)
}

/// `(L_mse, L_acr)` only, sequentially; used for finite differences.
fn batch_losses(predictor: &ToyPredictor, batch: &TrainBatch, boxes: &[BoxConstraint]) -> [f64; 2] {
    let (mut sq, mut n, mut acr) = (0.0, 0usize, 0.0);
    for (s, bx) in batch.samples.iter().zip(boxes) {
        let t = sample_terms(predictor, s, bx, false);
        sq += t.sq;
        n += t.labeled;
        acr += t.acr;
    }
    let mse = if n > 0 { sq / n as f64 } else { 0.0 };
    [mse, acr / batch.len() as f64]
}

/// Boxes over each target's ground-truth bounding box.
pub fn ground_truth_boxes(
    batch: &TrainBatch,
    prior: &AnatomicalPrior,
) -> Result<Vec<BoxConstraint>, OptimError> {
    batch
        .samples
        .iter()
        .map(|s| {
            let bbox = s
                .target
                .bounding_box()
                .ok_or(AnatomyError::TooFewKeypoints {
                    image_id: s.target.image_id,
                    found: s.target.labeled_count(),
                })?;
            Ok(box_for_image(prior, &bbox)?)
        })
        .collect()
}

fn predicted_boxes(
    predictor: &ToyPredictor,
    batch: &TrainBatch,
    prior: &AnatomicalPrior,
    fallback: &[BoxConstraint],
) -> Vec<BoxConstraint> {
    batch
        .predictions(predictor)
        .iter()
        .zip(fallback)
        .map(|(p, gt_box)| box_from_predictions(prior, p).unwrap_or_else(|_| gt_box.clone()))
        .collect()
}

/// Gradient descent on the weighted loss, with GradNorm updates after every
/// parameter step when ACR is on. With ACR off the weights are fixed at
/// `(1, 0)`; the ACR loss and violations are still traced.
pub fn train(
    predictor: &ToyPredictor,
    batch: &TrainBatch,
    prior: &AnatomicalPrior,
    cfg: &TrainConfig,
) -> Result<(ToyPredictor, TrainTrace), OptimError> {
    cfg.check()?;
    prior.check()?;
    predictor.check()?;
    batch.check_predictor(predictor)?;
    let gt_boxes = ground_truth_boxes(batch, prior)?;
    let mut w = if cfg.acr {
        LossWeights::gradnorm(cfg.alpha)
    } else {
        LossWeights::fixed(1.0, 0.0)
    };
    let mut model = predictor.clone();
    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let mut trace = TrainTrace::default();
    for step in 0..=cfg.steps {
        let boxes = match cfg.box_source {
            BoxSource::GroundTruth => gt_boxes.clone(),
            BoxSource::Predicted => predicted_boxes(&model, batch, prior, &gt_boxes),
        };
        let eval = evaluate_batch(&model, batch, &boxes)?;
        if step == 0 {
            w.record_initial([eval.mse, eval.acr]);
        }
        let norms = eval.weight_grad_norms(model.features);
        trace.records.push(TraceRecord {
            step,
            l_mse: eval.mse,
            l_acr: eval.acr,
            w_mse: w.w_mse,
            w_acr: w.w_acr,
            grad_norm_mse: norms[0],
            grad_norm_acr: norms[1],
            violation_count: eval.violations,
        });
        let total = eval.total(&w);
        if !total.is_finite() || total > DIVERGENCE_LIMIT {
            return Err(OptimError::Diverged {
                step,
                loss: total,
                trace: Box::new(trace),
            });
        }
        if step == cfg.steps {
            break;
        }
        let lr = cfg.lr / (1.0 + cfg.lr_decay * step as f64);
        for ((p, v), g) in params
            .iter_mut()
            .zip(&mut velocity)
            .zip(eval.combined_grad(&w))
        {
            *v = cfg.momentum * *v + g;
            *p -= lr * *v;
        }
        model.set_params(&params)?;
        w = gradnorm_step(&w, norms, [eval.mse, eval.acr], cfg.lr_w);
    }
    Ok((model, trace))
}

/// Norm-wise relative errors `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and
/// central-difference parameter gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub mse: f64,
    pub acr: f64,
    pub combined: f64,
    /// Smallest pixel distance from a labeled prediction to a box edge.
    pub min_boundary_px: f64,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.mse.max(self.acr).max(self.combined)
    }
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Smallest distance from any labeled prediction coordinate to its box edges.
pub fn min_boundary_distance(
    predictor: &ToyPredictor,
    batch: &TrainBatch,
    boxes: &[BoxConstraint],
) -> f64 {
    let mut best = f64::INFINITY;
    for (s, bx) in batch.samples.iter().zip(boxes) {
        let pred = predictor.predict(&s.features);
        for k in KeypointIndex::all() {
            if !s.target.get(k).is_labeled() {
                continue;
            }
            for axis in 0..2 {
                best = best.min(bx.boundary_distance(k, axis, pred[2 * k.slot() + axis]));
            }
        }
    }
    best
}

/// Compares analytic gradients against central differences with step
/// [`FD_STEP`], using ground-truth boxes.
pub fn grad_check(
    predictor: &ToyPredictor,
    batch: &TrainBatch,
    prior: &AnatomicalPrior,
    w: &LossWeights,
) -> Result<GradCheck, OptimError> {
    let boxes = ground_truth_boxes(batch, prior)?;
    grad_check_with_boxes(predictor, batch, &boxes, w)
}

pub fn grad_check_with_boxes(
    predictor: &ToyPredictor,
    batch: &TrainBatch,
    boxes: &[BoxConstraint],
    w: &LossWeights,
) -> Result<GradCheck, OptimError> {
    let eval = evaluate_batch(predictor, batch, boxes)?;
    let analytic_total = eval.combined_grad(w);
    let base = predictor.params();
    let mut probe = predictor.clone();
    let mut params = base.clone();
    let n = base.len();
    let (mut fd_mse, mut fd_acr, mut fd_total) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        params[i] = base[i] + FD_STEP;
        probe.set_params(&params)?;
        let plus = batch_losses(&probe, batch, boxes);
        params[i] = base[i] - FD_STEP;
        probe.set_params(&params)?;
        let minus = batch_losses(&probe, batch, boxes);
        params[i] = base[i];
        fd_mse[i] = (plus[0] - minus[0]) / (2.0 * FD_STEP);
        fd_acr[i] = (plus[1] - minus[1]) / (2.0 * FD_STEP);
        let tp = w.w_mse * plus[0] + w.w_acr * plus[1];
        let tm = w.w_mse * minus[0] + w.w_acr * minus[1];
        fd_total[i] = (tp - tm) / (2.0 * FD_STEP);
    }
    Ok(GradCheck {
        mse: relative_error(&eval.grad_mse, &fd_mse),
        acr: relative_error(&eval.grad_acr, &fd_acr),
        combined: relative_error(&analytic_total, &fd_total),
        min_boundary_px: min_boundary_distance(predictor, batch, boxes),
    })
}

/// Pixel scale dividing the bounding-box features of [`toy_scenario`].
pub const FEATURE_SCALE: f64 = 1000.0;
/// Fish used to fit the scenario prior, disjoint from the training batch.
pub const REFERENCE_POPULATION: usize = 500;

/// Training batch, anatomical prior and ground truth of the toy experiment.
#[derive(Clone, Debug)]
pub struct ToyScenario {
    pub batch: TrainBatch,
    pub prior: AnatomicalPrior,
    pub ground_truth: Dataset,
}

/// Synthetic deep-bodied fish whose features are the ground-truth bounding
/// box `[x_min, y_min, width, height] / FEATURE_SCALE`.
///
/// The first [`REFERENCE_POPULATION`] fish of the seeded population fit the
/// prior; the next `batch_size` fish form the batch.
pub fn toy_scenario(seed: u64, batch_size: usize) -> Result<ToyScenario, OptimError> {
    if batch_size == 0 {
        return Err(OptimError::EmptyBatch);
    }
    let template = SpeciesTemplate::deep_bodied();
    let population = generate_population(&template, REFERENCE_POPULATION + batch_size, seed)?;
    let mut records = population.records;
    let train: Vec<FishImageRecord> = records.split_off(REFERENCE_POPULATION);
    let prior = fit_prior(&Dataset::new(Role::Train, records))?;
    let samples = train
        .iter()
        .map(|r| {
            let b = r
                .keypoints
                .bounding_box()
                .expect("generated fish are fully labeled");
            TrainSample {
                features: vec![
                    b.x_min / FEATURE_SCALE,
                    b.y_min / FEATURE_SCALE,
                    b.width() / FEATURE_SCALE,
                    b.height() / FEATURE_SCALE,
                ],
                target: r.keypoints.clone(),
            }
        })
        .collect();
    Ok(ToyScenario {
        batch: TrainBatch::new(samples)?,
        prior,
        ground_truth: Dataset::new(Role::Train, train),
    })
}

/// Mean PMP of a predictor's outputs on the batch targets.
pub fn batch_pmp(
    predictor: &ToyPredictor,
    batch: &TrainBatch,
    threshold: f64,
) -> Result<Option<f64>, OptimError> {
    let cfg = EvalConfig {
        pmp_threshold: threshold,
        ..EvalConfig::default()
    };
    let rates = pmp(
        &batch.predictions(predictor),
        &batch.targets(),
        &PhenotypeTable::standard(),
        &cfg,
    )?;
    Ok(mean_rate(&rates))
}
