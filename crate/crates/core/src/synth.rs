//! Synthetic fish populations and controlled prediction noise.
//!
//! Two body-plan templates ship with the crate (`deep_bodied`, `elongate`,
//! see `fixtures/templates/`). Each fish is drawn independently from a
//! random stream derived from `(seed, index)`, so output does not depend on
//! how the work is scheduled.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, FishImageRecord, Role};
use crate::keypoints::{Keypoint, KeypointIndex, KeypointSet, Species, NUM_KEYPOINTS};
use crate::morphometry::{shortest_related_phenotype, PhenotypeTable};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("unknown template {0:?} (built-in: deep_bodied, elongate)")]
    UnknownTemplate(String),
    #[error("template file {path}: {message}")]
    TemplateFile { path: String, message: String },
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
}

/// Sampling truncation in standard deviations.
const TRUNCATION: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTemplate {
    pub name: String,
    #[serde(default)]
    pub species: Species,
    /// Body height over body length.
    pub aspect: f64,
    /// Range of body length in pixels.
    pub body_size_range: (f64, f64),
    /// Mean normalized `[x, y]` per keypoint; x runs snout to tail, y top to bottom.
    pub mean_layout: [[f64; 2]; NUM_KEYPOINTS],
    /// Per-keypoint standard deviation in normalized units.
    pub spread: [f64; NUM_KEYPOINTS],
}

impl SpeciesTemplate {
    pub fn deep_bodied() -> Self {
        serde_json::from_str(include_str!("../fixtures/templates/deep_bodied.json"))
            .expect("bundled template parses")
    }

    pub fn elongate() -> Self {
        serde_json::from_str(include_str!("../fixtures/templates/elongate.json"))
            .expect("bundled template parses")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.replace('-', "_").as_str() {
            "deep_bodied" => Some(Self::deep_bodied()),
            "elongate" => Some(Self::elongate()),
            _ => None,
        }
    }

    /// A built-in name, or else a path to a template JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self, SynthError> {
        if let Some(t) = Self::builtin(name_or_path) {
            return Ok(t);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(SynthError::UnknownTemplate(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::TemplateFile {
            path: name_or_path.to_string(),
            message: e.to_string(),
        })?;
        let t: SpeciesTemplate =
            serde_json::from_str(&text).map_err(|e| SynthError::TemplateFile {
                path: name_or_path.to_string(),
                message: e.to_string(),
            })?;
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let (lo, hi) = self.body_size_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SynthError::InvalidTemplate(format!(
                "body_size_range ({lo}, {hi}) must satisfy 0 < min <= max"
            )));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return Err(SynthError::InvalidTemplate(format!(
                "aspect must be positive, got {}",
                self.aspect
            )));
        }
        for (slot, (mean, &s)) in self.mean_layout.iter().zip(&self.spread).enumerate() {
            let k = KeypointIndex::from_slot(slot);
            if !(s >= 0.0) {
                return Err(SynthError::InvalidTemplate(format!(
                    "{k}: negative spread {s}"
                )));
            }
            for &m in mean {
                if m - TRUNCATION * s < 0.0 || m + TRUNCATION * s > 1.0 {
                    return Err(SynthError::InvalidTemplate(format!(
                        "{k}: mean {m} ± 3·{s} leaves [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Standard normal sample restricted to `[-3, 3]` by rejection.
fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn generate_fish(template: &SpeciesTemplate, seed: u64, index: usize) -> FishImageRecord {
    let mut rng = stream_rng(seed, index as u64);
    let (lo, hi) = template.body_size_range;
    let length = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let height = length * template.aspect;
    let offset_x = length * rng.random_range(0.05..0.25);
    let offset_y = height * rng.random_range(0.10..0.50);
    let points = std::array::from_fn(|slot| {
        let [mx, my] = template.mean_layout[slot];
        let s = template.spread[slot];
        let nx = mx + s * truncated_normal(&mut rng);
        let ny = my + s * truncated_normal(&mut rng);
        Keypoint::visible(offset_x + nx * length, offset_y + ny * height)
    });
    FishImageRecord {
        width: (1.3 * length).ceil() as u32,
        height: (1.6 * height).ceil() as u32,
        keypoints: KeypointSet::new(index as u64 + 1, template.species, points),
    }
}

/// `n` fish with image ids `1..=n`, all keypoints visible.
pub fn generate_population(
    template: &SpeciesTemplate,
    n: usize,
    seed: u64,
) -> Result<Dataset, SynthError> {
    template.check()?;
    if n == 0 {
        return Err(SynthError::EmptyPopulation);
    }
    let records = (0..n)
        .into_par_iter()
        .map(|i| generate_fish(template, seed, i))
        .collect();
    Ok(Dataset::new(Role::Train, records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Independent uniform offsets in `[-magnitude, magnitude]` pixels per axis.
    UniformPx,
    /// Truncated-normal offsets whose root-mean-square radius, before
    /// truncation, is `magnitude` times the keypoint's shortest related
    /// ground-truth phenotype.
    ProportionalToShortestPhenotype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationModel {
    pub mode: PerturbationMode,
    pub magnitude: f64,
    pub seed: u64,
    /// Per-keypoint multiplier on the magnitude.
    #[serde(default = "unit_gains")]
    pub keypoint_gain: [f64; NUM_KEYPOINTS],
}

fn unit_gains() -> [f64; NUM_KEYPOINTS] {
    [1.0; NUM_KEYPOINTS]
}

impl PerturbationModel {
    pub fn new(mode: PerturbationMode, magnitude: f64, seed: u64) -> Self {
        PerturbationModel {
            mode,
            magnitude,
            seed,
            keypoint_gain: unit_gains(),
        }
    }

    pub fn with_gains(mut self, keypoint_gain: [f64; NUM_KEYPOINTS]) -> Self {
        self.keypoint_gain = keypoint_gain;
        self
    }

    fn check(&self) -> Result<(), SynthError> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(SynthError::InvalidPerturbation(format!(
                "magnitude must be >= 0, got {}",
                self.magnitude
            )));
        }
        if self
            .keypoint_gain
            .iter()
            .any(|g| !(*g >= 0.0 && g.is_finite()))
        {
            return Err(SynthError::InvalidPerturbation(
                "keypoint gains must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Predictions made by adding noise to each labeled ground-truth keypoint.
///
/// Predictions are clamped to the image rectangle so that the output is a
/// valid dataset; unlabeled keypoints are copied unchanged.
pub fn perturb(gt: &Dataset, model: &PerturbationModel) -> Result<Dataset, SynthError> {
    model.check()?;
    let table = PhenotypeTable::standard();
    let records = gt
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = stream_rng(model.seed, i as u64);
            let mut out = r.clone();
            for k in KeypointIndex::all() {
                let g = r.keypoints.get(k);
                if !g.is_labeled() {
                    continue;
                }
                let m = model.magnitude * model.keypoint_gain[k.slot()];
                let (dx, dy) = match model.mode {
                    PerturbationMode::UniformPx => {
                        if m > 0.0 {
                            (rng.random_range(-m..=m), rng.random_range(-m..=m))
                        } else {
                            (0.0, 0.0)
                        }
                    }
                    PerturbationMode::ProportionalToShortestPhenotype => {
                        let pheno = shortest_related_phenotype(k, &r.keypoints, &table)
                            .map(|p| p.value)
                            .unwrap_or(0.0);
                        let sigma = m * pheno / std::f64::consts::SQRT_2;
                        let zx = truncated_normal(&mut rng);
                        let zy = truncated_normal(&mut rng);
                        (sigma * zx, sigma * zy)
                    }
                };
                let p = out.keypoints.get_mut(k);
                p.x = (g.x + dx).clamp(0.0, r.width as f64);
                p.y = (g.y + dy).clamp(0.0, r.height as f64);
            }
            out
        })
        .collect();
    Ok(Dataset::new(Role::Test, records))
}
