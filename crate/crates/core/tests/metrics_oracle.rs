mod common;

use phenokey::dataset::Dataset;
use phenokey::metrics::{evaluate, EvalConfig, MetricSelection};
use phenokey::morphometry::PhenotypeTable;
use phenokey::synth::{
    generate_population, perturb, PerturbationMode, PerturbationModel, SpeciesTemplate,
};
use phenokey::{Keypoint, KeypointIndex};
use statrs::function::erf::erf;

fn population(n: usize, seed: u64) -> Dataset {
    generate_population(&SpeciesTemplate::deep_bodied(), n, seed).unwrap()
}

/// Hides a few keypoints so that skipping paths are exercised.
fn with_gaps(mut d: Dataset) -> Dataset {
    for (i, r) in d.records.iter_mut().enumerate() {
        if i % 7 == 3 {
            *r.keypoints.get_mut(KeypointIndex::new(12).unwrap()) = Keypoint::hidden();
        }
        if i % 11 == 5 {
            *r.keypoints.get_mut(KeypointIndex::new(20).unwrap()) = Keypoint::hidden();
        }
    }
    d
}

fn assert_rates(lib: &[Option<f64>], oracle: &[Option<f64>]) {
    assert_eq!(lib.len(), 22);
    for (i, (a, b)) in lib.iter().zip(oracle).enumerate() {
        match (a, b) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "K-{}: {a} vs {b}", i + 1),
            (None, None) => {}
            _ => panic!("K-{}: {a:?} vs {b:?}", i + 1),
        }
    }
}

#[test]
fn library_metrics_match_brute_force() {
    let gt = with_gaps(population(300, 21));
    let table = PhenotypeTable::standard();
    let cfg = EvalConfig::default();
    for (mode, m) in [
        (PerturbationMode::UniformPx, 6.0),
        (PerturbationMode::ProportionalToShortestPhenotype, 0.12),
    ] {
        let pred = perturb(&gt, &PerturbationModel::new(mode, m, 5)).unwrap();
        let report = evaluate(&gt, &pred, &table, &cfg, MetricSelection::All).unwrap();
        let gts: Vec<_> = gt.keypoint_sets().cloned().collect();
        let preds: Vec<_> = pred.keypoint_sets().cloned().collect();

        let oks = report.oks.unwrap();
        for ((img, p), g) in oks.per_image.iter().zip(&preds).zip(&gts) {
            let expected = common::oks(p, g).unwrap();
            assert!((img.oks.unwrap() - expected).abs() <= 1e-12);
        }
        let rates = |s: phenokey::metrics::RateSection| -> Vec<Option<f64>> {
            s.per_keypoint.iter().map(|r| r.rate).collect()
        };
        assert_rates(&rates(report.pck.unwrap()), &common::pck(&preds, &gts, 0.1));
        assert_rates(&rates(report.pmp.unwrap()), &common::pmp(&preds, &gts, 0.1));
    }
}

#[test]
fn phenotype_mape_matches_brute_force() {
    let gt = population(80, 2);
    let pred = perturb(
        &gt,
        &PerturbationModel::new(PerturbationMode::UniformPx, 4.0, 8),
    )
    .unwrap();
    let report = evaluate(
        &gt,
        &pred,
        &PhenotypeTable::standard(),
        &EvalConfig::default(),
        MetricSelection::All,
    )
    .unwrap();
    let section = report.phenotypes.unwrap();
    for (stats, &(abbrev, _, _)) in section.per_phenotype.iter().zip(&common::PHENOTYPES) {
        assert_eq!(stats.abbrev, abbrev);
        let mut sum = 0.0;
        let mut n = 0;
        for (g, p) in gt.keypoint_sets().zip(pred.keypoint_sets()) {
            let gv = common::measurements(g)
                .into_iter()
                .find(|m| m.0 == abbrev)
                .unwrap()
                .1;
            let pv = common::measurements(p)
                .into_iter()
                .find(|m| m.0 == abbrev)
                .unwrap()
                .1;
            sum += (pv - gv).abs() / gv;
            n += 1;
        }
        assert!(
            (stats.mape.unwrap() - sum / n as f64).abs() < 1e-12,
            "{abbrev}"
        );
    }
}

/// Each axis of the proportional noise is `σ·z` with `σ = m·L/√2`, `z`
/// standard normal truncated to [-3, 3]. A hit needs `|z| < r√2/m`; for
/// `m = 0.05`, `r = 0.1` that radius is 2√2 < 3, so the disc lies inside
/// the truncation square and
/// `P(hit) = (1 − exp(−R²/2)) / (erf(3/√2))²`.
#[test]
fn proportional_noise_pmp_matches_truncated_normal() {
    let (m, r) = (0.05, 0.1);
    let radius: f64 = r * 2f64.sqrt() / m;
    let expected = (1.0 - (-radius * radius / 2.0).exp()) / erf(3.0 / 2f64.sqrt()).powi(2);

    let gt = population(1000, 77);
    let model = PerturbationModel::new(PerturbationMode::ProportionalToShortestPhenotype, m, 78);
    let pred = perturb(&gt, &model).unwrap();
    let cfg = EvalConfig {
        pmp_threshold: r,
        ..EvalConfig::default()
    };
    let report = evaluate(
        &gt,
        &pred,
        &PhenotypeTable::standard(),
        &cfg,
        MetricSelection::Pmp,
    )
    .unwrap();
    let pmp = report.pmp.unwrap();
    let hits: usize = pmp.per_keypoint.iter().map(|k| k.hits).sum();
    let n: usize = pmp.per_keypoint.iter().map(|k| k.evaluated).sum();
    let observed = hits as f64 / n as f64;
    let se = (expected * (1.0 - expected) / n as f64).sqrt();
    assert!(
        (observed - expected).abs() < 4.0 * se,
        "observed {observed}, expected {expected} ± {se}"
    );
    assert!(expected > 0.98);
}

#[test]
fn uniform_noise_pck_is_monotone_in_magnitude() {
    let gt = population(200, 4);
    let cfg = EvalConfig::default();
    let mut last = f64::INFINITY;
    for m in [0.0, 5.0, 20.0, 60.0] {
        let pred = perturb(
            &gt,
            &PerturbationModel::new(PerturbationMode::UniformPx, m, 1),
        )
        .unwrap();
        let report = evaluate(
            &gt,
            &pred,
            &PhenotypeTable::standard(),
            &cfg,
            MetricSelection::Pck,
        )
        .unwrap();
        let mean = report.pck.unwrap().mean.unwrap();
        assert!(mean <= last);
        last = mean;
    }
}
