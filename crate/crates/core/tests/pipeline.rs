mod common;

use phenokey::anatomy::{
    acr_loss, box_from_predictions, count_violations, fit_prior, AnatomicalPrior,
};
use phenokey::dataset::{decode_coco, encode_coco, parse_coco, validate, Dataset, Role};
use phenokey::synth::{generate_population, SpeciesTemplate};
use proptest::prelude::*;

#[test]
fn fixture_round_trips_through_coco() {
    let text = std::fs::read_to_string(common::fixture("coco/gt.json")).unwrap();
    let first = decode_coco(&text).unwrap().dataset;
    let encoded = encode_coco(&first).unwrap();
    let second = decode_coco(&encoded).unwrap().dataset;
    assert_eq!(first, second);
    assert_eq!(encode_coco(&second).unwrap(), encoded);
    assert!(validate(&first).is_empty());
}

#[test]
fn serialized_dataset_reads_back_identically() {
    let data = generate_population(&SpeciesTemplate::elongate(), 25, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.json");
    phenokey::dataset::serialize_coco(&data, &path).unwrap();
    let back = parse_coco(&path).unwrap();
    for (a, b) in data.records.iter().zip(&back.records) {
        assert_eq!(
            a.keypoints.coords().map(f64::to_bits),
            b.keypoints.coords().map(f64::to_bits)
        );
        assert_eq!((a.width, a.height), (b.width, b.height));
    }
}

#[test]
fn prior_survives_json_without_creating_violations() {
    let data = generate_population(&SpeciesTemplate::deep_bodied(), 200, 13).unwrap();
    let prior = fit_prior(&data).unwrap();
    let back: AnatomicalPrior =
        serde_json::from_str(&serde_json::to_string(&prior).unwrap()).unwrap();
    assert_eq!(prior, back);
    for r in &data.records {
        let bx = box_from_predictions(&back, &r.keypoints).unwrap();
        assert_eq!(acr_loss(&r.keypoints, &bx), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_fish_never_violate_their_prior(seed in any::<u64>(), n in 1usize..40) {
        let data = generate_population(&SpeciesTemplate::elongate(), n, seed).unwrap();
        prop_assert!(validate(&data).is_empty());
        let prior = fit_prior(&data).unwrap();
        for r in &data.records {
            let bx = box_from_predictions(&prior, &r.keypoints).unwrap();
            prop_assert_eq!(count_violations(&r.keypoints.coords(), &bx), 0);
        }
    }

    #[test]
    fn prior_of_subset_is_contained_in_prior_of_superset(seed in any::<u64>(), k in 1usize..30) {
        let data = generate_population(&SpeciesTemplate::deep_bodied(), 30, seed).unwrap();
        let small = Dataset::new(Role::Train, data.records[..k].to_vec());
        let (a, b) = (fit_prior(&small).unwrap(), fit_prior(&data).unwrap());
        for (s, l) in a.extremes.iter().zip(&b.extremes) {
            prop_assert!(l.x_min <= s.x_min && s.x_max <= l.x_max);
            prop_assert!(l.y_min <= s.y_min && s.y_max <= l.y_max);
        }
    }
}
