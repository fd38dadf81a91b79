mod common;

use common::{fixture, run};
use phenokey::dataset::parse_coco;
use serde_json::Value;
use std::path::Path;

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&[], None).0, 2);
    assert_eq!(run(&["measure", "--bogus"], None).0, 2);
    assert_eq!(run(&["frobnicate"], None).0, 2);
    let gt = fixture("coco/gt.json");
    assert_eq!(
        run(
            &[
                "evaluate",
                "--gt",
                path(&gt),
                "--pred",
                path(&gt),
                "--metric",
                "nope"
            ],
            None
        )
        .0,
        2
    );
    assert_eq!(run(&["measure", "--input", path(&gt)], Some("zero")).0, 2);
    assert_eq!(run(&["--help"], None).0, 0);
}

#[test]
fn missing_input_is_a_failure() {
    let (code, _, err) = run(&["measure", "--input", "/nonexistent/gt.json"], None);
    assert_eq!(code, 1);
    assert!(!err.is_empty());
}

#[test]
fn validate_lists_every_defect() {
    let (code, out, _) = run(&["validate", path(&fixture("coco/defects.json"))], None);
    assert_eq!(code, 1);
    let lines: Vec<&str> = out.lines().filter(|l| l.starts_with("image ")).collect();
    assert_eq!(
        lines,
        [
            "image 3: duplicate_image_id",
            "image 1: triplet_count",
            "image 2 K-3: negative_coordinate"
        ]
    );
    let (code, out, _) = run(&["validate", path(&fixture("coco/gt.json"))], None);
    assert_eq!(code, 0);
    assert!(out.contains("6 images"), "{out}");
}

#[test]
fn measure_writes_every_phenotype_for_every_fish() {
    let gt = fixture("coco/gt.json");
    let (code, out, _) = run(&["measure", "--input", path(&gt)], None);
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("image_id,abbrev,value_px,status"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6 * 23);
    let data = parse_coco(&gt).unwrap();
    for (chunk, rec) in rows.chunks(23).zip(&data.records) {
        let oracle = common::measurements(&rec.keypoints);
        for (row, &(abbrev, _, _)) in chunk.iter().zip(&common::PHENOTYPES) {
            assert_eq!(row[0], rec.image_id().to_string());
            assert_eq!(row[1], abbrev);
            match oracle.iter().find(|m| m.0 == abbrev) {
                Some(&(_, v)) => {
                    assert_eq!(row[3], "ok");
                    assert!((row[2].parse::<f64>().unwrap() - v).abs() < 1e-9);
                }
                None => assert_eq!((row[2], row[3]), ("", "missing")),
            }
        }
    }
}

#[test]
fn evaluate_pmp_matches_oracle_and_golden() {
    let (gt, pred) = (fixture("coco/gt.json"), fixture("coco/pred.json"));
    let (code, out, _) = run(
        &[
            "evaluate",
            "--gt",
            path(&gt),
            "--pred",
            path(&pred),
            "--metric",
            "pmp",
        ],
        None,
    );
    assert_eq!(code, 0);
    let golden = std::fs::read_to_string(fixture("golden/evaluate_pmp.json")).unwrap();
    assert_eq!(out, golden);

    let report: Value = serde_json::from_str(&out).unwrap();
    let entries = report["pmp"]["per_keypoint"].as_array().unwrap();
    assert_eq!(entries.len(), 22);
    let gts: Vec<_> = parse_coco(&gt).unwrap().keypoint_sets().cloned().collect();
    let preds: Vec<_> = parse_coco(&pred)
        .unwrap()
        .keypoint_sets()
        .cloned()
        .collect();
    for (e, o) in entries.iter().zip(common::pmp(&preds, &gts, 0.1)) {
        assert_eq!(e["rate"].as_f64(), o);
    }
    assert!(report.get("pck").is_none_or(Value::is_null));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"eval": {"pmp_threshold": 0.3}}"#).unwrap();
    let (gt, pred) = (fixture("coco/gt.json"), fixture("coco/pred.json"));
    let base = [
        "evaluate",
        "--gt",
        path(&gt),
        "--pred",
        path(&pred),
        "--metric",
        "pmp",
    ];
    let threshold = |extra: &[&str]| {
        let mut args = vec!["--config", path(&cfg)];
        args.extend(base);
        args.extend(extra);
        let (code, out, _) = run(&args, None);
        assert_eq!(code, 0);
        serde_json::from_str::<Value>(&out).unwrap()["config"]["pmp_threshold"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(threshold(&[]), 0.3);
    assert_eq!(threshold(&["--pmp-threshold", "0.05"]), 0.05);

    std::fs::write(&cfg, r#"{"eval": {"pmp_treshold": 0.3}}"#).unwrap();
    let mut args = vec!["--config", path(&cfg)];
    args.extend(base);
    assert_eq!(run(&args, None).0, 2);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let (gt, pred) = (fixture("coco/gt.json"), fixture("coco/pred.json"));
    let eval = ["evaluate", "--gt", path(&gt), "--pred", path(&pred)];
    let train = [
        "train-toy",
        "--seed",
        "2",
        "--batch-size",
        "16",
        "--steps",
        "40",
    ];
    for args in [&eval[..], &train[..]] {
        let (c1, a, _) = run(args, Some("1"));
        let (c4, b, _) = run(args, Some("4"));
        assert_eq!((c1, c4), (0, 0));
        assert_eq!(a, b, "{args:?}");
    }
}

#[test]
fn synth_then_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt.json"), dir.path().join("pred.json"));
    let (code, _, err) = run(
        &[
            "synth",
            "--template",
            "elongate",
            "--n",
            "12",
            "--seed",
            "4",
            "--out",
            path(&gt),
            "--perturb",
            "uniform-px",
            "--magnitude",
            "3",
            "--pred-out",
            path(&pred),
        ],
        None,
    );
    assert_eq!(code, 0, "{err}");
    assert_eq!(run(&["validate", path(&gt)], None).0, 0);
    assert_eq!(run(&["validate", path(&pred)], None).0, 0);
    let prior = dir.path().join("prior.json");
    assert_eq!(
        run(
            &["prior", "--train", path(&gt), "--out", path(&prior)],
            None
        )
        .0,
        0
    );
    let (code, out, _) = run(&["acr", "--prior", path(&prior), "--pred", path(&gt)], None);
    assert_eq!(code, 0);
    let acr: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(acr["total_violations"], 0);
    assert_eq!(acr["mean_acr_loss"], 0.0);
}
