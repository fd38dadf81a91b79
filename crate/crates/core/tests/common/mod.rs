//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls the library's metric or morphometry code.

#![allow(dead_code)]

use phenokey::KeypointSet;

/// (abbrev, endpoint a, endpoint b), 1-based keypoint numbers.
pub const PHENOTYPES: [(&str, usize, usize); 23] = [
    ("TL", 1, 9),
    ("SL", 1, 10),
    ("HL", 1, 2),
    ("SnL", 1, 11),
    ("ED", 11, 12),
    ("PoL", 12, 2),
    ("BD", 5, 6),
    ("HD", 3, 4),
    ("PeAD", 15, 17),
    ("CPD", 7, 8),
    ("CPL", 18, 10),
    ("DFL", 20, 21),
    ("DFH", 20, 22),
    ("PcL", 13, 14),
    ("PeL", 15, 16),
    ("AFL", 17, 18),
    ("AFH", 17, 19),
    ("TFL", 10, 9),
    ("PrDL", 1, 20),
    ("PoDL", 20, 10),
    ("PcDD", 13, 20),
    ("PcPeD", 13, 15),
    ("PeDD", 15, 20),
];

/// `(x, y, labeled)` for keypoints 1..=22.
pub fn points(k: &KeypointSet) -> Vec<(f64, f64, bool)> {
    k.points
        .iter()
        .map(|p| (p.x, p.y, p.v.flag() > 0))
        .collect()
}

fn dist(a: (f64, f64, bool), b: (f64, f64, bool)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

pub fn bbox_diagonal(gt: &KeypointSet) -> f64 {
    let pts: Vec<_> = points(gt).into_iter().filter(|p| p.2).collect();
    let mut x0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for p in &pts {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1);
        y1 = y1.max(p.1);
    }
    ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
}

/// Mean over labeled ground-truth keypoints of `exp(-d² / (2 s² k²))`,
/// `s` the ground-truth bounding-box diagonal, `k = 0.025`.
pub fn oks(pred: &KeypointSet, gt: &KeypointSet) -> Option<f64> {
    let s = bbox_diagonal(gt);
    let k = 0.025;
    let g = points(gt);
    let p = points(pred);
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..22 {
        if g[i].2 {
            let d = dist(p[i], g[i]);
            sum += (-(d * d) / (2.0 * s * s * k * k)).exp();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per-keypoint hit rate with strict `<`, normalized by the bounding-box diagonal.
pub fn pck(preds: &[KeypointSet], gts: &[KeypointSet], threshold: f64) -> Vec<Option<f64>> {
    (0..22)
        .map(|i| {
            let mut hits = 0;
            let mut n = 0;
            for (p, g) in preds.iter().zip(gts) {
                let gp = points(g);
                if !gp[i].2 {
                    continue;
                }
                n += 1;
                if dist(points(p)[i], gp[i]) / bbox_diagonal(g) < threshold {
                    hits += 1;
                }
            }
            (n > 0).then(|| hits as f64 / n as f64)
        })
        .collect()
}

/// Shortest ground-truth phenotype through keypoint `i` (0-based) with both
/// endpoints labeled.
pub fn shortest_phenotype(gt: &KeypointSet, i: usize) -> Option<f64> {
    let g = points(gt);
    let mut best: Option<f64> = None;
    for &(_, a, b) in &PHENOTYPES {
        if a - 1 != i && b - 1 != i {
            continue;
        }
        if !(g[a - 1].2 && g[b - 1].2) {
            continue;
        }
        let len = dist(g[a - 1], g[b - 1]);
        if best.is_none_or(|l| len < l) {
            best = Some(len);
        }
    }
    best
}

pub fn pmp(preds: &[KeypointSet], gts: &[KeypointSet], r: f64) -> Vec<Option<f64>> {
    (0..22)
        .map(|i| {
            let mut hits = 0;
            let mut n = 0;
            for (p, g) in preds.iter().zip(gts) {
                let gp = points(g);
                if !gp[i].2 {
                    continue;
                }
                let Some(len) = shortest_phenotype(g, i).filter(|&l| l > 0.0) else {
                    continue;
                };
                n += 1;
                if dist(points(p)[i], gp[i]) / len < r {
                    hits += 1;
                }
            }
            (n > 0).then(|| hits as f64 / n as f64)
        })
        .collect()
}

/// Phenotype lengths `(abbrev, value)` for pairs with both endpoints labeled.
pub fn measurements(k: &KeypointSet) -> Vec<(&'static str, f64)> {
    let p = points(k);
    PHENOTYPES
        .iter()
        .filter(|&&(_, a, b)| p[a - 1].2 && p[b - 1].2)
        .map(|&(name, a, b)| (name, dist(p[a - 1], p[b - 1])))
        .collect()
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn phenokey() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_phenokey"))
}

/// Runs the binary and returns `(exit code, stdout, stderr)`.
pub fn run(args: &[&str], threads: Option<&str>) -> (i32, String, String) {
    let mut cmd = phenokey();
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("PHENOKEY_THREADS", t),
        None => cmd.env_remove("PHENOKEY_THREADS"),
    };
    let out = cmd.output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}
