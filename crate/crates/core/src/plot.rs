//! Self-contained SVG figures: phenotype scatter plots with a fitted line, and
//! quartile box plots of pixel deviations.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ols_fit;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("scatter plot needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite value in plot data")]
    NonFinite,
    #[error("deviation group {0:?} is empty")]
    EmptyGroup(String),
    #[error("no deviation groups supplied")]
    NoGroups,
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 1.0, hi + 1.0)
        };
        Axis {
            lo,
            hi,
            px_lo,
            px_hi,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn frame(out: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<rect class="frame" x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn tick_labels(out: &mut String, x: Option<&Axis>, y: &Axis) {
    if let Some(x) = x {
        for v in [x.lo, x.hi] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{v:.1}</text>"#,
                x.map(v),
                HEIGHT - MARGIN + 14.0
            );
        }
    }
    for v in [y.lo, y.hi] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{v:.1}</text>"#,
            MARGIN - 4.0,
            y.map(v) + 3.0
        );
    }
}

/// Scatter of `(ground truth, prediction)` pairs with the least-squares line
/// and an `y = ax + b, R² = p%` annotation. A fit that cannot be computed
/// (constant ground truth) leaves out the line and annotation.
pub fn scatter_svg(title: &str, points: &[[f64; 2]]) -> Result<String, PlotError> {
    if points.len() < 2 {
        return Err(PlotError::TooFewPoints(points.len()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlotError::NonFinite);
    }
    let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
    let lo = xs.iter().chain(&ys).copied().fold(f64::INFINITY, f64::min);
    let hi = xs
        .iter()
        .chain(&ys)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let xa = Axis::new(lo, hi, MARGIN, WIDTH - MARGIN);
    let ya = Axis::new(lo, hi, HEIGHT - MARGIN, MARGIN);

    let mut out = String::new();
    header(&mut out, title);
    frame(&mut out, "ground truth (px)", "prediction (px)");
    tick_labels(&mut out, Some(&xa), &ya);
    out.push_str("<g class=\"points\">\n");
    for p in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" fill-opacity="0.7"/>"#,
            xa.map(p[0]),
            ya.map(p[1])
        );
    }
    out.push_str("</g>\n");
    match ols_fit(&xs, &ys) {
        Ok(fit) => {
            let f = |x: f64| fit.slope * x + fit.intercept;
            let _ = writeln!(
                out,
                r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-width="1.5"/>"#,
                xa.map(xa.lo),
                ya.map(f(xa.lo)),
                xa.map(xa.hi),
                ya.map(f(xa.hi))
            );
            let sign = if fit.intercept < 0.0 { '-' } else { '+' };
            let _ = writeln!(
                out,
                r#"<text class="annotation" x="{:.1}" y="{:.1}">y = {:.3}x {sign} {:.3}, R² = {:.1}%</text>"#,
                MARGIN + 8.0,
                MARGIN + 16.0,
                fit.slope,
                fit.intercept.abs(),
                100.0 * fit.r2
            );
        }
        Err(e) => warn!("{title}: no regression line drawn ({e})"),
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics at
/// position `p·(n − 1)`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quantiles {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

fn summarize(groups: &[(String, Vec<f64>)]) -> Result<Vec<Quantiles>, PlotError> {
    if groups.is_empty() {
        return Err(PlotError::NoGroups);
    }
    groups
        .iter()
        .map(|(name, values)| {
            if values.is_empty() {
                return Err(PlotError::EmptyGroup(name.clone()));
            }
            quantiles(values).ok_or(PlotError::NonFinite)
        })
        .collect()
}

/// One box per named group: whiskers at min and max, box from q1 to q3,
/// a bar at the median.
pub fn deviation_summary_svg(
    title: &str,
    groups: &[(String, Vec<f64>)],
) -> Result<String, PlotError> {
    let stats = summarize(groups)?;
    let lo = stats
        .iter()
        .map(|q| q.min)
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let hi = stats
        .iter()
        .map(|q| q.max)
        .fold(f64::NEG_INFINITY, f64::max);
    let ya = Axis::new(lo, hi, HEIGHT - MARGIN, MARGIN);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len() as f64;
    let half = (slot * 0.3).min(40.0);

    let mut out = String::new();
    header(&mut out, title);
    frame(&mut out, "", "deviation (px)");
    tick_labels(&mut out, None, &ya);
    for (i, ((name, values), q)) in groups.iter().zip(&stats).enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<g class="box" data-metric="{}" data-n="{}">"#,
            escape(name),
            values.len()
        );
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            ya.map(q.min),
            ya.map(q.max)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#,
            cx - half,
            ya.map(q.q3),
            2.0 * half,
            ya.map(q.q1) - ya.map(q.q3)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-width="2"/>"#,
            cx - half,
            ya.map(q.median),
            cx + half,
            ya.map(q.median)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 14.0,
            escape(name)
        );
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// `metric,n,min,q1,median,q3,max`, one row per group.
pub fn quantile_csv(groups: &[(String, Vec<f64>)]) -> Result<String, PlotError> {
    let stats = summarize(groups)?;
    let mut out = String::from("metric,n,min,q1,median,q3,max\n");
    for ((name, values), q) in groups.iter().zip(&stats) {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{}",
            values.len(),
            q.min,
            q.q1,
            q.median,
            q.q3,
            q.max
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed svg")
    }

    #[test]
    fn perfect_predictions_annotate_full_r2() {
        let pts: Vec<[f64; 2]> = (1..=6)
            .map(|i| [i as f64 * 10.0, i as f64 * 10.0])
            .collect();
        let svg = scatter_svg("TL", &pts).unwrap();
        assert!(svg.contains("y = 1.000x + 0.000, R² = 100.0%"), "{svg}");
        let doc = parse(&svg);
        assert_eq!(
            doc.descendants()
                .filter(|n| n.has_tag_name("circle"))
                .count(),
            6
        );
    }

    #[test]
    fn two_points_fit_exactly() {
        let svg = scatter_svg("ED", &[[3.0, -2.0], [10.0, 7.5]]).unwrap();
        assert!(svg.contains("R² = 100.0%"));
        assert!(svg.contains("x - "));
        let doc = parse(&svg);
        assert_eq!(
            doc.descendants()
                .filter(|n| n.attribute("class") == Some("fit"))
                .count(),
            1
        );
    }

    #[test]
    fn degenerate_fit_drops_line() {
        let svg = scatter_svg("BD", &[[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]).unwrap();
        let doc = parse(&svg);
        assert_eq!(
            doc.descendants()
                .filter(|n| n.has_tag_name("circle"))
                .count(),
            3
        );
        assert!(!svg.contains("class=\"fit\""));
        assert_eq!(
            scatter_svg("x", &[[1.0, 1.0]]),
            Err(PlotError::TooFewPoints(1))
        );
    }

    #[test]
    fn titles_are_escaped() {
        let svg = scatter_svg("a<b & c", &[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        parse(&svg);
        assert!(svg.contains("a&lt;b &amp; c"));
    }

    #[test]
    fn order_statistics() {
        let q = quantiles(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(
            q,
            Quantiles {
                min: 1.0,
                q1: 2.0,
                median: 3.0,
                q3: 4.0,
                max: 5.0
            }
        );
        let q = quantiles(&[7.5; 4]).unwrap();
        assert!([q.min, q.q1, q.median, q.q3, q.max]
            .iter()
            .all(|&v| v == 7.5));
        let q = quantiles(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
        assert!(quantiles(&[]).is_none());
    }

    #[test]
    fn one_box_per_group() {
        let groups = vec![
            ("OKS".to_string(), vec![1.0, 2.0, 3.0]),
            ("PMP".to_string(), vec![0.5, 0.7]),
        ];
        let svg = deviation_summary_svg("deviations", &groups).unwrap();
        let doc = parse(&svg);
        let boxes: Vec<_> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("box"))
            .collect();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[1].attribute("data-metric"), Some("PMP"));
        let csv = quantile_csv(&groups).unwrap();
        assert_eq!(csv.lines().nth(1), Some("OKS,3,1,1.5,2,2.5,3"));
        assert_eq!(
            deviation_summary_svg("x", &[("A".into(), vec![])]),
            Err(PlotError::EmptyGroup("A".into()))
        );
    }
}
