//! Drift curves as standalone SVG documents.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::protocol::{aggregate, DriftReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// One plot for `strategy`: M against class index with one line per
/// experience and dots on the target classes.
pub fn curves_svg(report: &DriftReport, strategy: &str, title: &str) -> Result<String> {
    let agg = aggregate(report)?;
    let curves: Vec<_> = agg.curves_for(strategy).collect();
    if curves.is_empty() {
        return Err(Error::invalid(format!("no drift rows for strategy `{strategy}`")));
    }
    let classes = curves[0].values.len();
    let ymax = curves
        .iter()
        .flat_map(|c| c.values.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |c: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * c as f64 / (classes.max(2) - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * v / ymax;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for c in 0..classes {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{c}</text>"#, x(c), y0 + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">class</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(s, r#"<text x="{x0}" y="{:.2}" text-anchor="start">M (max {ymax:.3e})</text>"#, y1 - 10.0);

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .values
            .iter()
            .enumerate()
            .map(|(c, &v)| format!("{:.2},{:.2}", x(c), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-experience="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            curve.experience,
            points.join(" ")
        );
        for &c in &agg.target_classes {
            if let Some(&v) = curve.values.get(c) {
                let _ = writeln!(
                    s,
                    r#"<circle data-class="{c}" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                    x(c),
                    y(v)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">after e{}</text>"#,
            x1 - 70.0,
            y1 + 14.0 * i as f64,
            curve.experience + 1
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes one `<strategy>_curves.svg` per strategy into `dir`. An empty
/// report is an error and writes nothing.
pub fn emit_curves(report: &DriftReport, dir: impl AsRef<Path>, benchmark: &str) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::invalid("drift report is empty; no curves to draw"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for strategy in report.strategies() {
        let svg = curves_svg(report, &strategy, &format!("{benchmark}: {strategy}"))?;
        let path = dir.join(format!("{strategy}_curves.svg"));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
