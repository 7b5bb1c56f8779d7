//! Self-contained SVG 1.1 line charts. Output depends only on the input, so
//! identical data gives identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{at, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A horizontal dashed marker at `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub label: String,
    pub y: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub references: Vec<Reference>,
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 44.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Data range of a panel, padded 5% and never degenerate.
pub fn axis_range(panel: &Panel) -> ((f64, f64), (f64, f64)) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter().copied());
    let refs = panel.references.iter().map(|r| (f64::NAN, r.y));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts.chain(refs) {
        if x.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        if y.is_finite() {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    let pad = |lo: f64, hi: f64| {
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
        (lo - 0.05 * span, hi + 0.05 * span)
    };
    (pad(x0, x1), pad(y0, y1))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders panels side by side. Each series becomes exactly one `polyline`.
pub fn render(panels: &[Panel]) -> Result<String> {
    if panels.is_empty() || panels.iter().any(|p| p.series.is_empty() || p.series.iter().any(|s| s.points.is_empty())) {
        return Err(Error::Format("a plot needs at least one non-empty series per panel".into()));
    }
    let width = PANEL_W * panels.len() as f64;
    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{PANEL_H}" fill="white"/>"#).unwrap();
    for (pi, panel) in panels.iter().enumerate() {
        let ox = PANEL_W * pi as f64;
        let ((x0, x1), (y0, y1)) = axis_range(panel);
        let (l, r) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
        let (t, b) = (MARGIN_T, PANEL_H - MARGIN_B);
        let px = |x: f64| l + (x - x0) / (x1 - x0) * (r - l);
        let py = |y: f64| b - (y - y0) / (y1 - y0) * (b - t);
        writeln!(s, r#"<g>"#).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, (l + r) / 2.0, esc(&panel.title)).unwrap();
        writeln!(s, r##"<line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}" stroke="#000"/>"##).unwrap();
        writeln!(s, r##"<line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}" stroke="#000"/>"##).unwrap();
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(fx), b + 14.0, tick(fx)).unwrap();
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l - 4.0, py(fy) + 4.0, tick(fy)).unwrap();
        }
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, PANEL_H - 8.0, esc(&panel.x_label)).unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            ox + 14.0,
            (t + b) / 2.0,
            ox + 14.0,
            (t + b) / 2.0,
            esc(&panel.y_label)
        )
        .unwrap();
        for rf in &panel.references {
            let y = py(rf.y);
            writeln!(s, r##"<line x1="{l:.2}" y1="{y:.2}" x2="{r:.2}" y2="{y:.2}" stroke="#888" stroke-dasharray="4 3"/>"##).unwrap();
            writeln!(s, r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#666">{}</text>"##, r - 2.0, y - 3.0, esc(&rf.label)).unwrap();
        }
        for (si, series) in panel.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
            let ly = t + 14.0 * si as f64 + 8.0;
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#, l + 8.0, ly, esc(&series.label)).unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" { "0".into() } else { t.into() }
}

pub fn emit_svg_plot(panels: &[Panel], path: &Path) -> Result<()> {
    let svg = render(panels)?;
    std::fs::write(path, svg).map_err(at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(series: Vec<Series>) -> Panel {
        Panel {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series,
            references: vec![],
        }
    }

    #[test]
    fn one_series_one_polyline() {
        let p = panel(vec![Series {
            label: "a".into(),
            points: vec![(0.0, 0.0), (1.0, 2.0)],
        }]);
        let svg = render(&[p]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains(r#"version="1.1""#));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn deterministic_bytes() {
        let p = panel(vec![Series {
            label: "a<b".into(),
            points: vec![(0.5, 0.25), (1.0, 3.0), (2.0, -1.0)],
        }]);
        assert_eq!(render(&[p.clone()]).unwrap(), render(&[p]).unwrap());
    }

    #[test]
    fn axes_enclose_data() {
        let p = panel(vec![
            Series {
                label: "a".into(),
                points: vec![(-3.0, 0.1), (4.0, 0.9)],
            },
            Series {
                label: "b".into(),
                points: vec![(2.0, 5.0)],
            },
        ]);
        let ((x0, x1), (y0, y1)) = axis_range(&p);
        for s in &p.series {
            for &(x, y) in &s.points {
                assert!(x0 < x && x < x1 && y0 < y && y < y1);
            }
        }
        let flat = panel(vec![Series {
            label: "c".into(),
            points: vec![(1.0, 1.0)],
        }]);
        let ((x0, x1), (y0, y1)) = axis_range(&flat);
        assert!(x0 < 1.0 && 1.0 < x1 && y0 < 1.0 && 1.0 < y1);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(render(&[]).is_err());
        assert!(render(&[panel(vec![])]).is_err());
    }
}
