//! Line charts with error bars, written directly as SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineStyle {
    Solid,
    Dashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Half-height of the error bar.
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Point>,
    pub style: LineStyle,
}

/// A horizontal reference value drawn solid with a dashed `+-err` band.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub label: String,
    pub y: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
    pub reference: Option<Reference>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    fn bounds(&self) -> Result<(f64, f64, f64, f64)> {
        let pts: Vec<&Point> = self.series.iter().flat_map(|s| &s.points).collect();
        if pts.is_empty() {
            return Err(Error::invalid("nothing to plot"));
        }
        if pts.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.err.is_finite())) {
            return Err(Error::NonFinite("plot point".into()));
        }
        if self.log_x && pts.iter().any(|p| p.x <= 0.0) {
            return Err(Error::invalid("log-scale x needs positive values"));
        }
        let fx = |x: f64| if self.log_x { x.log10() } else { x };
        let mut x0 = pts.iter().map(|p| fx(p.x)).fold(f64::INFINITY, f64::min);
        let mut x1 = pts.iter().map(|p| fx(p.x)).fold(f64::NEG_INFINITY, f64::max);
        let mut y0 = pts.iter().map(|p| p.y - p.err).fold(f64::INFINITY, f64::min);
        let mut y1 = pts.iter().map(|p| p.y + p.err).fold(f64::NEG_INFINITY, f64::max);
        if let Some(r) = &self.reference {
            y0 = y0.min(r.y - r.err);
            y1 = y1.max(r.y + r.err);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5 * y0.abs().max(1e-3);
            y1 += 0.5 * y1.abs().max(1e-3);
        }
        let pad = 0.05 * (y1 - y0);
        Ok((x0, x1, y0 - pad, y1 + pad))
    }

    pub fn to_svg(&self) -> Result<String> {
        let (x0, x1, y0, y1) = self.bounds()?;
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let fx = |x: f64| if self.log_x { x.log10() } else { x };
        let sx = |x: f64| LEFT + (fx(x) - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let w = &mut s;
        writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        writeln!(
            w,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        )
        .unwrap();
        writeln!(
            w,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        for t in ticks(x0, x1, 5) {
            let (px, v) = (LEFT + (t - x0) / (x1 - x0) * pw, if self.log_x { 10f64.powf(t) } else { t });
            writeln!(
                w,
                r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0,
                label(v)
            )
            .unwrap();
        }
        for t in ticks(y0, y1, 5) {
            let py = sy(t);
            writeln!(
                w,
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{LEFT}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 5.0,
                LEFT - 8.0,
                py + 4.0,
                label(t)
            )
            .unwrap();
        }
        writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();
        let mut legend: Vec<(String, &str, LineStyle)> = Vec::new();
        if let Some(r) = &self.reference {
            let (a, b) = (LEFT, LEFT + pw);
            writeln!(
                w,
                r#"<line class="reference" x1="{a:.1}" y1="{:.1}" x2="{b:.1}" y2="{:.1}" stroke="black" stroke-width="1.5"/>"#,
                sy(r.y),
                sy(r.y)
            )
            .unwrap();
            for y in [r.y - r.err, r.y + r.err] {
                writeln!(
                    w,
                    r#"<line class="reference-band" x1="{a:.1}" y1="{:.1}" x2="{b:.1}" y2="{:.1}" stroke="black" stroke-dasharray="5,4"/>"#,
                    sy(y),
                    sy(y)
                )
                .unwrap();
            }
            legend.push((r.label.clone(), "black", LineStyle::Solid));
        }
        for (i, series) in self.series.iter().enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            let mut pts = series.points.clone();
            pts.sort_by(|a, b| a.x.total_cmp(&b.x));
            let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", sx(p.x), sy(p.y))).collect();
            let dash = match series.style {
                LineStyle::Solid => "",
                LineStyle::Dashed => r#" stroke-dasharray="6,4""#,
            };
            writeln!(
                w,
                r#"<polyline class="series" points="{}" fill="none" stroke="{colour}" stroke-width="2"{dash}/>"#,
                path.join(" ")
            )
            .unwrap();
            for p in &pts {
                let (px, lo, hi) = (sx(p.x), sy(p.y - p.err), sy(p.y + p.err));
                writeln!(
                    w,
                    r#"<line x1="{px:.1}" y1="{lo:.1}" x2="{px:.1}" y2="{hi:.1}" stroke="{colour}"/><circle cx="{px:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                    sy(p.y)
                )
                .unwrap();
            }
            legend.push((series.label.clone(), colour, series.style));
        }
        for (i, (text, colour, style)) in legend.iter().enumerate() {
            let y = TOP + 12.0 + 18.0 * i as f64;
            let x = LEFT + pw + 12.0;
            let dash = if *style == LineStyle::Dashed { r#" stroke-dasharray="6,4""# } else { "" };
            writeln!(
                w,
                r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{colour}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
                x + 20.0,
                x + 26.0,
                y + 4.0,
                escape(text)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_svg()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Chart {
        Chart {
            title: "AbsRel <vs> alpha & more".into(),
            x_label: "alpha".into(),
            y_label: "AbsRel".into(),
            log_x: false,
            series: vec![Series {
                label: "mldc".into(),
                points: vec![
                    Point { x: 0.9, y: 0.2, err: 0.01 },
                    Point { x: 0.0, y: 0.3, err: 0.02 },
                ],
                style: LineStyle::Solid,
            }],
            reference: Some(Reference {
                label: "baseline".into(),
                y: 0.25,
                err: 0.01,
            }),
        }
    }

    #[test]
    fn parses_as_strict_xml() {
        let svg = chart().to_svg().unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let polylines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        assert_eq!(polylines, 1);
        let bands = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("reference-band"))
            .all(|n| n.attribute("stroke-dasharray").is_some());
        assert!(bands);
    }

    #[test]
    fn empty_and_bad_input() {
        let mut c = chart();
        c.series.clear();
        assert!(c.to_svg().is_err());
        let mut c = chart();
        c.log_x = true;
        assert!(c.to_svg().is_err());
    }
}
