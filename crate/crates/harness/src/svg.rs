//! Deterministic SVG scatter and quiver plots for 2D data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rectiflow::Batch;

use crate::config::PlotSpec;
use crate::error::{HarnessError, Result};

const MARGIN: f64 = 36.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PlotStyle {
    /// `[x_min, x_max, y_min, y_max]` in data units.
    pub viewport: [f64; 4],
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub color: String,
    pub marker_radius: f64,
}

impl PlotStyle {
    pub fn from_spec(spec: &PlotSpec, title: impl Into<String>) -> Self {
        Self {
            viewport: spec.viewport,
            width: spec.width,
            height: spec.height,
            title: title.into(),
            color: "#1f77b4".into(),
            marker_radius: 1.4,
        }
    }
}

struct Frame<'a> {
    style: &'a PlotStyle,
}

impl Frame<'_> {
    fn px(&self, x: f64) -> f64 {
        let [x0, x1, _, _] = self.style.viewport;
        MARGIN + (x - x0) / (x1 - x0) * (f64::from(self.style.width) - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let [_, _, y0, y1] = self.style.viewport;
        f64::from(self.style.height) - MARGIN - (y - y0) / (y1 - y0) * (f64::from(self.style.height) - 2.0 * MARGIN)
    }

    fn scale_x(&self) -> f64 {
        let [x0, x1, _, _] = self.style.viewport;
        (f64::from(self.style.width) - 2.0 * MARGIN) / (x1 - x0)
    }

    fn scale_y(&self) -> f64 {
        let [_, _, y0, y1] = self.style.viewport;
        (f64::from(self.style.height) - 2.0 * MARGIN) / (y1 - y0)
    }
}

fn tick_values(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 8.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * magnitude);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| (k as f64 * step * 1e9).round() / 1e9).collect()
}

fn header(out: &mut String, style: &PlotStyle) {
    let (w, h) = (style.width, style.height);
    let f = Frame { style };
    let [x0, x1, y0, y1] = style.viewport;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        out,
        r#"<defs><clipPath id="plot"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/></clipPath><marker id="arrow" viewBox="0 0 6 6" refX="5" refY="3" markerWidth="4" markerHeight="4" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="context-stroke"/></marker></defs>"#,
        f.px(x0),
        f.py(y1),
        f.px(x1) - f.px(x0),
        f.py(y0) - f.py(y1)
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        f.px(x0),
        f.py(y1),
        f.px(x1) - f.px(x0),
        f.py(y0) - f.py(y1)
    );
    out.push_str("<g class=\"axes\" stroke=\"#bbb\">\n");
    if x0 <= 0.0 && 0.0 <= x1 {
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, f.px(0.0), f.py(y0), f.px(0.0), f.py(y1));
    }
    if y0 <= 0.0 && 0.0 <= y1 {
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, f.px(x0), f.py(0.0), f.px(x1), f.py(0.0));
    }
    out.push_str("</g>\n<g class=\"ticks\" fill=\"#444\">\n");
    for x in tick_values(x0, x1) {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, f.px(x), f.py(y0) + 14.0, x);
    }
    for y in tick_values(y0, y1) {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, f.px(x0) - 4.0, f.py(y) + 3.0, y);
    }
    out.push_str("</g>\n");
    let _ = writeln!(out, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="12">{}</text>"#, f64::from(w) / 2.0, escape(&style.title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn require_2d(batch: &Batch, what: &str) -> Result<()> {
    if batch.dim() != 2 {
        return Err(HarnessError::Other(format!("{what} must be 2D, got dimension {}", batch.dim())));
    }
    Ok(())
}

pub fn render_scatter_svg(samples: &Batch, style: &PlotStyle) -> Result<String> {
    require_2d(samples, "scatter samples")?;
    let mut out = String::new();
    header(&mut out, style);
    let f = Frame { style };
    let _ = writeln!(out, r#"<g class="markers" fill="{}" fill-opacity="0.6" clip-path="url(#plot)">"#, style.color);
    for row in samples.array().rows() {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="{}"/>"#, f.px(row[0]), f.py(row[1]), style.marker_radius);
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Arrows from each origin along its vector. `scale` multiplies the vectors;
/// `None` scales the longest arrow to the mean grid spacing.
pub fn render_quiver_svg(origins: &Batch, vectors: &Batch, style: &PlotStyle, scale: Option<f64>) -> Result<String> {
    require_2d(origins, "quiver origins")?;
    require_2d(vectors, "quiver vectors")?;
    if origins.len() != vectors.len() {
        return Err(HarnessError::Other("quiver origins and vectors differ in length".into()));
    }
    let scale = scale.unwrap_or_else(|| {
        let longest = vectors
            .array()
            .rows()
            .into_iter()
            .map(|r| r[0].hypot(r[1]))
            .filter(|n| n.is_finite())
            .fold(0.0, f64::max);
        let [x0, x1, _, _] = style.viewport;
        let spacing = (x1 - x0) / (origins.len().max(1) as f64).sqrt();
        if longest > 0.0 {
            spacing / longest
        } else {
            1.0
        }
    });
    let mut out = String::new();
    header(&mut out, style);
    let f = Frame { style };
    let _ = writeln!(
        out,
        r#"<g class="arrows" stroke="{}" stroke-width="1" marker-end="url(#arrow)" clip-path="url(#plot)">"#,
        style.color
    );
    for (o, v) in origins.array().rows().into_iter().zip(vectors.array().rows()) {
        let (x, y) = (f.px(o[0]), f.py(o[1]));
        let (dx, dy) = (v[0] * scale * f.scale_x(), -v[1] * scale * f.scale_y());
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, x, y, x + dx, y + dy);
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn emit_scatter_svg(samples: &Batch, path: impl AsRef<Path>, style: &PlotStyle) -> Result<()> {
    write(path.as_ref(), render_scatter_svg(samples, style)?)
}

pub fn emit_quiver_svg(
    origins: &Batch,
    vectors: &Batch,
    path: impl AsRef<Path>,
    style: &PlotStyle,
    scale: Option<f64>,
) -> Result<()> {
    write(path.as_ref(), render_quiver_svg(origins, vectors, style, scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rectiflow::{sample_noise, StreamFamily};

    fn style() -> PlotStyle {
        PlotStyle::from_spec(&PlotSpec::default(), "test")
    }

    #[test]
    fn empty_batch_draws_axes_only() {
        let svg = render_scatter_svg(&Batch::zeros(0, 2), &style()).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("class=\"axes\""));
        assert_eq!(svg.matches("<circle").count(), 0);
    }

    #[test]
    fn one_marker_per_point_and_stable_bytes() {
        let pts = sample_noise::<f64>(&StreamFamily::new(1, "svg"), 0, 1000, 2);
        let a = render_scatter_svg(&pts, &style()).unwrap();
        assert_eq!(a.matches("<circle").count(), 1000);
        assert_eq!(a, render_scatter_svg(&pts, &style()).unwrap());
    }

    #[test]
    fn non_planar_input_is_rejected() {
        assert!(render_scatter_svg(&Batch::zeros(3, 3), &style()).is_err());
        assert!(render_quiver_svg(&Batch::zeros(3, 2), &Batch::zeros(2, 2), &style(), None).is_err());
    }

    #[test]
    fn quiver_has_one_arrow_per_origin() {
        let o = sample_noise::<f64>(&StreamFamily::new(2, "svg"), 0, 50, 2);
        let v = sample_noise::<f64>(&StreamFamily::new(3, "svg"), 0, 50, 2);
        let svg = render_quiver_svg(&o, &v, &style(), None).unwrap();
        // Plus the two axis lines.
        assert_eq!(svg.matches("<line").count(), 50 + 2);
    }

    #[test]
    fn ticks_are_round_numbers() {
        assert_eq!(tick_values(-4.0, 4.0), vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tick_values(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    }
}
