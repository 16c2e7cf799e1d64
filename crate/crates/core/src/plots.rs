//! Precision-recall plots with standard deviation bands, iso-F contours,
//! the best-F1 point and an optional second-annotator marker. Output is a
//! hand-assembled SVG document plus a CSV of the plotted series.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{argmax_first, Aggregate, AggregateRow, AnnotatorPoint, DegenerateFlags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub label: String,
    pub points: Vec<AggregateRow>,
    /// Index of the highest macro F1, ties to the lowest threshold.
    pub argmax_index: usize,
}

impl PRCurve {
    pub fn best(&self) -> &AggregateRow {
        &self.points[self.argmax_index]
    }
}

pub fn pr_curve(agg: &Aggregate, label: &str) -> Result<PRCurve> {
    let argmax_index = argmax_first(agg.rows.iter().map(|r| r.f1_macro))
        .ok_or_else(|| Error::invalid("cannot plot an empty aggregate"))?;
    Ok(PRCurve {
        label: label.to_string(),
        points: agg.rows.clone(),
        argmax_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorMarker {
    pub pr: f64,
    pub re: f64,
    pub std_pr: f64,
    pub std_re: f64,
}

impl From<&AnnotatorPoint> for AnnotatorMarker {
    fn from(a: &AnnotatorPoint) -> Self {
        Self {
            pr: a.mean_pr,
            re: a.mean_re,
            std_pr: a.std_pr,
            std_re: a.std_re,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub palette: Vec<String>,
    pub iso_color: String,
    pub annotator_color: String,
    pub band_opacity: f64,
    pub line_width: f64,
    pub marker_radius: f64,
}

impl Default for Style {
    fn default() -> Self {
        Self {
            palette: ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
                .map(String::from)
                .to_vec(),
            iso_color: "#a6dba0".into(),
            annotator_color: "#f4a6a6".into(),
            band_opacity: 0.2,
            line_width: 1.5,
            marker_radius: 4.0,
        }
    }
}

pub fn default_iso_levels() -> Vec<f64> {
    (2..=9).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    #[serde(default)]
    pub title: String,
    pub curves: Vec<PRCurve>,
    #[serde(default)]
    pub annotator: Option<AnnotatorMarker>,
    #[serde(default = "default_iso_levels")]
    pub iso_f_levels: Vec<f64>,
    #[serde(default)]
    pub style: Style,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            title: String::new(),
            curves: Vec::new(),
            annotator: None,
            iso_f_levels: default_iso_levels(),
            style: Style::default(),
        }
    }
}

impl PlotSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.iso_f_levels.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::invalid(format!("iso-F level {f} is outside (0, 1]")));
        }
        if self.style.palette.is_empty() {
            return Err(Error::invalid("empty palette"));
        }
        for c in &self.curves {
            if c.argmax_index >= c.points.len() {
                return Err(Error::invalid(format!("curve {:?} has no point {}", c.label, c.argmax_index)));
            }
        }
        Ok(())
    }
}

/// Points `(pr, re)` on the level-`f` iso-F curve inside the unit square,
/// sampled at `samples` evenly spaced precisions from `f / (2 - f)` to 1.
pub fn iso_f_polyline(f: f64, samples: usize) -> Result<Vec<(f64, f64)>> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::invalid(format!("iso-F level {f} is outside (0, 1]")));
    }
    if f == 1.0 {
        return Ok(vec![(1.0, 1.0)]);
    }
    if samples < 2 {
        return Err(Error::invalid("an iso-F polyline needs at least 2 samples"));
    }
    let lo = f / (2.0 - f);
    Ok((0..samples)
        .map(|i| {
            let pr = lo + (1.0 - lo) * i as f64 / (samples - 1) as f64;
            let re = (f * pr / (2.0 * pr - f)).min(1.0);
            (pr, re)
        })
        .collect())
}

pub const ISO_SAMPLES: usize = 100;

/// Canvas geometry. Recall maps to x, precision to y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub width: f64,
    pub height: f64,
    pub left: f64,
    pub top: f64,
    pub size: f64,
}

pub const FRAME: Frame = Frame {
    width: 760.0,
    height: 600.0,
    left: 70.0,
    top: 50.0,
    size: 480.0,
};

impl Frame {
    pub fn x(&self, re: f64) -> f64 {
        self.left + self.size * re
    }

    pub fn y(&self, pr: f64) -> f64 {
        self.top + self.size * (1.0 - pr)
    }
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn point(out: &mut String, cmd: char, re: f64, pr: f64) {
    let _ = write!(out, "{cmd}{:.2},{:.2} ", FRAME.x(re), FRAME.y(pr));
}

fn band_path(c: &PRCurve) -> String {
    let mut d = String::new();
    for p in &c.points {
        let (r0, r1) = (clip01(p.mean_re - p.std_re), clip01(p.mean_re + p.std_re));
        let (p0, p1) = (clip01(p.mean_pr - p.std_pr), clip01(p.mean_pr + p.std_pr));
        point(&mut d, 'M', r0, p0);
        point(&mut d, 'L', r1, p0);
        point(&mut d, 'L', r1, p1);
        point(&mut d, 'L', r0, p1);
        d.push_str("Z ");
    }
    d.trim_end().to_string()
}

fn polyline(points: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (i, (re, pr)) in points.into_iter().enumerate() {
        point(&mut d, if i == 0 { 'M' } else { 'L' }, re, pr);
    }
    d.trim_end().to_string()
}

fn render_svg(spec: &PlotSpec) -> String {
    let f = FRAME;
    let s = &spec.style;
    let mut o = String::new();
    let _ = writeln!(o, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = f.width,
        h = f.height
    );
    let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !spec.title.is_empty() {
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="30" text-anchor="middle" font-size="15">{}</text>"#,
            f.x(0.5),
            escape(&spec.title)
        );
    }

    // grid and ticks
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let _ = writeln!(
            o,
            r##"<path class="grid" d="M{x:.2},{t:.2} L{x:.2},{b:.2} M{l:.2},{y:.2} L{r:.2},{y:.2}" stroke="#e5e5e5" stroke-width="0.5"/>"##,
            x = f.x(v),
            y = f.y(v),
            t = f.y(1.0),
            b = f.y(0.0),
            l = f.x(0.0),
            r = f.x(1.0)
        );
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            f.x(v),
            f.y(0.0) + 18.0
        );
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            f.x(0.0) - 8.0,
            f.y(v) + 4.0
        );
    }

    for &level in &spec.iso_f_levels {
        let pts = iso_f_polyline(level, ISO_SAMPLES).expect("levels validated");
        let _ = writeln!(
            o,
            r#"<path class="iso-f" d="{}" fill="none" stroke="{}" stroke-width="1"/>"#,
            polyline(pts.iter().map(|&(pr, re)| (re, pr))),
            s.iso_color
        );
        let &(pr, re) = pts.last().expect("non-empty polyline");
        let _ = writeln!(
            o,
            r#"<text class="iso-f-label" x="{:.2}" y="{:.2}" fill="{}" font-size="10">f={level:.1}</text>"#,
            f.x(re) + 3.0,
            f.y(pr) - 3.0,
            s.iso_color
        );
    }

    for (i, c) in spec.curves.iter().enumerate() {
        let color = &s.palette[i % s.palette.len()];
        let _ = writeln!(
            o,
            r#"<path class="band" d="{}" fill="{color}" fill-opacity="{}" stroke="none"/>"#,
            band_path(c),
            s.band_opacity
        );
        let _ = writeln!(
            o,
            r#"<path class="curve" d="{}" fill="none" stroke="{color}" stroke-width="{}"/>"#,
            polyline(c.points.iter().map(|p| (p.mean_re, p.mean_pr))),
            s.line_width
        );
    }
    // markers on top of every band and line
    for c in &spec.curves {
        let b = c.best();
        let _ = writeln!(
            o,
            r#"<circle class="argmax" cx="{:.2}" cy="{:.2}" r="{}" fill="black"/>"#,
            f.x(b.mean_re),
            f.y(b.mean_pr),
            s.marker_radius
        );
    }

    if let Some(a) = &spec.annotator {
        let (r0, r1) = (clip01(a.re - a.std_re), clip01(a.re + a.std_re));
        let (p0, p1) = (clip01(a.pr - a.std_pr), clip01(a.pr + a.std_pr));
        let mut d = String::new();
        point(&mut d, 'M', r0, a.pr);
        point(&mut d, 'L', r1, a.pr);
        point(&mut d, 'M', a.re, p0);
        point(&mut d, 'L', a.re, p1);
        let _ = writeln!(
            o,
            r#"<path class="annotator-std" d="{}" stroke="{}" stroke-width="1.5"/>"#,
            d.trim_end(),
            s.annotator_color
        );
        let _ = writeln!(
            o,
            r#"<circle class="annotator" cx="{:.2}" cy="{:.2}" r="{}" fill="{}"/>"#,
            f.x(a.re),
            f.y(a.pr),
            s.marker_radius,
            s.annotator_color
        );
    }

    let _ = writeln!(
        o,
        r#"<rect class="axes" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        f.left, f.top, f.size, f.size
    );
    let _ = writeln!(
        o,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Recall</text>"#,
        f.x(0.5),
        f.y(0.0) + 40.0
    );
    let _ = writeln!(
        o,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">Precision</text>"#,
        f.y(0.5),
        f.y(0.5)
    );

    // legend
    let lx = f.x(1.0) + 20.0;
    let mut ly = f.top + 10.0;
    for (i, c) in spec.curves.iter().enumerate() {
        let color = &s.palette[i % s.palette.len()];
        let _ = writeln!(
            o,
            r#"<path d="M{lx:.2},{ly:.2} L{:.2},{ly:.2}" stroke="{color}" stroke-width="3"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{:.2}">{} (F1={:.3})</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&c.label),
            c.best().f1_macro
        );
        ly += 18.0;
    }
    if spec.annotator.is_some() {
        let _ = writeln!(
            o,
            r#"<circle cx="{:.2}" cy="{ly:.2}" r="{}" fill="{}"/>"#,
            lx + 10.0,
            s.marker_radius,
            s.annotator_color
        );
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}">2nd annotator</text>"#, lx + 26.0, ly + 4.0);
        ly += 18.0;
    }
    if !spec.curves.is_empty() {
        let _ = writeln!(o, r#"<text x="{lx:.2}" y="{:.2}" font-size="10">bands: mean ± 1 std</text>"#, ly + 4.0);
    }
    o.push_str("</svg>\n");
    o
}

#[derive(Debug, Serialize)]
struct SeriesRow<'a> {
    series: &'a str,
    threshold: f64,
    mean_pr: f64,
    std_pr: f64,
    mean_re: f64,
    std_re: f64,
    f1_macro: f64,
    f1_micro_mean: f64,
    f1_micro_std: f64,
    degenerate_flags: DegenerateFlags,
}

fn render_csv(spec: &PlotSpec) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "series",
        "threshold",
        "mean_pr",
        "std_pr",
        "mean_re",
        "std_re",
        "f1_macro",
        "f1_micro_mean",
        "f1_micro_std",
        "degenerate_flags",
    ])
    .map_err(|e| Error::Format(format!("csv: {e}")))?;
    for c in &spec.curves {
        for p in &c.points {
            w.serialize(SeriesRow {
                series: &c.label,
                threshold: p.threshold,
                mean_pr: p.mean_pr,
                std_pr: p.std_pr,
                mean_re: p.mean_re,
                std_re: p.std_re,
                f1_macro: p.f1_macro,
                f1_micro_mean: p.f1_micro_mean,
                f1_micro_std: p.f1_micro_std,
                degenerate_flags: p.degenerate_flags,
            })
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
    }
    crate::metrics::finish_csv(w)
}

/// SVG document and series CSV; a pure function of `spec`.
pub fn render(spec: &PlotSpec) -> Result<(String, String)> {
    spec.validate()?;
    Ok((render_svg(spec), render_csv(spec)?))
}
