//! Deterministic SVG plots: training curves and validation-vs-test scatter.

use std::fmt::Write as _;

use thiserror::Error;

use crate::train::EpochRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error("best epoch {0} is not among the records")]
    BestEpoch(usize),
}

pub type Result<T> = std::result::Result<T, ReportError>;

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 180.0;
const MARGIN: f64 = 40.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.x_range.0) / (self.x_range.1 - self.x_range.0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.y_range.0) / (self.y_range.1 - self.y_range.0) * self.h
    }

    fn axes(&self, out: &mut String) {
        let (x1, y1) = (self.x0 + self.w, self.y0 + self.h);
        writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.x0, self.y0, self.w, self.h
        )
        .unwrap();
        for (v, y) in [(self.y_range.0, y1), (self.y_range.1, self.y0)] {
            writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{v:.3}</text>"#,
                self.x0 - 3.0,
                y + 3.0
            )
            .unwrap();
        }
        for (v, x) in [(self.x_range.0, self.x0), (self.x_range.1, x1)] {
            writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" font-size="9" text-anchor="middle">{v:.3}</text>"#,
                y1 + 11.0
            )
            .unwrap();
        }
    }
}

/// Six panels (accuracy, BCE, AUC for train and val) with a dashed vertical
/// line at `best_epoch`.
pub fn training_curves_svg(title: &str, records: &[EpochRecord], best_epoch: usize) -> Result<String> {
    if records.is_empty() {
        return Err(ReportError::Empty("no epoch records"));
    }
    if !records.iter().any(|r| r.epoch == best_epoch) {
        return Err(ReportError::BestEpoch(best_epoch));
    }
    type Pick = fn(&EpochRecord) -> f64;
    let panels: [(&str, Pick); 6] = [
        ("train accuracy", |r| r.train_acc),
        ("train BCE", |r| r.train_bce),
        ("train AUC", |r| r.train_auc),
        ("val accuracy", |r| r.val_acc),
        ("val BCE", |r| r.val_bce),
        ("val AUC", |r| r.val_auc),
    ];
    let width = 3.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = 2.0 * (PANEL_H + MARGIN) + MARGIN + 20.0;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    )
    .unwrap();
    writeln!(out, r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{}</text>"#, width / 2.0, esc(title)).unwrap();
    let first = records[0].epoch as f64;
    let last = records[records.len() - 1].epoch as f64;
    let x_range = if last > first { (first, last) } else { (first - 0.5, first + 0.5) };
    for (k, (name, pick)) in panels.iter().enumerate() {
        let frame = Frame {
            x0: MARGIN + (k % 3) as f64 * (PANEL_W + MARGIN),
            y0: 20.0 + MARGIN + (k / 3) as f64 * (PANEL_H + MARGIN),
            w: PANEL_W,
            h: PANEL_H,
            x_range,
            y_range: bounds(records.iter().map(pick)),
        };
        writeln!(out, r#"<g class="panel">"#).unwrap();
        frame.axes(&mut out);
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{name}</text>"#,
            frame.x0 + frame.w / 2.0,
            frame.y0 - 5.0
        )
        .unwrap();
        let pts: Vec<String> = records
            .iter()
            .filter(|r| pick(r).is_finite())
            .map(|r| format!("{:.2},{:.2}", frame.x(r.epoch as f64), frame.y(pick(r))))
            .collect();
        writeln!(out, r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{}"/>"##, pts.join(" ")).unwrap();
        let bx = frame.x(best_epoch as f64);
        writeln!(
            out,
            r##"<line class="best-epoch" x1="{bx:.2}" y1="{:.2}" x2="{bx:.2}" y2="{:.2}" stroke="#b03030" stroke-dasharray="4,3"/>"##,
            frame.y0,
            frame.y0 + frame.h
        )
        .unwrap();
        writeln!(out, "</g>").unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub label: String,
    pub val_auc: f64,
    pub test_auc: f64,
    /// Number of images behind the point; marker area is proportional to it.
    pub n: usize,
}

const MAX_RADIUS: f64 = 14.0;

pub fn marker_radius(n: usize, max_n: usize) -> f64 {
    MAX_RADIUS * (n as f64 / max_n.max(1) as f64).sqrt()
}

/// Validation AUC against test AUC, with the diagonal for reference.
pub fn val_test_scatter_svg(title: &str, points: &[ScatterPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(ReportError::Empty("no evaluation points"));
    }
    let side = 360.0;
    let size = side + 2.0 * MARGIN + 20.0;
    let all = points.iter().flat_map(|p| [p.val_auc, p.test_auc]);
    let (lo, hi) = bounds(all);
    let pad = 0.05 * (hi - lo);
    let range = (lo - pad, hi + pad);
    let frame = Frame {
        x0: MARGIN + 10.0,
        y0: MARGIN,
        w: side,
        h: side,
        x_range: range,
        y_range: range,
    };
    let max_n = points.iter().map(|p| p.n).max().unwrap_or(1);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}">"#
    )
    .unwrap();
    writeln!(out, r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{}</text>"#, size / 2.0, esc(title)).unwrap();
    frame.axes(&mut out);
    writeln!(
        out,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="2,2"/>"##,
        frame.x(range.0),
        frame.y(range.0),
        frame.x(range.1),
        frame.y(range.1)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">validation AUC</text>"#,
        frame.x0 + side / 2.0,
        frame.y0 + side + 28.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="12" y="{:.2}" font-size="11" transform="rotate(-90 12 {:.2})" text-anchor="middle">test AUC</text>"#,
        frame.y0 + side / 2.0,
        frame.y0 + side / 2.0
    )
    .unwrap();
    for p in points {
        writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{:.3}" fill="#1f5fa8" fill-opacity="0.5"><title>{} (n={})</title></circle>"##,
            frame.x(p.val_auc),
            frame.y(p.test_auc),
            marker_radius(p.n, max_n),
            esc(&p.label),
            p.n
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}
