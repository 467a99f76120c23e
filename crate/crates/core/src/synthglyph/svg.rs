//! SVG rendering of stroke sequences.

use std::fmt::Write;

use super::StrokeSequence;

pub const VIEW_WIDTH: f64 = 800.0;
pub const VIEW_HEIGHT: f64 = 200.0;
const MARGIN: f64 = 10.0;

/// One `<path>` per pen-down run inside a fixed `800 × 200` viewbox. The
/// trajectory is scaled uniformly to fit, with y pointing up.
pub fn render_svg(strokes: &StrokeSequence) -> String {
    let pts = &strokes.samples;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = ((x1 - x0) / (VIEW_WIDTH - 2.0 * MARGIN)).max((y1 - y0) / (VIEW_HEIGHT - 2.0 * MARGIN));
    let k = if span > 0.0 && span.is_finite() { 1.0 / span } else { 1.0 };
    let map = |x: f64, y: f64| (MARGIN + (x - x0) * k, VIEW_HEIGHT - MARGIN - (y - y0) * k);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW_WIDTH} {VIEW_HEIGHT}" width="{VIEW_WIDTH}" height="{VIEW_HEIGHT}">"#
    );
    for run in strokes.pen_down_runs() {
        let mut d = String::new();
        for (i, p) in run.iter().enumerate() {
            let (x, y) = map(p[0], p[1]);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        let _ = writeln!(out, r#"  <path d="{}" fill="none" stroke="black" stroke-width="2"/>"#, d.trim_end());
    }
    out.push_str("</svg>\n");
    out
}
