//! Per-class sample grids: one column per class, `rows` samples each.

use std::fmt::Write as _;

use ndarray::Array2;

use physiogan::datasets::{format_value, DatasetBundle, SequenceSample};

/// Raw-unit samples picked for the grid, `grid[class][row]`.
pub fn pick(bundle: &DatasetBundle, samples: &[SequenceSample], rows: usize) -> Vec<Vec<Array2<f64>>> {
    (0..bundle.num_classes())
        .map(|c| {
            samples
                .iter()
                .filter(|s| s.label == c)
                .take(rows)
                .map(|s| bundle.norm.denormalize(&s.values))
                .collect()
        })
        .collect()
}

/// `class,class_name,row,t,c1..cN`, one line per time step.
pub fn grid_csv(classes: &[String], grid: &[Vec<Array2<f64>>], channels: usize) -> String {
    let mut out = String::from("class,class_name,row,t");
    for j in 1..=channels {
        let _ = write!(out, ",c{j}");
    }
    out.push('\n');
    for (c, column) in grid.iter().enumerate() {
        for (r, values) in column.iter().enumerate() {
            for (t, frame) in values.rows().into_iter().enumerate() {
                let _ = write!(out, "{},{},{},{}", c + 1, classes[c], r + 1, t);
                for v in frame {
                    let _ = write!(out, ",{}", format_value(*v));
                }
                out.push('\n');
            }
        }
    }
    out
}

const PANEL_W: f64 = 240.0;
const PANEL_H: f64 = 120.0;
const PAD: f64 = 12.0;
const TITLE: f64 = 24.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plots in a `rows × classes` grid with class names as column titles.
/// Each panel is scaled to its own value range.
pub fn grid_svg(classes: &[String], grid: &[Vec<Array2<f64>>], rows: usize) -> String {
    let width = PAD + grid.len() as f64 * (PANEL_W + PAD);
    let height = TITLE + PAD + rows as f64 * (PANEL_H + PAD);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="13">"#
    );
    svg.push('\n');
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (c, column) in grid.iter().enumerate() {
        let x0 = PAD + c as f64 * (PANEL_W + PAD);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + PANEL_W / 2.0,
            TITLE - 6.0,
            escape(&classes[c])
        );
        for r in 0..rows {
            let y0 = TITLE + PAD + r as f64 * (PANEL_H + PAD);
            let _ = writeln!(
                svg,
                r##"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
            );
            let Some(values) = column.get(r) else { continue };
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let steps = values.nrows().max(2) - 1;
            for (j, channel) in values.columns().into_iter().enumerate() {
                let points: Vec<String> = channel
                    .iter()
                    .enumerate()
                    .map(|(t, v)| {
                        let x = x0 + 4.0 + (PANEL_W - 8.0) * t as f64 / steps as f64;
                        let y = y0 + PANEL_H - 4.0 - (PANEL_H - 8.0) * (v - lo) / span;
                        format!("{x:.1},{y:.1}")
                    })
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                    PALETTE[j % PALETTE.len()],
                    points.join(" ")
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
