//! SVG rendering of a labeled match set over its image-1 positions.

use std::fmt::Write as _;

use planemerge_core::refinement::delaunay_triangulate;
use planemerge_core::Correspondence;

pub const OUTLIER_COLOR: &str = "#808080";

const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf",
];

/// Color of a label: a fixed palette, then golden-angle hues.
pub fn label_color(label: usize) -> String {
    if let Some(c) = PALETTE.get(label) {
        return c.to_string();
    }
    let h = (label as f64 * 137.507_764) % 360.0;
    let (s, l) = (0.65, 0.5);
    let c = (1.0 - (2.0 * l - 1.0f64).abs()) * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let byte = |v: f64| ((v + m) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

/// Points colored by label; Delaunay edges whose ends share a label are
/// drawn in that label's color. Outliers are gray and never joined.
pub fn render(matches: &[Correspondence], labels: &[Option<usize>], size: [u32; 2]) -> String {
    let [w, h] = size;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##);
    if let Ok(graph) = delaunay_triangulate(matches) {
        let _ = writeln!(out, r#"<g stroke-width="1">"#);
        for &(a, b) in graph.edges() {
            if let (Some(la), Some(lb)) = (labels[a], labels[b]) {
                if la == lb {
                    let (p, q) = (matches[a].x, matches[b].x);
                    let _ = writeln!(
                        out,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}"/>"#,
                        p.x,
                        p.y,
                        q.x,
                        q.y,
                        label_color(la)
                    );
                }
            }
        }
        let _ = writeln!(out, "</g>");
    }
    let _ = writeln!(out, r#"<g stroke-width="0.5">"#);
    for (c, l) in matches.iter().zip(labels) {
        let color = l.map_or_else(|| OUTLIER_COLOR.to_string(), label_color);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" stroke="{color}"/>"#,
            c.x.x, c.x.y
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}
