//! Minimal SVG 1.1 writer for scatter and line plots.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 40.0;

/// A labelled set of 2-D points.
pub struct Group {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Dots,
    Lines,
}

fn colour(k: usize, n: usize) -> String {
    format!("hsl({:.0},70%,45%)", 360.0 * k as f64 / n.max(1) as f64)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One `<g class="group">` per group; lines are drawn as a single polyline.
pub fn plot(title: &str, groups: &[Group], mark: Mark) -> String {
    let pts = groups.iter().flat_map(|g| g.points.iter()).filter(|p| p[0].is_finite() && p[1].is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let sx = (W - 2.0 * PAD) / (x1 - x0).max(1e-12);
    let sy = (H - 2.0 * PAD) / (y1 - y0).max(1e-12);
    let px = |p: &[f64; 2]| (PAD + (p[0] - x0) * sx, H - PAD - (p[1] - y0) * sy);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (k, g) in groups.iter().enumerate() {
        let c = colour(k, groups.len());
        let _ = writeln!(s, r#"<g class="group" data-label="{}">"#, escape(&g.label));
        match mark {
            Mark::Dots => {
                for p in &g.points {
                    let (x, y) = px(p);
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{c}"/>"#);
                }
            }
            Mark::Lines => {
                let coords: Vec<String> = g
                    .points
                    .iter()
                    .map(|p| {
                        let (x, y) = px(p);
                        format!("{x:.2},{y:.2}")
                    })
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.2"/>"#,
                    coords.join(" ")
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
