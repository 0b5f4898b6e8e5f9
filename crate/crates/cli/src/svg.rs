//! Dependency-free SVG output: 2D scatter plots and image grids.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn color(label: usize) -> &'static str {
    PALETTE[label % PALETTE.len()]
}

/// A labeled point set drawn with one marker style.
pub struct Layer<'a> {
    pub points: &'a [[f64; 2]],
    pub labels: &'a [usize],
    pub marker: Marker,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Circle,
    Cross,
}

/// Scatter plot of all layers on shared axes. With no points the axes span [-1.5, 1.5].
pub fn scatter(title: &str, layers: &[Layer]) -> String {
    let size = 480.0;
    let pad = 40.0;
    let all = layers.iter().flat_map(|l| l.points.iter());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in all.filter(|p| p[0].is_finite() && p[1].is_finite()) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        lo = [-1.5; 2];
        hi = [1.5; 2];
    }
    // square axes around the data with a 10% margin
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
    let cx = 0.5 * (lo[0] + hi[0]);
    let cy = 0.5 * (lo[1] + hi[1]);
    let (x0, y0) = (cx - span / 2.0, cy - span / 2.0);
    let inner = size - 2.0 * pad;
    let px = |x: f64| pad + (x - x0) / span * inner;
    let py = |y: f64| size - pad - (y - y0) / span * inner;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        size / 2.0,
        escape(title)
    )
    .unwrap();
    // frame and axis lines through the origin when visible
    writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{inner}" height="{inner}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    if (x0..x0 + span).contains(&0.0) {
        let x = px(0.0);
        writeln!(
            s,
            r#"<line class="axis" x1="{x:.2}" y1="{pad}" x2="{x:.2}" y2="{}" stroke="gray"/>"#,
            size - pad
        )
        .unwrap();
    }
    if (y0..y0 + span).contains(&0.0) {
        let y = py(0.0);
        writeln!(
            s,
            r#"<line class="axis" x1="{pad}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray"/>"#,
            size - pad
        )
        .unwrap();
    }
    for (v, anchor) in [(x0, "start"), (x0 + span, "end")] {
        writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="{anchor}" font-size="10">{v:.2}</text>"#,
            px(v),
            size - pad + 14.0
        )
        .unwrap();
    }
    for v in [y0, y0 + span] {
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">{v:.2}</text>"#,
            pad - 4.0,
            py(v)
        )
        .unwrap();
    }
    for layer in layers {
        for (p, &l) in layer.points.iter().zip(layer.labels) {
            if !(p[0].is_finite() && p[1].is_finite()) {
                continue;
            }
            let (x, y) = (px(p[0]), py(p[1]));
            match layer.marker {
                Marker::Circle => writeln!(
                    s,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{}" stroke="black"/>"#,
                    color(l)
                ),
                Marker::Cross => writeln!(
                    s,
                    r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="{}" stroke-width="1.2"/>"#,
                    x - 3.0,
                    y - 3.0,
                    x + 3.0,
                    y + 3.0,
                    x - 3.0,
                    y + 3.0,
                    x + 3.0,
                    y - 3.0,
                    color(l)
                ),
            }
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Columns of generated images with their nearest dataset image underneath.
pub fn image_grid(
    title: &str,
    height: usize,
    width: usize,
    top: &[&[f64]],
    bottom: &[&[f64]],
) -> String {
    let cell = 4.0;
    let gap = 8.0;
    let img_w = width as f64 * cell;
    let img_h = height as f64 * cell;
    let cols = top.len().max(1);
    let total_w = cols as f64 * (img_w + gap) + gap;
    let total_h = 2.0 * (img_h + gap) + gap + 24.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{gap}" y="16" font-size="12">{}</text>"#,
        escape(title)
    )
    .unwrap();
    for (row, images) in [top, bottom].into_iter().enumerate() {
        for (c, img) in images.iter().enumerate() {
            let ox = gap + c as f64 * (img_w + gap);
            let oy = 24.0 + gap + row as f64 * (img_h + gap);
            for r in 0..height {
                for k in 0..width {
                    let v = img[r * width + k].clamp(0.0, 1.0);
                    let g = (v * 255.0).round() as u8;
                    writeln!(
                        s,
                        r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>"#,
                        ox + k as f64 * cell,
                        oy + r as f64 * cell
                    )
                    .unwrap();
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
