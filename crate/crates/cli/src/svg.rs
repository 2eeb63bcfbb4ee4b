//! Self-contained SVG heatmaps and median/IQR curve panels.

use std::fmt::Write;

const STOPS: [(f64, [f64; 3]); 5] = [
    (0.00, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.50, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.00, [253.0, 231.0, 37.0]),
];

fn colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = STOPS.iter().position(|s| s.0 >= t).unwrap_or(STOPS.len() - 1).max(1);
    let (t0, c0) = STOPS[k - 1];
    let (t1, c1) = STOPS[k];
    let w = (t - t0) / (t1 - t0);
    let c: Vec<u8> = (0..3).map(|i| (c0[i] + w * (c1[i] - c0[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Heatmap of `values[j][i]` (row `j` along y, column `i` along x), with the
/// first row drawn at the bottom.
pub fn heatmap(title: &str, x_range: (f64, f64), y_range: (f64, f64), values: &[Vec<f64>]) -> String {
    let ny = values.len();
    let nx = values.first().map_or(0, Vec::len);
    let (lo, hi) = finite_range(values.iter().flatten().copied());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (ox, oy, size) = (60.0, 40.0, 400.0);
    let (cw, ch) = (size / nx.max(1) as f64, size / ny.max(1) as f64);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="560" height="500" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle">{title}</text>"#, ox + size / 2.0).unwrap();
    for (j, row) in values.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                ox + i as f64 * cw,
                oy + size - (j + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                colour((v - lo) / span)
            )
            .unwrap();
        }
    }
    writeln!(s, r#"<text x="{ox}" y="{}">{:.3}</text>"#, oy + size + 16.0, x_range.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, ox + size, oy + size + 16.0, x_range.1).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, ox - 4.0, oy + size, y_range.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, ox - 4.0, oy + 10.0, y_range.1).unwrap();
    let bar_x = ox + size + 20.0;
    for k in 0..50 {
        let t = k as f64 / 49.0;
        writeln!(
            s,
            r#"<rect x="{bar_x}" y="{:.3}" width="16" height="8.2" fill="{}"/>"#,
            oy + size - (k + 1) as f64 * 8.0,
            colour(t)
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}">{:.3e}</text>"#, bar_x + 20.0, oy + size, lo).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">{:.3e}</text>"#, bar_x + 20.0, oy + 10.0, hi).unwrap();
    s.push_str("</svg>\n");
    s
}

/// One curve: per-generation (q1, median, q3).
pub struct Series {
    pub label: String,
    pub colour: &'static str,
    pub points: Vec<(f64, f64, f64)>,
}

/// Side-by-side panels of median lines with shaded interquartile bands.
pub fn curve_panels(panels: &[(&str, Vec<Series>)]) -> String {
    let (w, h, pad) = (300.0, 220.0, 50.0);
    let total_w = panels.len() as f64 * (w + pad) + pad;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{}" font-family="sans-serif" font-size="12">"#,
        h + 2.0 * pad
    )
    .unwrap();
    for (p, (title, series)) in panels.iter().enumerate() {
        let ox = pad + p as f64 * (w + pad);
        let oy = pad;
        let n = series.iter().map(|s| s.points.len()).max().unwrap_or(0);
        let (lo, hi) = finite_range(series.iter().flat_map(|s| s.points.iter().flat_map(|&(a, b, c)| [a, b, c])));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let px = |g: usize| ox + if n > 1 { g as f64 / (n - 1) as f64 * w } else { w / 2.0 };
        let py = |v: f64| oy + h - (v - lo) / span * h;
        writeln!(s, r#"<rect x="{ox}" y="{oy}" width="{w}" height="{h}" fill="none" stroke="black"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#, ox + w / 2.0, oy - 10.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, ox - 4.0, oy + h, lo).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, ox - 4.0, oy + 10.0, hi).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">generation</text>"#, ox + w / 2.0, oy + h + 30.0).unwrap();
        for (k, ser) in series.iter().enumerate() {
            let finite: Vec<(usize, (f64, f64, f64))> = ser
                .points
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, (a, b, c))| a.is_finite() && b.is_finite() && c.is_finite())
                .collect();
            if !finite.is_empty() {
                let mut band = String::new();
                for &(g, (_, _, q3)) in &finite {
                    write!(band, "{:.3},{:.3} ", px(g), py(q3)).unwrap();
                }
                for &(g, (q1, _, _)) in finite.iter().rev() {
                    write!(band, "{:.3},{:.3} ", px(g), py(q1)).unwrap();
                }
                writeln!(s, r#"<polygon points="{}" fill="{}" fill-opacity="0.25"/>"#, band.trim_end(), ser.colour).unwrap();
                let line: Vec<String> = finite.iter().map(|&(g, (_, m, _))| format!("{:.3},{:.3}", px(g), py(m))).collect();
                writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                    line.join(" "),
                    ser.colour
                )
                .unwrap();
            }
            writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
                ox + 8.0,
                oy + 16.0 + 14.0 * k as f64,
                ser.colour,
                ser.label
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
