//! Self-contained SVG plots: heatmaps carry an embedded PNG raster, curves
//! are polylines on linear or logarithmic axes.

use base64::Engine;
use std::fmt::Write;

const VIRIDIS: [[f64; 3]; 5] =
    [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 70.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (VIRIDIS[i][c] + f * (VIRIDIS[i + 1][c] - VIRIDIS[i][c])).round() as u8;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, stamp: Option<&str>) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if let Some(t) = stamp {
        let _ = writeln!(s, "<!-- generated {t} -->");
    }
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", WIDTH / 2.0, escape(title));
    s
}

fn png_rgb(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().expect("png header into memory");
    w.write_image_data(data).expect("png body into memory");
    w.finish().expect("png trailer into memory");
    out
}

/// Heatmap of `values` on an `nx x ny` grid stored row by row from the
/// bottom edge; `extent = [xmin, xmax, ymin, ymax]`.
pub fn heatmap(title: &str, nx: usize, ny: usize, values: &[f64], extent: [f64; 4], stamp: Option<&str>) -> String {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut rgb = Vec::with_capacity(3 * nx * ny);
    for row in (0..ny).rev() {
        for col in 0..nx {
            rgb.extend_from_slice(&color((values[row * nx + col] - lo) / span));
        }
    }
    let png = base64::engine::general_purpose::STANDARD.encode(png_rgb(nx, ny, &rgb));

    let side = (HEIGHT - 2.0 * MARGIN).min(WIDTH - 3.0 * MARGIN);
    let (x0, y0) = (MARGIN, MARGIN);
    let mut s = open(title, stamp);
    let _ = writeln!(
        s,
        "<image x=\"{x0}\" y=\"{y0}\" width=\"{side}\" height=\"{side}\" preserveAspectRatio=\"none\" style=\"image-rendering:pixelated\" href=\"data:image/png;base64,{png}\"/>"
    );
    let _ = writeln!(s, "<rect x=\"{x0}\" y=\"{y0}\" width=\"{side}\" height=\"{side}\" fill=\"none\" stroke=\"black\"/>");
    let _ = writeln!(s, "<text x=\"{x0}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>", y0 + side + 16.0, extent[0]);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>", x0 + side, y0 + side + 16.0, extent[1]);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", x0 - 4.0, y0 + side, extent[2]);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", x0 - 4.0, y0 + 10.0, extent[3]);

    // colour bar
    let bx = x0 + side + 30.0;
    for i in 0..64 {
        let t = i as f64 / 63.0;
        let [r, g, b] = color(t);
        let y = y0 + side * (1.0 - (i + 1) as f64 / 64.0);
        let _ = writeln!(s, "<rect x=\"{bx}\" y=\"{y:.2}\" width=\"18\" height=\"{:.2}\" fill=\"rgb({r},{g},{b})\"/>", side / 64.0 + 0.5);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{:.4e}</text>", bx + 24.0, y0 + 10.0, if hi.is_finite() { hi } else { 0.0 });
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{:.4e}</text>", bx + 24.0, y0 + side, if lo.is_finite() { lo } else { 0.0 });
    s.push_str("</svg>\n");
    s
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Axes {
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

/// Line plot with markers; `note` is printed in the upper right corner.
pub fn curves(title: &str, axes: &Axes, series: &[Series], note: Option<&str>, stamp: Option<&str>) -> String {
    let tx = |x: f64| if axes.log_x { x.log10() } else { x };
    let ty = |y: f64| if axes.log_y { y.log10() } else { y };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let bounds = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (xlo, xhi) = bounds(&mut pts.iter().map(|p| p.0));
    let (ylo, yhi) = bounds(&mut pts.iter().map(|p| p.1));
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + (x - xlo) / (xhi - xlo) * pw;
    let py = |y: f64| MARGIN + ph - (y - ylo) / (yhi - ylo) * ph;

    let mut s = open(title, stamp);
    let _ = writeln!(s, "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (xlo + f * (xhi - xlo), ylo + f * (yhi - ylo));
        let label = |v: f64, log: bool| if log { format!("{:.3e}", 10f64.powf(v)) } else { format!("{v:.3e}") };
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>", px(xv), MARGIN + ph + 16.0, label(xv, axes.log_x));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", MARGIN - 4.0, py(yv) + 4.0, label(yv, axes.log_y));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", WIDTH / 2.0, HEIGHT - 20.0, escape(&axes.x_label));
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&axes.y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let col = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| (tx(x), ty(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{col}\" stroke-width=\"1.5\" points=\"{}\"/>", path.join(" "));
        for p in &path {
            let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{col}\"/>");
        }
        let ly = MARGIN + 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{col}\">{}</text>", MARGIN + 8.0, escape(&ser.label));
    }
    if let Some(n) = note {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"14\">{}</text>", MARGIN + pw - 8.0, MARGIN + 18.0, escape(n));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_embeds_a_png() {
        let s = heatmap("t", 3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, f64::NAN], [0.0, 1.0, 0.0, 1.0], None);
        assert!(s.contains("data:image/png;base64,iVBOR"));
        assert!(!s.contains("generated"));
        assert!(heatmap("t", 1, 1, &[1.0], [0.0; 4], Some("now")).contains("<!-- generated now -->"));
    }

    #[test]
    fn log_curves_skip_nonpositive_points() {
        let axes = Axes { x_label: "x".into(), y_label: "y".into(), log_x: true, log_y: true };
        let ser = Series { label: "a < b".into(), points: vec![(1.0, 1.0), (0.0, 2.0), (10.0, 100.0)] };
        let s = curves("c", &axes, &[ser], Some("slope 2"), None);
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("a &lt; b") && s.contains("slope 2"));
    }
}
