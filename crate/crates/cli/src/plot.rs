//! Overlaid histograms of two posterior samples as a standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use drbayes::Error;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

/// Reads the `value` column of a draws CSV.
pub fn read_draws(path: &Path) -> Result<Vec<f64>, Error> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| Error::Schema(format!("{}: no 'value' column", path.display())))?;
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 1,
            column: "value".into(),
            message: e.to_string(),
        })?;
        let field = rec.get(col).unwrap_or("");
        let v: f64 = field.parse().map_err(|_| Error::Parse {
            row: row + 1,
            column: "value".into(),
            message: format!("'{field}' is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Validation {
                row: row + 1,
                message: "non-finite draw".into(),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Validation {
            row: 0,
            message: format!("{} contains no draws", path.display()),
        });
    }
    Ok(out)
}

/// Per-bin densities on a shared grid `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[k] += 1;
    }
    counts.iter().map(|&c| c as f64 / (values.len() as f64 * width)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders two samples as overlaid density histograms with a dashed
/// vertical line at `reference`.
pub fn render_svg(samples: [&[f64]; 2], labels: [&str; 2], reference: Option<f64>, bins: usize) -> Result<String, Error> {
    if bins == 0 {
        return Err(Error::Config("bins must be at least 1".into()));
    }
    let mut lo = samples.iter().flat_map(|s| s.iter()).cloned().fold(f64::INFINITY, f64::min);
    let mut hi = samples.iter().flat_map(|s| s.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    if let Some(r) = reference {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.02 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let hists = [histogram(samples[0], lo, hi, bins), histogram(samples[1], lo, hi, bins)];
    let ymax = hists.iter().flatten().cloned().fold(0.0, f64::max).max(1e-12) * 1.05;

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |v: f64| LEFT + (v - lo) / (hi - lo) * pw;
    let sy = |v: f64| TOP + ph - v / ymax * ph;

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    let bw = (hi - lo) / bins as f64;
    for (k, hist) in hists.iter().enumerate() {
        writeln!(w, r#"<g class="series" fill="{}" fill-opacity="0.45" stroke="{}" stroke-width="0.5">"#, COLORS[k], COLORS[k]).unwrap();
        for (b, &h) in hist.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let x0 = sx(lo + b as f64 * bw);
            let x1 = sx(lo + (b + 1) as f64 * bw);
            writeln!(w, r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#, sy(h), x1 - x0, sy(0.0) - sy(h)).unwrap();
        }
        writeln!(w, "</g>").unwrap();
    }
    // Axes with five ticks each.
    writeln!(w, r##"<g stroke="#333" stroke-width="1">"##).unwrap();
    writeln!(w, r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, TOP + ph, LEFT + pw, TOP + ph).unwrap();
    writeln!(w, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/>"#, TOP + ph).unwrap();
    writeln!(w, "</g>").unwrap();
    writeln!(w, r##"<g font-family="sans-serif" font-size="12" fill="#333">"##).unwrap();
    for t in 0..=4 {
        let xv = lo + t as f64 / 4.0 * (hi - lo);
        let yv = t as f64 / 4.0 * ymax;
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.3}</text>"#, sx(xv), TOP + ph + 18.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#, LEFT - 6.0, sy(yv) + 4.0).unwrap();
    }
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">posterior draw</text>"#, LEFT + pw / 2.0, HEIGHT - 15.0).unwrap();
    writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {:.2})">density</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    )
    .unwrap();
    writeln!(w, "</g>").unwrap();
    if let Some(r) = reference {
        writeln!(
            w,
            r#"<line class="reference" x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
            sx(r),
            sx(r),
            TOP + ph
        )
        .unwrap();
    }
    // Legend.
    let lx = LEFT + pw - 190.0;
    writeln!(w, r#"<g class="legend" font-family="sans-serif" font-size="13">"#).unwrap();
    for k in 0..2 {
        let y = TOP + 10.0 + 20.0 * k as f64;
        writeln!(w, r#"<rect x="{lx:.2}" y="{y:.2}" width="14" height="14" fill="{}" fill-opacity="0.45" stroke="{}"/>"#, COLORS[k], COLORS[k]).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 20.0, y + 12.0, escape(labels[k])).unwrap();
    }
    if reference.is_some() {
        let y = TOP + 50.0;
        writeln!(w, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6 4"/>"#, y + 7.0, lx + 14.0, y + 7.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}">reference</text>"#, lx + 20.0, y + 12.0).unwrap();
    }
    writeln!(w, "</g>").unwrap();
    writeln!(w, "</svg>").unwrap();
    Ok(s)
}

/// `|mean − reference|` for each sample.
pub fn distances(samples: [&[f64]; 2], reference: f64) -> [f64; 2] {
    [(mean(samples[0]) - reference).abs(), (mean(samples[1]) - reference).abs()]
}
