//! Static SVG line charts from history and sweep CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use seiv3::train::{read_history, SweepRow, HISTORY_HEADER};
use seiv3::{Error, Result};

/// Columns charted, one SVG each.
pub const METRICS: [&str; 7] = ["train_loss", "train_acc", "val_loss", "val_acc", "precision", "recall", "f1"];

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(epoch, value)` per metric, in `METRICS` order.
    pub points: Vec<Vec<(f64, f64)>>,
}

impl Series {
    fn new(label: String) -> Self {
        Self {
            label,
            points: vec![Vec::new(); METRICS.len()],
        }
    }

    fn push(&mut self, epoch: f64, values: [f64; 7]) {
        for (pts, v) in self.points.iter_mut().zip(values) {
            if v.is_finite() {
                pts.push((epoch, v));
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.points.iter().all(Vec::is_empty)
    }
}

fn series_label(path: &Path) -> String {
    path.parent()
        .and_then(Path::file_name)
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn read_sweep(path: &Path) -> Result<Vec<Series>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut by_value: Vec<Series> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<SweepRow>().enumerate() {
        let row = row.map_err(|e| Error::Csv {
            line: i as u64 + 2,
            reason: e.to_string(),
        })?;
        let Some(epoch) = row.epoch else { continue };
        let label = format!("{}={}", row.axis, row.value);
        let slot = *index.entry(label.clone()).or_insert_with(|| {
            by_value.push(Series::new(label));
            by_value.len() - 1
        });
        let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
        by_value[slot].push(
            epoch as f64,
            [
                get(row.train_loss),
                get(row.train_acc),
                get(row.val_loss),
                get(row.val_acc),
                get(row.precision),
                get(row.recall),
                get(row.f1),
            ],
        );
    }
    Ok(by_value)
}

/// Reads one history CSV (one series, named after its directory) or one sweep CSV
/// (one series per swept value).
pub fn read_series(path: &Path) -> Result<Vec<Series>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header == HISTORY_HEADER {
        let mut s = Series::new(series_label(path));
        for r in read_history(path)? {
            s.push(
                r.epoch as f64,
                [r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.precision, r.recall, r.f1],
            );
        }
        return Ok(vec![s]);
    }
    if header.first().map(String::as_str) == Some("axis") {
        return read_sweep(path);
    }
    Err(Error::Csv {
        line: 1,
        reason: format!(
            "unrecognized header in {}; expected a history (`{}`) or sweep table",
            path.display(),
            HISTORY_HEADER.join(",")
        ),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 0.5 };
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

/// Renders one metric across all series.
pub fn render_svg(metric: &str, series: &[(String, &[(f64, f64)])]) -> String {
    let all = series.iter().flat_map(|(_, pts)| pts.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    let (y0, y1) = padded_range(y0, y1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(metric)
    );
    // axes
    let _ = writeln!(
        svg,
        r#"<path d="M{LEFT:.1},{TOP:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = y0 + t * (y1 - y0);
        let yp = sy(yv);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{yp:.1}" x2="{LEFT:.1}" y2="{yp:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"##,
            LEFT - 4.0,
            LEFT - 7.0,
            yp + 4.0
        );
        let xv = x0 + t * (x1 - x0);
        let xp = sx(xv);
        let _ = writeln!(
            svg,
            r##"<line x1="{xp:.1}" y1="{:.1}" x2="{xp:.1}" y2="{:.1}" stroke="black"/><text x="{xp:.1}" y="{:.1}" text-anchor="middle">{xv:.1}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 4.0,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(metric)
    );

    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `{metric}.svg` into `out_dir` for every charted metric. Nothing is
/// written unless every input parses and holds at least one data row.
pub fn emit_curves(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut series = Vec::new();
    for path in inputs {
        let found = read_series(path)?;
        if found.iter().all(Series::is_empty) {
            return Err(Error::InvalidArgument(format!("{} has no data rows", path.display())));
        }
        series.extend(found);
    }
    if series.is_empty() {
        return Err(Error::InvalidArgument("no input CSVs given".into()));
    }
    let charts: Vec<(PathBuf, String)> = METRICS
        .iter()
        .enumerate()
        .map(|(m, metric)| {
            let lines: Vec<(String, &[(f64, f64)])> =
                series.iter().map(|s| (s.label.clone(), s.points[m].as_slice())).collect();
            (out_dir.join(format!("{metric}.svg")), render_svg(metric, &lines))
        })
        .collect();
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (path, svg) in charts {
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_structure() {
        let pts = [(1.0, 0.5), (2.0, 0.7)];
        let svg = render_svg("val_acc", &[("a<b".into(), &pts[..])]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains(">epoch<"));
        assert_eq!(svg, render_svg("val_acc", &[("a<b".into(), &pts[..])]));
    }

    #[test]
    fn flat_series_gets_a_range() {
        let pts = [(1.0, 0.0)];
        let svg = render_svg("f1", &[("x".into(), &pts[..])]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
