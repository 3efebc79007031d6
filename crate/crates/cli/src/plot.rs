//! Static SVG curves of one metric against episode, one line per baseline
//! with a shaded mean ± 2 standard-error band across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::output::{read_table, OutputError};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("no input files")]
    NoInputs,
    #[error(transparent)]
    Input(#[from] OutputError),
    #[error("{path}: no column {metric:?}; available: {}", available.join(", "))]
    MissingColumn { path: PathBuf, metric: String, available: Vec<String> },
    #[error("{path}: no column \"episode\"")]
    MissingEpisode { path: PathBuf },
    #[error("metric {0:?} has no values")]
    Empty(String),
    #[error("log scale needs positive values; {metric} has {value}")]
    NonPositive { metric: String, value: f64 },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Mean curve of one baseline across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub episodes: Vec<f64>,
    pub mean: Vec<f64>,
    /// Standard error of the mean; `None` where fewer than two seeds have
    /// a value.
    pub se: Vec<Option<f64>>,
}

/// Baseline of a metrics file laid out as `<baseline>/seed_<n>/metrics.csv`;
/// otherwise the file stem.
pub fn baseline_label(path: &Path) -> String {
    let seed_dir = path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str());
    let grand = path.parent().and_then(Path::parent).and_then(|p| p.file_name()).and_then(|n| n.to_str());
    match (seed_dir, grand) {
        (Some(s), Some(g)) if s.starts_with("seed_") => g.to_string(),
        _ => path.file_stem().and_then(|n| n.to_str()).unwrap_or("run").to_string(),
    }
}

/// Reads every file and aggregates `metric` per baseline and episode.
pub fn aggregate(paths: &[PathBuf], metric: &str) -> Result<Vec<Series>, PlotError> {
    if paths.is_empty() {
        return Err(PlotError::NoInputs);
    }
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for path in paths {
        let table = read_table(path)?;
        let values = table.column(metric).ok_or_else(|| PlotError::MissingColumn {
            path: path.clone(),
            metric: metric.to_string(),
            available: table.columns.clone(),
        })?;
        let episodes = table.column("episode").ok_or_else(|| PlotError::MissingEpisode { path: path.clone() })?;
        let group = groups.entry(baseline_label(path)).or_default();
        for (ep, v) in episodes.into_iter().zip(values) {
            if let (Some(ep), Some(v)) = (ep, v) {
                group.entry(ep as u64).or_default().push(v);
            }
        }
    }
    let series: Vec<Series> = groups
        .into_iter()
        .filter(|(_, g)| !g.is_empty())
        .map(|(label, g)| {
            let mut s = Series { label, episodes: Vec::new(), mean: Vec::new(), se: Vec::new() };
            for (ep, vs) in g {
                let k = vs.len() as f64;
                let mean = vs.iter().sum::<f64>() / k;
                let se = (vs.len() >= 2).then(|| {
                    let var = vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                    (var / k).sqrt()
                });
                s.episodes.push(ep as f64);
                s.mean.push(mean);
                s.se.push(se);
            }
            s
        })
        .collect();
    if series.is_empty() {
        return Err(PlotError::Empty(metric.to_string()));
    }
    Ok(series)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Renders the series as a standalone SVG document.
pub fn render_svg(series: &[Series], metric: &str, log_scale: bool) -> Result<String, PlotError> {
    let ty = |v: f64| -> Result<f64, PlotError> {
        if !log_scale {
            return Ok(v);
        }
        if v > 0.0 {
            Ok(v.log10())
        } else {
            Err(PlotError::NonPositive { metric: metric.to_string(), value: v })
        }
    };
    // band edges in plot units; log bands are clipped at the smallest mean
    let mut curves = Vec::new();
    for s in series {
        let floor = s.mean.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut line = Vec::new();
        let mut band = Vec::new();
        for ((&x, &m), se) in s.episodes.iter().zip(&s.mean).zip(&s.se) {
            line.push((x, ty(m)?));
            if let Some(se) = se {
                let lo = m - 2.0 * se;
                let lo = if log_scale && lo <= 0.0 { floor.min(m) } else { lo };
                band.push((x, ty(lo)?, ty(m + 2.0 * se)?));
            }
        }
        curves.push((line, band));
    }

    let xs = curves.iter().flat_map(|(l, _)| l.iter().map(|p| p.0));
    // episodes span the x axis exactly; y gets a margin
    let (x0, x1) = widen(extent(xs), 0.0);
    let ys = curves.iter().flat_map(|(l, b)| l.iter().map(|p| p.1).chain(b.iter().flat_map(|p| [p.1, p.2])));
    let (y0, y1) = widen(extent(ys), 0.05);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(metric)
    );
    let _ = writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for x in nice_ticks(x0, x1, 1.0) {
        let _ = writeln!(
            w,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
            px(x.value),
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0,
            x.label(false)
        );
    }
    for y in nice_ticks(y0, y1, 0.0) {
        let _ = writeln!(
            w,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"#,
            LEFT - 5.0,
            py(y.value),
            LEFT,
            LEFT - 8.0,
            py(y.value) + 4.0,
            y.label(log_scale)
        );
    }
    let _ =
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">episode</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0);
    let ylabel = if log_scale { format!("{} (log scale)", escape(metric)) } else { escape(metric) };
    let _ = writeln!(
        w,
        r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{ylabel}</text>"#,
        TOP + ph / 2.0
    );

    for (k, (s, (line, band))) in series.iter().zip(&curves).enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !band.is_empty() {
            let pts: Vec<String> = band
                .iter()
                .map(|&(x, _, hi)| point(px(x), py(hi)))
                .chain(band.iter().rev().map(|&(x, lo, _)| point(px(x), py(lo))))
                .collect();
            let _ =
                writeln!(w, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        let pts: Vec<String> = line.iter().map(|&(x, y)| point(px(x), py(y))).collect();
        let _ = writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads, aggregates and renders `metric` from `paths` into `out`.
pub fn emit_plot(paths: &[PathBuf], metric: &str, out: &Path, log_scale: bool) -> Result<(), PlotError> {
    let series = aggregate(paths, metric)?;
    let svg = render_svg(&series, metric, log_scale)?;
    fs::write(out, svg).map_err(|source| PlotError::Write { path: out.to_path_buf(), source })
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Pads `[lo, hi]` by `frac` of its width; degenerate ranges get unit width.
fn widen((lo, hi): (f64, f64), frac: f64) -> (f64, f64) {
    if hi > lo {
        let pad = frac * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn point(x: f64, y: f64) -> String {
    format!("{x:.2},{y:.2}")
}

struct Tick {
    value: f64,
    decimals: usize,
}

impl Tick {
    fn label(&self, log_scale: bool) -> String {
        if log_scale {
            let v = 10f64.powf(self.value);
            if (1e-3..1e4).contains(&v) {
                // three significant digits
                let d = (2 - v.log10().floor() as i32).max(0) as usize;
                format!("{v:.d$}")
            } else {
                format!("{v:.2e}")
            }
        } else {
            format!("{:.*}", self.decimals, self.value)
        }
    }
}

/// Round-number ticks (1, 2 or 5 times a power of ten, at least
/// `min_step` apart) inside `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64, min_step: f64) -> Vec<Tick> {
    let raw = (hi - lo) / 4.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step =
        [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag).max(min_step);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| Tick { value: k as f64 * step, decimals }).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
