//! SVG line charts built from sweep summary files.
//!
//! One series per value of the group-by column, x = `rho`, y = the chosen
//! metric. Per-bidder metrics that add up across the coalition (utility,
//! expenditure, win rate) are summed over bidders before averaging over
//! repetitions; everything else is averaged. When a point has more than one
//! repetition a ±2 standard error band is drawn around the mean.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Columns that identify a row rather than measure something.
const KEY_COLUMNS: [&str; 6] = ["strategy", "rho", "repetition", "bidder", "seed", "scenario"];

/// Metrics summed over bidders within a repetition.
const ADDITIVE: [&str; 3] = ["avg_utility", "avg_expenditure", "win_rate"];

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<SeriesPoint>,
}

fn metric_columns(headers: &csv::StringRecord) -> Vec<String> {
    headers
        .iter()
        .filter(|h| !KEY_COLUMNS.contains(h))
        .map(str::to_string)
        .collect()
}

/// Metric columns a summary file offers, in file order.
pub fn available_metrics<R: Read>(summary: R) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(summary);
    Ok(metric_columns(rdr.headers()?))
}

/// Aggregate a summary file into chart series.
pub fn chart_series<R: Read>(summary: R, metric: &str, group_by: &str) -> Result<Vec<Series>> {
    let mut rdr = csv::Reader::from_reader(summary);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let metrics = metric_columns(&headers);
    let m_idx = match col(metric) {
        Some(i) if metrics.iter().any(|m| m == metric) => i,
        _ => {
            return Err(Error::UnknownMetric {
                metric: metric.to_string(),
                available: metrics.join(", "),
            })
        }
    };
    let g_idx = col(group_by).ok_or_else(|| {
        Error::Config(format!(
            "unknown group-by column `{group_by}`; available columns: {}",
            headers.iter().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let rho_idx = col("rho").ok_or_else(|| Error::Summary("missing `rho` column".into()))?;
    let rep_idx = col("repetition");
    let additive = ADDITIVE.contains(&metric);

    // (group, rho bits, repetition) -> (sum, count)
    let mut cells: BTreeMap<(String, u64, String), (f64, usize)> = BTreeMap::new();
    let mut xs: BTreeMap<u64, f64> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize, what: &str| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.trim().parse::<f64>().map_err(|_| {
                Error::Summary(format!("row {}: `{what}` is not a number: `{s}`", line + 2))
            })
        };
        let cell = rec.get(m_idx).unwrap_or("").trim();
        if cell.is_empty() {
            // diagnostics columns are blank when the trace was too short
            continue;
        }
        let y = parse(m_idx, metric)?;
        let rho = parse(rho_idx, "rho")?;
        let key_x = order_key(rho);
        xs.insert(key_x, rho);
        let rep = rep_idx.and_then(|i| rec.get(i)).unwrap_or("0").to_string();
        let g = rec.get(g_idx).unwrap_or("").to_string();
        let e = cells.entry((g, key_x, rep)).or_insert((0.0, 0));
        e.0 += y;
        e.1 += 1;
    }

    // group -> x -> per-repetition values
    let mut grouped: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for ((g, x, _), (sum, n)) in cells {
        let v = if additive { sum } else { sum / n as f64 };
        grouped.entry(g).or_default().entry(x).or_default().push(v);
    }
    Ok(grouped
        .into_iter()
        .map(|(label, by_x)| Series {
            label,
            points: by_x
                .into_iter()
                .map(|(x, vals)| {
                    let n = vals.len();
                    let mean = vals.iter().sum::<f64>() / n as f64;
                    let std_error = if n > 1 {
                        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                        (var / n as f64).sqrt()
                    } else {
                        0.0
                    };
                    SeriesPoint { x: xs[&x], mean, std_error, n }
                })
                .collect(),
        })
        .collect())
}

/// Monotone map from f64 to u64 so floats can key a BTreeMap in numeric order.
fn order_key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Render a summary file as an SVG document.
pub fn render_chart<R: Read>(summary: R, metric: &str, group_by: &str) -> Result<String> {
    let series = chart_series(summary, metric, group_by)?;
    Ok(render_series(&series, metric))
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_series(series: &[Series], metric: &str) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.mean - 2.0 * p.std_error);
        y1 = y1.max(p.mean + 2.0 * p.std_error);
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="DejaVu Sans, sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        esc(metric)
    );
    // axes
    let _ = writeln!(
        out,
        r#"<path d="M{LEFT:.2},{TOP:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            out,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
            sx(xv),
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"#,
            LEFT - 5.0,
            sy(yv),
            LEFT,
            LEFT - 8.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">rho</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let banded = s.points.iter().any(|p| p.n > 1);
        if banded && s.points.len() > 1 {
            let mut d = String::new();
            for (j, p) in s.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, sx(p.x), sy(p.mean + 2.0 * p.std_error));
            }
            for p in s.points.iter().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(p.x), sy(p.mean - 2.0 * p.std_error));
            }
            let _ = writeln!(out, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, d);
        } else if banded {
            let p = &s.points[0];
            let _ = writeln!(
                out,
                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}" stroke-opacity="0.4" stroke-width="6"/>"#,
                sx(p.x),
                sy(p.mean + 2.0 * p.std_error),
                sy(p.mean - 2.0 * p.std_error)
            );
        }
        if s.points.len() > 1 {
            let coords: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.mean))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                coords.join(" ")
            );
        }
        for p in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(p.x), sy(p.mean));
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    let s = if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    };
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}
