//! Line charts (log-scale y) rendered straight to SVG text, so the bytes
//! depend on nothing but the CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::bounds::{read_crlb_csv, BoundKind, CRLB_HEADER};
use super::sweep::{read_sweep_csv, SWEEP_HEADER};
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone)]
struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
}

/// One series per label, in order of first appearance, points sorted by x.
fn group(rows: impl Iterator<Item = (String, f64, f64)>) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for (label, x, y) in rows {
        match out.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, y)),
            None => out.push(Series {
                label,
                points: vec![(x, y)],
            }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// Most frequent value; the smallest wins a tie.
fn modal(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().take_while(|&&x| x == v[i]).count();
        if best.is_none_or(|(_, n)| j > n) {
            best = Some((v[i], j));
        }
        i += j;
    }
    best.map(|(x, _)| x)
}

fn y_range(charts: &Chart) -> (f64, f64) {
    let ys = charts
        .series
        .iter()
        .flat_map(|s| &s.points)
        .map(|p| p.1)
        .filter(|y| y.is_finite() && *y > 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in ys {
        lo = lo.min(y.log10());
        hi = hi.max(y.log10());
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn render(chart: &Chart) -> String {
    let xs: Vec<f64> = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let mut ticks = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let (x0, x1) = match (ticks.first(), ticks.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5 * a.abs().max(1.0), a + 0.5 * a.abs().max(1.0)),
        _ => (0.0, 1.0),
    };
    let (y0, y1) = y_range(chart);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y.log10() - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        chart.title
    );
    // decade grid
    let mut d = y0 as i32;
    while d <= y1 as i32 {
        let y = TOP + ph - (d as f64 - y0) / (y1 - y0) * ph;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
        d += 1;
    }
    for &t in &ticks {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#eee"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            format_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0,
        chart.x_label
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        chart.y_label
    );
    for (i, series) in chart.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|p| p.1.is_finite() && p.1 > 0.0)
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for p in &pts {
                let (x, y) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            series.label
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() || t == "-" {
        "0".into()
    } else {
        t.to_string()
    }
}

/// Plot files (name, SVG text) for a sweep or bound CSV.
pub fn render_plots(csv_text: &str) -> Result<Vec<(String, String)>> {
    let header = csv_text.lines().next().unwrap_or("").trim();
    let (kind, y_label, rows): (&str, &str, Vec<(String, f64, f64, f64)>) = if header == SWEEP_HEADER {
        let rows = read_sweep_csv(csv_text.as_bytes())?;
        (
            "rmse",
            "RMSE (m)",
            rows.into_iter()
                .map(|r| (r.method.to_string(), r.sigma_theta, r.sigma_tau, r.rmse))
                .collect(),
        )
    } else if header == CRLB_HEADER {
        let rows = read_crlb_csv(csv_text.as_bytes())?;
        (
            "crlb",
            "trace CRLB (m²)",
            rows.into_iter()
                .map(|r| {
                    let label = match r.bound {
                        BoundKind::ClosedForm => r.method.to_string(),
                        BoundKind::MonteCarlo => format!("{} (mc)", r.method),
                    };
                    (label, r.sigma_theta, r.sigma_tau, r.trace_crlb)
                })
                .collect(),
        )
    } else if header.is_empty() {
        return Err(Error::NoData("empty CSV".into()));
    } else {
        return Err(Error::parse(1, format!("unrecognized header '{header}'")));
    };

    let fixed_tau = modal(rows.iter().map(|r| r.2)).expect("rows are non-empty");
    let fixed_theta = modal(rows.iter().map(|r| r.1)).expect("rows are non-empty");
    let angle = Chart {
        title: format!("{} vs angle error (σ_τ = {} ns)", kind.to_uppercase(), format_tick(fixed_tau * 1e9)),
        x_label: "σ_θ (rad)".into(),
        y_label: y_label.into(),
        series: group(
            rows.iter()
                .filter(|r| r.2 == fixed_tau)
                .map(|r| (r.0.clone(), r.1, r.3)),
        ),
    };
    let delay = Chart {
        title: format!("{} vs delay error (σ_θ = {} rad)", kind.to_uppercase(), format_tick(fixed_theta)),
        x_label: "σ_τ (ns)".into(),
        y_label: y_label.into(),
        series: group(
            rows.iter()
                .filter(|r| r.1 == fixed_theta)
                .map(|r| (r.0.clone(), r.2 * 1e9, r.3)),
        ),
    };
    Ok(vec![
        (format!("{kind}_vs_sigma_theta.svg"), render(&angle)),
        (format!("{kind}_vs_sigma_tau.svg"), render(&delay)),
    ])
}

/// Render the charts of `csv_path` into `out_dir`.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(csv_path)?;
    let plots = render_plots(&text)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(plots.len());
    for (name, svg) in plots {
        let p = out_dir.join(name);
        std::fs::write(&p, svg)?;
        written.push(p);
    }
    Ok(written)
}
