//! Log-log error plots from the per-run CSV: log10 N against log10 squared
//! error, solid median and dashed 0.1/0.9 quantiles.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use cnce_core::{quantile, ModelKind};

use crate::config::Method;
use crate::error::Result;
use crate::experiment::ErrorRecord;
use crate::persist::check_writable;
use crate::svg::{Anchor, Svg};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 440;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 470.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 380.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(log10 N, log10 median, log10 q10, log10 q90)` of the squared error,
    /// ascending in N.
    pub points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub file_name: String,
    pub title: String,
    pub series: Vec<Series>,
}

fn series(label: String, records: &[&ErrorRecord]) -> Series {
    let ns: BTreeSet<usize> = records.iter().map(|r| r.n).collect();
    let points = ns
        .into_iter()
        .filter_map(|n| {
            let sq: Vec<f64> =
                records.iter().filter(|r| r.n == n && r.sq_error > 0.0).map(|r| r.sq_error).collect();
            let q = |p| quantile(&sq, p).map(f64::log10);
            Some([(n as f64).log10(), q(0.5)?, q(0.1)?, q(0.9)?])
        })
        .collect();
    Series { label, points }
}

/// Methods that ignore `κ` are drawn from their smallest-`κ` runs only.
fn method_records(records: &[ErrorRecord], model: ModelKind, method: Method) -> Vec<&ErrorRecord> {
    let rows: Vec<&ErrorRecord> = records.iter().filter(|r| r.model == model && r.method == method).collect();
    if method.uses_kappa() {
        return rows;
    }
    let min_kappa = rows.iter().map(|r| r.kappa).min();
    rows.into_iter().filter(|r| Some(r.kappa) == min_kappa).collect()
}

/// One plot per (model, method) with a series per `κ`, and when several
/// methods are present one plot per (model, `κ`) with a series per method.
/// A record list without rows gives a single empty plot.
pub fn plots(records: &[ErrorRecord]) -> Vec<Plot> {
    if records.is_empty() {
        return vec![Plot { file_name: "empty.svg".into(), title: "no results".into(), series: Vec::new() }];
    }
    let models: BTreeSet<ModelKind> = records.iter().map(|r| r.model).collect();
    let mut out = Vec::new();
    for model in models {
        let methods: BTreeSet<Method> = records.iter().filter(|r| r.model == model).map(|r| r.method).collect();
        for &method in &methods {
            let rows = method_records(records, model, method);
            let kappas: BTreeSet<usize> = rows.iter().map(|r| r.kappa).collect();
            let series = kappas
                .into_iter()
                .map(|k| {
                    let label = if method.uses_kappa() { format!("kappa = {k}") } else { method.to_string() };
                    let sel: Vec<&ErrorRecord> = rows.iter().copied().filter(|r| r.kappa == k).collect();
                    series(label, &sel)
                })
                .collect();
            out.push(Plot { file_name: format!("{model}_{method}.svg"), title: format!("{model}: {method}"), series });
        }
        if methods.len() > 1 {
            let kappas: BTreeSet<usize> = records
                .iter()
                .filter(|r| r.model == model && r.method.uses_kappa())
                .map(|r| r.kappa)
                .collect();
            for k in kappas {
                let series = methods
                    .iter()
                    .map(|&method| {
                        let rows = method_records(records, model, method);
                        let sel: Vec<&ErrorRecord> =
                            rows.into_iter().filter(|r| !method.uses_kappa() || r.kappa == k).collect();
                        series(method.to_string(), &sel)
                    })
                    .collect();
                out.push(Plot {
                    file_name: format!("{model}_kappa{k}.svg"),
                    title: format!("{model}: kappa = {k}"),
                    series,
                });
            }
        }
    }
    out
}

/// File names [`plots`] produces for a grid over `methods` and `kappas`.
pub fn plot_file_names(model: ModelKind, methods: &[Method], kappas: &[usize]) -> Vec<String> {
    let methods: BTreeSet<Method> = methods.iter().copied().collect();
    let mut out: Vec<String> = methods.iter().map(|m| format!("{model}_{m}.svg")).collect();
    if methods.len() > 1 && methods.iter().any(|m| m.uses_kappa()) {
        let kappas: BTreeSet<usize> = kappas.iter().copied().collect();
        out.extend(kappas.iter().map(|k| format!("{model}_kappa{k}.svg")));
    }
    out
}

/// Integer decades covering `[lo, hi]`, at least one decade wide.
fn decade_range(lo: f64, hi: f64) -> (i32, i32) {
    let (a, b) = (lo.floor() as i32, hi.ceil() as i32);
    if a == b {
        (a, a + 1)
    } else {
        (a, b)
    }
}

fn power_label(k: i32) -> String {
    format!("<tspan dy=\"-6\" font-size=\"9\">{k}</tspan>")
}

pub fn render(plot: &Plot) -> String {
    let pts = plot.series.iter().flat_map(|s| &s.points);
    let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        xlo = xlo.min(p[0]);
        xhi = xhi.max(p[0]);
        ylo = ylo.min(p[1]).min(p[2]);
        yhi = yhi.max(p[1]).max(p[3]);
    }
    let (x0, x1) = if xlo.is_finite() { decade_range(xlo, xhi) } else { (3, 5) };
    let (y0, y1) = if ylo.is_finite() { decade_range(ylo, yhi) } else { (-4, 0) };
    let sx = |v: f64| LEFT + (v - x0 as f64) / (x1 - x0) as f64 * (RIGHT - LEFT);
    let sy = |v: f64| BOTTOM - (v - y0 as f64) / (y1 - y0) as f64 * (BOTTOM - TOP);

    let mut svg = Svg::new(WIDTH, HEIGHT);
    svg.text((LEFT + RIGHT) / 2.0, 24.0, Anchor::Middle, &plot.title, "");
    svg.rect(LEFT, TOP, RIGHT - LEFT, BOTTOM - TOP, "black");
    for k in x0..=x1 {
        let x = sx(k as f64);
        svg.line(x, BOTTOM, x, BOTTOM + 5.0, "black", 1.0);
        svg.text(x, BOTTOM + 20.0, Anchor::Middle, "10", &power_label(k));
    }
    for k in y0..=y1 {
        let y = sy(k as f64);
        svg.line(LEFT - 5.0, y, LEFT, y, "black", 1.0);
        svg.text(LEFT - 8.0, y + 4.0, Anchor::End, "10", &power_label(k));
    }
    svg.text((LEFT + RIGHT) / 2.0, BOTTOM + 45.0, Anchor::Middle, "N", "");
    svg.rotated_text(20.0, (TOP + BOTTOM) / 2.0, "squared error");

    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line = |c: usize| -> Vec<(f64, f64)> { s.points.iter().map(|p| (sx(p[0]), sy(p[c]))).collect() };
        svg.polyline(&line(1), color, 2.0, false);
        svg.polyline(&line(2), color, 1.0, true);
        svg.polyline(&line(3), color, 1.0, true);
        for (x, y) in line(1) {
            svg.circle(x, y, 2.5, color);
        }
    }

    let lx = RIGHT + 20.0;
    let mut ly = TOP + 10.0;
    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        svg.line(lx, ly, lx + 24.0, ly, color, 2.0);
        svg.text(lx + 30.0, ly + 4.0, Anchor::Start, &s.label, "");
        ly += 18.0;
    }
    svg.line(lx, ly, lx + 24.0, ly, "black", 2.0);
    svg.text(lx + 30.0, ly + 4.0, Anchor::Start, "median", "");
    ly += 18.0;
    svg.polyline(&[(lx, ly), (lx + 24.0, ly)], "black", 1.0, true);
    svg.text(lx + 30.0, ly + 4.0, Anchor::Start, "0.1 / 0.9 quantiles", "");
    svg.finish()
}

/// Writes every plot into `out_dir` and returns the paths in plot order.
pub fn write_report(records: &[ErrorRecord], out_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let all = plots(records);
    let paths: Vec<PathBuf> = all.iter().map(|p| out_dir.join(&p.file_name)).collect();
    for path in &paths {
        check_writable(path, force)?;
    }
    for (plot, path) in all.iter().zip(&paths) {
        fs::write(path, render(plot))?;
    }
    Ok(paths)
}
