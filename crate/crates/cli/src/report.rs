//! Summary tables and SVG box plots of the error distribution per estimator.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::experiment::{quantile, read_results, summarize, write_summary, ResultRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Fixed colour per estimator so plots are comparable across cells.
fn colour(estimator: &str) -> &'static str {
    match estimator {
        "total" => "#1f77b4",
        "surrogate" => "#ff7f0e",
        "adj_total" => "#2ca02c",
        "adj_surrogate" => "#9467bd",
        "new_treat" => "#8c564b",
        "deb_new_treat" => "#d62728",
        _ => "#7f7f7f",
    }
}

struct BoxStats {
    q1: f64,
    median: f64,
    q3: f64,
    lo: f64,
    hi: f64,
    outliers: Vec<f64>,
}

fn box_stats(mut v: Vec<f64>) -> BoxStats {
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let fence = 1.5 * (q3 - q1);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= q1 - fence && *x <= q3 + fence).collect();
    BoxStats {
        q1,
        median,
        q3,
        lo: inside.first().copied().unwrap_or(q1),
        hi: inside.last().copied().unwrap_or(q3),
        outliers: v.into_iter().filter(|x| *x < q1 - fence || *x > q3 + fence).collect(),
    }
}

/// Box plot of ℓ2 errors, one box per `(estimator, errors)` entry in the given order.
pub fn box_plot_svg(title: &str, groups: &[(String, Vec<f64>)]) -> String {
    let y_max = groups
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0_f64, f64::max)
        .max(1e-12)
        * 1.05;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let plot_w = WIDTH - LEFT - RIGHT;
    let y = |v: f64| TOP + plot_h * (1.0 - v / y_max);
    let slot = plot_w / groups.len().max(1) as f64;
    let half = (slot * 0.3).min(40.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, WIDTH / 2.0);
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.1}" y2="{yy:.2}" stroke="#dddddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/><line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        HEIGHT - BOTTOM,
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">l2 error</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let c = colour(name);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.1}" text-anchor="middle">{name}</text>"#,
            HEIGHT - BOTTOM + 18.0
        );
        if values.is_empty() {
            continue;
        }
        let b = box_stats(values.clone());
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#,
            y(b.hi),
            y(b.lo)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.35" stroke="{c}"/>"#,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="2"/>"#,
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="{c}"/>"#, y(*o));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Error samples of successful rows grouped by `(n, M)`, estimators in canonical order.
fn cells(rows: &[ResultRow]) -> Vec<((usize, usize), Vec<(String, Vec<f64>)>)> {
    summarize(rows)
        .into_iter()
        .fold(Vec::new(), |mut acc: Vec<((usize, usize), Vec<(String, Vec<f64>)>)>, s| {
            let mut errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == s.n && r.m == s.m && r.estimator == s.estimator && r.is_ok())
                .filter_map(|r| r.l2_error)
                .collect();
            errs.sort_by(f64::total_cmp);
            match acc.last_mut() {
                Some((key, groups)) if *key == (s.n, s.m) => groups.push((s.estimator, errs)),
                _ => acc.push(((s.n, s.m), vec![(s.estimator, errs)])),
            }
            acc
        })
}

/// Writes `summary.csv` and one `errors_n{n}_m{M}.svg` per cell; returns the written paths.
pub fn cmd_report(results_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_results(File::open(results_csv).map_err(CliError::io(results_csv))?)?;
    if !rows.iter().any(|r| r.is_ok() && r.l2_error.is_some()) {
        return Err(CliError::EmptyResults);
    }
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let mut written = Vec::new();
    let summary_path = out_dir.join("summary.csv");
    write_summary(
        &summarize(&rows),
        BufWriter::new(File::create(&summary_path).map_err(CliError::io(&summary_path))?),
    )?;
    written.push(summary_path);
    for ((n, m), groups) in cells(&rows) {
        let path = out_dir.join(format!("errors_n{n}_m{m}.svg"));
        let svg = box_plot_svg(&format!("n = {n}, M = {m}"), &groups);
        fs::write(&path, svg).map_err(CliError::io(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_stats_flag_outliers() {
        let b = box_stats(vec![1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!((b.lo, b.hi), (1.0, 4.0));
        assert_eq!(b.outliers, vec![100.0]);
    }

    #[test]
    fn svg_is_deterministic_and_has_one_box_per_group() {
        let groups = vec![
            ("total".to_string(), vec![0.5, 0.7, 0.6]),
            ("deb_new_treat".to_string(), vec![0.1, 0.2, 0.15]),
        ];
        let a = box_plot_svg("cell", &groups);
        assert_eq!(a, box_plot_svg("cell", &groups));
        assert_eq!(a.matches("<rect x=").count(), 2);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
    }
}
