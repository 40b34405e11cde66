use std::fmt::Write as _;
use std::path::Path;

use super::{EvalReport, MetricsError};

fn write(path: &Path, text: String) -> Result<(), MetricsError> {
    std::fs::write(path, text).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Polyline plot of the IoU-0.5 curve: recall on x, precision on y, unit axes.
pub fn pr_curve_svg(report: &EvalReport) -> String {
    const SIDE: f64 = 400.0;
    const M: f64 = 40.0;
    let pts: String = report
        .pr_curve
        .iter()
        .map(|p| format!("{:.2},{:.2} ", M + p.recall * SIDE, M + (1.0 - p.precision) * SIDE))
        .collect();
    let mut s = String::new();
    let full = SIDE + 2.0 * M;
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="{M}" y="{M}" width="{SIDE}" height="{SIDE}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, pts.trim_end()).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">recall</text>"#, M + SIDE / 2.0, full - 10.0).unwrap();
    writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">precision</text>"#,
        M + SIDE / 2.0,
        M + SIDE / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle">mAP@0.5 = {:.3}</text>"#,
        M + SIDE / 2.0,
        report.map50
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Write the curve as CSV (`confidence,recall,precision`, descending
/// confidence) and an SVG plot next to it with the `.svg` extension.
pub fn export_pr_curve(report: &EvalReport, csv_path: &Path) -> Result<(), MetricsError> {
    let mut csv = String::from("confidence,recall,precision\n");
    for p in &report.pr_curve {
        writeln!(csv, "{},{},{}", p.confidence, p.recall, p.precision).unwrap();
    }
    write(csv_path, csv)?;
    write(&csv_path.with_extension("svg"), pr_curve_svg(report))
}
