//! JSON and CSV emission for simulation reports and sweeps. All floats are
//! rounded to six significant digits before they are written.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::{ModeStats, SimReport, SweepGrid};

pub const SIGNIFICANT_DIGITS: usize = 6;

pub const SWEEP_CSV_HEADER: &str = "tau_e,tau_t,stranding_rate,mean_extensions,mean_duration";
pub const SUMMARY_CSV_HEADER: &str =
    "mode,stranding_rate,se,duration_mean,duration_median,duration_max";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

fn rounded_stats(s: &ModeStats) -> ModeStats {
    ModeStats {
        stranding_rate: round_sig(s.stranding_rate),
        se: round_sig(s.se),
        duration_mean: round_sig(s.duration_mean),
        duration_median: round_sig(s.duration_median),
        duration_max: round_sig(s.duration_max),
    }
}

pub fn report_json(report: &SimReport) -> Result<String> {
    let rounded = SimReport {
        fixed: rounded_stats(&report.fixed),
        nplb: rounded_stats(&report.nplb),
        improvement_pct: round_sig(report.improvement_pct),
        ..report.clone()
    };
    Ok(serde_json::to_string_pretty(&rounded)? + "\n")
}

pub fn report_csv(report: &SimReport) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for (mode, s) in [("fixed", &report.fixed), ("nplb", &report.nplb)] {
        let _ = writeln!(
            out,
            "{mode},{},{},{},{},{}",
            round_sig(s.stranding_rate),
            round_sig(s.se),
            round_sig(s.duration_mean),
            round_sig(s.duration_median),
            round_sig(s.duration_max)
        );
    }
    out
}

pub fn histogram_csv(report: &SimReport) -> String {
    let mut out = String::from("extensions,count,share\n");
    for (k, (count, share)) in report
        .extension_histogram
        .iter()
        .zip(report.extension_shares())
        .enumerate()
    {
        let _ = writeln!(out, "{k},{count},{}", round_sig(share));
    }
    out
}

pub fn sweep_csv(grid: &SweepGrid) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for c in grid.iter() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            round_sig(c.tau_e),
            round_sig(c.tau_t),
            round_sig(c.stranding_rate),
            round_sig(c.mean_extensions),
            round_sig(c.mean_duration)
        );
    }
    out
}

pub fn sweep_json(grid: &SweepGrid) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        tau_e: f64,
        tau_t: f64,
        stranding_rate: f64,
        mean_extensions: f64,
        mean_duration: f64,
    }
    let rows: Vec<Row> = grid
        .iter()
        .map(|c| Row {
            tau_e: round_sig(c.tau_e),
            tau_t: round_sig(c.tau_t),
            stranding_rate: round_sig(c.stranding_rate),
            mean_extensions: round_sig(c.mean_extensions),
            mean_duration: round_sig(c.mean_duration),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)? + "\n")
}

pub enum Emittable<'a> {
    Report(&'a SimReport),
    Sweep(&'a SweepGrid),
}

pub fn render(item: Emittable<'_>, format: Format) -> Result<String> {
    match (item, format) {
        (Emittable::Report(r), Format::Json) => report_json(r),
        (Emittable::Report(r), Format::Csv) => Ok(report_csv(r)),
        (Emittable::Sweep(g), Format::Json) => sweep_json(g),
        (Emittable::Sweep(g), Format::Csv) => Ok(sweep_csv(g)),
    }
}

pub fn emit_report(item: Emittable<'_>, format: Format, path: &Path) -> Result<()> {
    let text = render(item, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
