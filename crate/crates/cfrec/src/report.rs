//! Metric report files: JSON and an aligned percentage table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cfrec_core::MetricsReport;

use crate::error::{CliError, Result};

/// One row per metric, one column per K, values in percent with two decimals.
pub fn render_table(title: &str, report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "{title}  (users evaluated: {}, skipped: {})", report.evaluated, report.skipped).unwrap();
    let mut header = format!("{:<10}", "metric");
    for k in &report.ks {
        header.push_str(&format!("{:>9}", format!("@{k}")));
    }
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();
    type Getter = fn(&cfrec_core::eval::AtK) -> f64;
    let rows: [(&str, Getter); 4] = [
        ("Precision", |m| m.precision),
        ("Recall", |m| m.recall),
        ("nDCG", |m| m.ndcg),
        ("MRR", |m| m.mrr),
    ];
    for (name, get) in rows {
        let mut line = format!("{name:<10}");
        for m in &report.aggregate {
            line.push_str(&format!("{:>9.2}", 100.0 * get(m)));
        }
        writeln!(out, "{line}").unwrap();
    }
    out
}

pub fn to_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// Writes `<stem>.json` and `<stem>.txt` into `dir`.
pub fn write_report(dir: &Path, stem: &str, title: &str, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, to_json(report)).map_err(|e| CliError::io(&json, e))?;
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, render_table(title, report)).map_err(|e| CliError::io(&txt, e))?;
    Ok(())
}
