//! `ci` output: a 4-decimal table for the terminal and a full-precision CSV
//! that parses back to the same rows.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use mdci::ConfidenceInterval;

pub const CI_COLUMNS: [&str; 9] = [
    "label",
    "method",
    "level",
    "estimate",
    "lower",
    "upper",
    "length",
    "critical_value",
    "flags",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub label: String,
    pub method: String,
    pub level: f64,
    /// `g(θ̂)`.
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub length: f64,
    pub critical_value: Option<f64>,
    pub flags: String,
}

impl CiRow {
    pub fn new(label: &str, estimate: f64, ci: &ConfidenceInterval) -> Self {
        let mut flags = ci.flags.clone();
        if !ci.acceptance_gaps.is_empty() {
            let gaps: Vec<String> = ci.acceptance_gaps.iter().map(|(a, b)| format!("({a}, {b})")).collect();
            flags.push(format!("gaps {}", gaps.join(" ")));
        }
        if !ci.eligibility_holes.is_empty() {
            flags.push(format!("{} scanned tau outside BN1 conditions", ci.eligibility_holes.len()));
        }
        Self {
            label: label.to_string(),
            method: ci.method.to_string(),
            level: ci.level,
            estimate,
            lower: ci.lower,
            upper: ci.upper,
            length: ci.length(),
            critical_value: ci.critical_value,
            flags: flags.join("; "),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header: {0}")]
    Header(String),
}

pub fn write_ci_csv(rows: &[CiRow], w: impl Write) -> Result<(), ReportError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(CI_COLUMNS)?;
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parse a CSV written by [`write_ci_csv`].
pub fn read_ci_csv(r: impl Read) -> Result<Vec<CiRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CI_COLUMNS.iter().copied()) {
        return Err(ReportError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    Ok(rdr.deserialize().collect::<Result<Vec<CiRow>, _>>()?)
}

pub fn format_table(rows: &[CiRow]) -> String {
    let label_w = rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<label_w$}  {:<10}  {:>9}  {:>9}  {:>9}  {:>9}  {:>7}  flags\n",
        "label", "method", "estimate", "lower", "upper", "length", "crit"
    );
    for r in rows {
        let crit = r.critical_value.map(|c| format!("{c:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<label_w$}  {:<10}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}  {}\n",
            r.label, r.method, r.estimate, r.lower, r.upper, r.length, crit, r.flags
        ));
    }
    out
}
