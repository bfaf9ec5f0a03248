//! Delimited review files.
//!
//! Rated files carry `user, item, rating, timestamp`; unrated files
//! `user, item, timestamp`. A header line is optional. The delimiter may be
//! longer than one character, so MovieLens `::` files load directly.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use cfrec_core::RawReview;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    CsvRated,
    CsvUnrated,
}

impl FromStr for InputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_rated" => Ok(Self::CsvRated),
            "csv_unrated" => Ok(Self::CsvUnrated),
            other => Err(CliError::Config(format!(
                "unknown input format {other:?} (expected csv_rated or csv_unrated)"
            ))),
        }
    }
}

/// Parsed reviews plus what could not be parsed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub reviews: Vec<RawReview>,
    /// 1-based line numbers of rows that failed to parse.
    pub malformed: Vec<usize>,
    pub had_header: bool,
}

impl Ingested {
    pub fn rows(&self) -> usize {
        self.reviews.len() + self.malformed.len()
    }
}

/// Tolerated share of malformed rows.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

fn parse_rating(field: &str) -> Option<u8> {
    let v: f64 = field.trim().parse().ok()?;
    if v.fract() == 0.0 && (1.0..=5.0).contains(&v) {
        Some(v as u8)
    } else {
        None
    }
}

fn parse_line(line: &str, format: InputFormat, delimiter: &str) -> Option<RawReview> {
    let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
    let (user, item, rating, ts) = match (format, fields.as_slice()) {
        (InputFormat::CsvRated, [u, i, r, t]) => (*u, *i, Some(parse_rating(r)?), *t),
        (InputFormat::CsvUnrated, [u, i, t]) => (*u, *i, None, *t),
        _ => return None,
    };
    if user.is_empty() || item.is_empty() {
        return None;
    }
    Some(RawReview {
        user: user.to_owned(),
        item: item.to_owned(),
        rating,
        timestamp: ts.parse().ok()?,
    })
}

/// Parses file contents. Fails when more than 1% of rows are malformed.
pub fn parse_reviews(text: &str, format: InputFormat, delimiter: &str) -> Result<Ingested> {
    if delimiter.is_empty() {
        return Err(CliError::Config("delimiter must not be empty".into()));
    }
    let mut out = Ingested::default();
    let mut first = true;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, format, delimiter) {
            Some(r) => out.reviews.push(r),
            None if first && line.chars().any(|c| c.is_ascii_alphabetic()) => out.had_header = true,
            None => out.malformed.push(idx + 1),
        }
        first = false;
    }
    if out.malformed.len() as f64 > MAX_MALFORMED_FRACTION * out.rows() as f64 {
        let shown: Vec<String> = out.malformed.iter().take(20).map(usize::to_string).collect();
        return Err(CliError::Data(format!(
            "{} of {} rows are malformed (limit 1%); lines {}{}",
            out.malformed.len(),
            out.rows(),
            shown.join(", "),
            if out.malformed.len() > 20 { ", ..." } else { "" }
        )));
    }
    Ok(out)
}

pub fn ingest(path: &Path, format: InputFormat, delimiter: &str) -> Result<Ingested> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    parse_reviews(&text, format, delimiter).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
