use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, Sample};
use crate::error::{Error, Result};

/// Bumped whenever the column layout changes. The header itself is the
/// version marker: `user_id,timestamp_ms,f1..fN,stress_level`.
pub const FEATURE_CSV_VERSION: u32 = 1;

pub fn feature_header(width: usize) -> Vec<String> {
    let mut h = vec!["user_id".to_owned(), "timestamp_ms".to_owned()];
    h.extend((1..=width).map(|i| format!("f{i}")));
    h.push("stress_level".to_owned());
    h
}

fn check_header(header: &csv::StringRecord, source: &str) -> Result<usize> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let width = cols.len().saturating_sub(3);
    if cols.len() < 4 || cols != feature_header(width) {
        return Err(Error::Data(format!(
            "{source}: unexpected header {:?}; expected user_id,timestamp_ms,f1..fN,stress_level",
            cols
        )));
    }
    Ok(width)
}

/// Parses a feature CSV. Rows with an empty feature cell are dropped (and
/// counted in the log); any other malformed cell is an error naming the line.
pub fn parse_feature_csv<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{source}: cannot read header: {e}")))?
        .clone();
    let width = check_header(&header, source)?;
    let mut samples = Vec::new();
    let mut dropped = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("{source} line {line}: {e}")))?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let user_id = cell(0);
        if user_id.is_empty() {
            return Err(Error::Data(format!("{source} line {line}: empty user_id")));
        }
        let timestamp_ms: i64 = cell(1).parse().map_err(|_| {
            Error::Data(format!(
                "{source} line {line}: bad timestamp_ms {:?}",
                cell(1)
            ))
        })?;
        let mut features = Vec::with_capacity(width);
        let mut missing = false;
        for c in 2..2 + width {
            let raw = cell(c);
            if raw.is_empty() {
                missing = true;
                break;
            }
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "{source} line {line}: bad value {raw:?} in column f{}",
                    c - 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{source} line {line}: non-finite value in column f{}",
                    c - 1
                )));
            }
            features.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        let level_raw = cell(2 + width);
        let stress_level: i64 = level_raw.parse().map_err(|_| {
            Error::Data(format!(
                "{source} line {line}: bad stress_level {level_raw:?}"
            ))
        })?;
        samples.push(Sample {
            user_id: user_id.to_owned(),
            timestamp_ms,
            features,
            stress_level,
        });
    }
    if dropped > 0 {
        log::warn!("{source}: dropped {dropped} rows with missing features");
    }
    Dataset::new(samples)
}

pub fn read_feature_csv(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(f, &path.display().to_string())
}

pub fn format_feature_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let width = dataset.feature_width().unwrap_or(12);
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    w.write_record(feature_header(width)).map_err(csv_err)?;
    for s in dataset.samples() {
        let mut row = Vec::with_capacity(width + 3);
        row.push(s.user_id.clone());
        row.push(s.timestamp_ms.to_string());
        row.extend(s.features.iter().map(|v| {
            if v.is_finite() {
                v.to_string()
            } else {
                String::new()
            }
        }));
        row.push(s.stress_level.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("csv write failed: {e}")))?;
    Ok(())
}

pub fn write_feature_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    format_feature_csv(dataset, f)
}
