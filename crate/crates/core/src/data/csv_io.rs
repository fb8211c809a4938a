use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{FeatureFrame, SensorFrame, SensorRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const SENSOR_HEADER: [&str; 6] =
    ["timestamp", "pm25_lcs", "pm10_lcs", "temperature", "humidity", "ref_pm25"];

const NAIVE_FORMATS: [&str; 4] =
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

/// Parses an ISO-8601 timestamp into Unix seconds. Naive times are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc().timestamp())
}

pub fn format_timestamp(secs: i64) -> String {
    match DateTime::from_timestamp(secs, 0) {
        Some(t) => t.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => secs.to_string(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn parse_cell(s: &str) -> std::result::Result<Option<f64>, ()> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

/// Reads a sensor CSV. Unparseable rows and rows whose timestamp does not
/// increase are skipped and counted in [`SensorFrame::malformed_rows`].
pub fn load_csv(path: &Path) -> Result<SensorFrame> {
    let mut rdr = reader(path)?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
    if header != SENSOR_HEADER {
        return Err(Error::Data(format!(
            "{}: header {:?} does not match {:?}",
            path.display(),
            header,
            SENSOR_HEADER
        )));
    }
    let mut frame = SensorFrame::default();
    let mut last_ts = i64::MIN;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let parsed = (|| {
            if rec.len() != SENSOR_HEADER.len() {
                return None;
            }
            let timestamp = parse_timestamp(&rec[0])?;
            let mut vals = [None; 5];
            for (i, v) in vals.iter_mut().enumerate() {
                *v = parse_cell(&rec[i + 1]).ok()?;
            }
            Some(SensorRecord {
                timestamp,
                pm25_lcs: vals[0],
                pm10_lcs: vals[1],
                temperature: vals[2],
                humidity: vals[3],
                ref_pm25: vals[4],
            })
        })();
        match parsed {
            Some(r) if r.timestamp > last_ts => {
                last_ts = r.timestamp;
                frame.records.push(r);
            }
            _ => frame.malformed_rows += 1,
        }
    }
    Ok(frame)
}

/// Reads a precomputed feature CSV: `timestamp,<features...>,ref_pm25`.
pub fn load_feature_csv(path: &Path) -> Result<FeatureFrame> {
    let mut rdr = reader(path)?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
    let n = header.len();
    if n < 3 || header[0] != "timestamp" || header[n - 1] != "ref_pm25" {
        return Err(Error::Data(format!(
            "{}: feature header must be timestamp,<features...>,ref_pm25",
            path.display()
        )));
    }
    let names: Vec<String> = header[1..n - 1].to_vec();
    let d = names.len();
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut last_ts = i64::MIN;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::Data(format!("{}: malformed feature row {}", path.display(), line + 2));
        if rec.len() != n {
            return Err(bad());
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(bad)?;
        if ts <= last_ts {
            return Err(bad());
        }
        last_ts = ts;
        for i in 1..=d {
            data.push(parse_cell(&rec[i]).ok().flatten().ok_or_else(bad)?);
        }
        labels.push(parse_cell(&rec[n - 1]).map_err(|_| bad())?);
        timestamps.push(ts);
    }
    let x = Matrix::from_vec(timestamps.len(), d, data)?;
    FeatureFrame::new(names, timestamps, x, labels)
}

/// Writes a feature CSV readable by [`load_feature_csv`]. Values are printed in
/// shortest round-trip form.
pub fn write_feature_csv(frame: &FeatureFrame, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("timestamp");
    for n in &frame.names {
        out.push(',');
        out.push_str(n);
    }
    out.push_str(",ref_pm25\n");
    for (i, row) in frame.x.row_iter().enumerate() {
        out.push_str(&format_timestamp(frame.timestamps[i]));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        match frame.labels[i] {
            Some(y) => out.push_str(&format!(",{y}\n")),
            None => out.push_str(",\n"),
        }
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}
