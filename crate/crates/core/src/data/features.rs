use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{FeatureFrame, SensorFrame, SensorRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub dropped_missing: usize,
    pub dropped_out_of_range: usize,
}

/// Drops rows with a missing raw signal, and rows whose PM readings (sensor or
/// reference) fall outside `[0, clip_hi]`. Missing reference values are kept.
pub fn clean(frame: &SensorFrame, clip_hi: f64) -> Result<(SensorFrame, CleanReport)> {
    if !(clip_hi > 0.0) {
        return Err(Error::Config(format!("clip ceiling must be positive, got {clip_hi}")));
    }
    let mut report = CleanReport::default();
    let in_range = |v: f64| (0.0..=clip_hi).contains(&v);
    let records = frame
        .records
        .iter()
        .filter(|r| {
            let (Some(pm25), Some(pm10), Some(_), Some(_)) =
                (r.pm25_lcs, r.pm10_lcs, r.temperature, r.humidity)
            else {
                report.dropped_missing += 1;
                return false;
            };
            if !in_range(pm25) || !in_range(pm10) || r.ref_pm25.is_some_and(|y| !in_range(y)) {
                report.dropped_out_of_range += 1;
                return false;
            }
            true
        })
        .cloned()
        .collect();
    Ok((SensorFrame { records, malformed_rows: frame.malformed_rows }, report))
}

/// Derived-feature recipe applied to cleaned sensor frames.
///
/// Emits the 4 raw signals, their trailing means over each window, the four
/// PM x meteorology products, the PM2.5/PM10 ratio and the hour of day as a
/// sine/cosine pair. With the default windows that is 4 + 16 + 4 + 1 + 2 = 27.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefaultRecipe {
    /// Trailing window lengths in hours.
    pub windows: Vec<u32>,
    pub ratio_eps: f64,
}

impl Default for DefaultRecipe {
    fn default() -> Self {
        Self { windows: vec![3, 6, 12, 24], ratio_eps: 1e-3 }
    }
}

/// How model inputs are obtained from a data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureRecipe {
    /// Sensor CSV in, [`DefaultRecipe`] features out.
    Default(DefaultRecipe),
    /// Feature CSV with precomputed columns, used as is.
    PassThrough,
}

const RAW: [&str; 4] = ["pm25_lcs", "pm10_lcs", "temperature", "humidity"];

fn raw(r: &SensorRecord) -> Option<[f64; 4]> {
    Some([r.pm25_lcs?, r.pm10_lcs?, r.temperature?, r.humidity?])
}

impl DefaultRecipe {
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = RAW.iter().map(|s| s.to_string()).collect();
        for w in &self.windows {
            for s in RAW {
                names.push(format!("{s}_mean_{w}h"));
            }
        }
        names.extend(
            ["pm25_x_humidity", "pm25_x_temperature", "pm10_x_humidity", "pm10_x_temperature"]
                .map(String::from),
        );
        names.push("pm25_pm10_ratio".into());
        names.push("hour_sin".into());
        names.push("hour_cos".into());
        names
    }
}

/// Applies `recipe` to a cleaned frame.
///
/// Rows without a full longest window of history since the first record are
/// dropped; the count is returned alongside the features. Windows are in
/// wall-clock hours, so gaps left by cleaning shrink a window's row count.
pub fn derive_features(frame: &SensorFrame, recipe: &DefaultRecipe) -> Result<(FeatureFrame, usize)> {
    if recipe.windows.contains(&0) {
        return Err(Error::Config("feature windows must be at least one hour".into()));
    }
    let rows: Vec<(i64, [f64; 4], Option<f64>)> = frame
        .records
        .iter()
        .map(|r| {
            raw(r)
                .map(|v| (r.timestamp, v, r.ref_pm25))
                .ok_or_else(|| Error::Data("derive_features needs a cleaned frame".into()))
        })
        .collect::<Result<_>>()?;
    let names = recipe.feature_names();
    let max_w = recipe.windows.iter().copied().max().unwrap_or(1) as i64;
    let start = rows.first().map_or(0, |r| r.0);

    let mut data = Vec::new();
    let mut timestamps = Vec::new();
    let mut labels = Vec::new();
    let mut uncal = Vec::new();
    let mut dropped = 0;
    for (i, &(ts, v, y)) in rows.iter().enumerate() {
        if ts - start < (max_w - 1) * 3600 {
            dropped += 1;
            continue;
        }
        data.extend_from_slice(&v);
        for &w in &recipe.windows {
            let from = ts - w as i64 * 3600;
            let mut sums = [0.0; 4];
            let mut n = 0usize;
            for r in rows[..=i].iter().rev().take_while(|r| r.0 > from) {
                for (s, x) in sums.iter_mut().zip(&r.1) {
                    *s += x;
                }
                n += 1;
            }
            data.extend(sums.iter().map(|s| s / n as f64));
        }
        let [pm25, pm10, temp, hum] = v;
        data.extend_from_slice(&[pm25 * hum, pm25 * temp, pm10 * hum, pm10 * temp]);
        data.push(pm25 / pm10.max(recipe.ratio_eps));
        let hour = ts.rem_euclid(86_400) as f64 / 3600.0;
        data.push((2.0 * PI * hour / 24.0).sin());
        data.push((2.0 * PI * hour / 24.0).cos());
        timestamps.push(ts);
        labels.push(y);
        uncal.push(pm25);
    }
    let x = Matrix::from_vec(timestamps.len(), names.len(), data)?;
    let mut out = FeatureFrame::new(names, timestamps, x, labels)?;
    out.uncalibrated = Some(uncal);
    Ok((out, dropped))
}
