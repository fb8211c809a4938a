//! Sensor data ingestion, feature derivation, scaling and splitting, plus a
//! synthetic source/target generator with a known ground truth.

mod csv_io;
mod features;
mod scaler;
mod split;
mod synth;

pub use csv_io::{
    format_timestamp, load_csv, load_feature_csv, parse_timestamp, write_feature_csv,
    SENSOR_HEADER,
};
pub use features::{clean, derive_features, CleanReport, DefaultRecipe, FeatureRecipe};
pub use scaler::{StandardScaler, STD_FLOOR};
pub use split::{chronological_split, SourceDurations, Span, SplitBundle, TargetDurations};
pub use synth::{synth_domains, FunctionFamily, SyntheticConfig, SyntheticCounts, SyntheticOracle};

use crate::error::{dim_err, Result};
use crate::matrix::Matrix;

/// One hourly reading from a co-located low-cost sensor and reference monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecord {
    /// Unix seconds, UTC.
    pub timestamp: i64,
    pub pm25_lcs: Option<f64>,
    pub pm10_lcs: Option<f64>,
    pub temperature: Option<f64>,
    pub humidity: Option<f64>,
    pub ref_pm25: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorFrame {
    pub records: Vec<SensorRecord>,
    /// Rows skipped while parsing.
    pub malformed_rows: usize,
}

impl SensorFrame {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Feature rows with per-row optional labels, before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub names: Vec<String>,
    pub timestamps: Vec<i64>,
    pub x: Matrix,
    pub labels: Vec<Option<f64>>,
    /// Raw low-cost PM2.5 reading per row, when known.
    pub uncalibrated: Option<Vec<f64>>,
}

impl FeatureFrame {
    pub fn new(
        names: Vec<String>,
        timestamps: Vec<i64>,
        x: Matrix,
        labels: Vec<Option<f64>>,
    ) -> Result<Self> {
        if names.len() != x.cols() {
            return dim_err(format!("{} feature names for {} columns", names.len(), x.cols()));
        }
        if timestamps.len() != x.rows() || labels.len() != x.rows() {
            return dim_err("timestamps, labels and rows disagree");
        }
        Ok(Self { names, timestamps, x, labels, uncalibrated: None })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// Features of one split; `y` is absent for unlabeled data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub timestamps: Vec<i64>,
    pub x: Matrix,
    pub y: Option<Vec<f64>>,
    pub uncalibrated: Option<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, timestamps: Vec<i64>, x: Matrix, y: Option<Vec<f64>>) -> Result<Self> {
        if names.len() != x.cols() {
            return dim_err(format!("{} feature names for {} columns", names.len(), x.cols()));
        }
        if timestamps.len() != x.rows() {
            return dim_err("timestamps and rows disagree");
        }
        if let Some(y) = &y {
            if y.len() != x.rows() {
                return dim_err(format!("{} labels for {} rows", y.len(), x.rows()));
            }
        }
        Ok(Self { names, timestamps, x, y, uncalibrated: None })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    /// Same rows with features replaced, e.g. after scaling.
    pub fn with_x(&self, x: Matrix) -> Result<Self> {
        if x.shape() != self.x.shape() {
            return dim_err("replacement features change the shape");
        }
        Ok(Self { x, ..self.clone() })
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            x: self.x.select_rows(idx),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            uncalibrated: self.uncalibrated.as_ref().map(|u| idx.iter().map(|&i| u[i]).collect()),
        }
    }

    /// Rows as a frame with every label present (or absent).
    pub fn to_frame(&self) -> FeatureFrame {
        FeatureFrame {
            names: self.names.clone(),
            timestamps: self.timestamps.clone(),
            x: self.x.clone(),
            labels: match &self.y {
                Some(y) => y.iter().map(|&v| Some(v)).collect(),
                None => vec![None; self.len()],
            },
            uncalibrated: self.uncalibrated.clone(),
        }
    }
}
