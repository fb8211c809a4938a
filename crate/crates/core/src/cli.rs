//! Command implementations behind the `histda` binary.
//!
//! Each command reads one JSON run configuration and writes fixed-name
//! artifacts into an output directory. See `docs/config.md` for the schema.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    clean, derive_features, format_timestamp, load_csv, load_feature_csv, synth_domains,
    write_feature_csv, FeatureFrame, FeatureMatrix, FeatureRecipe, SourceDurations, SplitBundle,
    SyntheticConfig, TargetDurations,
};
use crate::error::{Error, Result};
use crate::eval::{cumulative_abs_error, export_cumulative, export_series, metrics, EvalReport};
use crate::train::{grid_search, parse_bins, run_training, Grid, Mode, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SERIES_FILE: &str = "series.csv";
pub const CUMERR_FILE: &str = "cumerr.csv";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_TEXT_FILE: &str = "ablation.txt";
pub const GRID_FILE: &str = "gridsearch.json";
pub const SYNTH_SIDECAR: &str = "synthetic.json";

/// Exit codes of the binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGED: i32 = 4;
}

/// Maps a library error onto the documented exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => exit::CONFIG,
        Error::Divergence(_) => exit::DIVERGED,
        _ => exit::DATA,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Files(FileData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileData {
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default = "default_recipe")]
    pub recipe: FeatureRecipe,
    #[serde(default = "default_clip")]
    pub clip_hi: f64,
    #[serde(default)]
    pub source_durations: SourceDurations,
    /// Explicit target durations; wins over `target_location`.
    #[serde(default)]
    pub target_durations: Option<TargetDurations>,
    /// Study location 1..=10 whose durations to use.
    #[serde(default)]
    pub target_location: Option<usize>,
}

fn default_recipe() -> FeatureRecipe {
    FeatureRecipe::Default(Default::default())
}

fn default_clip() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSection {
    /// One full set of runs per seed; defaults to the run seed. `--seed`
    /// replaces the list.
    pub seeds: Vec<u64>,
    pub modes: Option<Vec<Mode>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    /// `start:end:step` or a comma-separated list.
    pub bins: String,
    pub alpha_inf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Overrides the training and synthetic seeds when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub grid: GridSection,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Loads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Files(f) = &mut cfg.data {
            f.source = base.join(&f.source);
            f.target = base.join(&f.target);
        }
        cfg.output_dir = cfg.output_dir.map(|o| base.join(o));
        if let Some(out) = &ov.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(seed) = ov.seed {
            cfg.seed = Some(seed);
            cfg.ablation.seeds = vec![seed];
        }
        cfg.apply_seed();
        cfg.check()?;
        Ok(cfg)
    }

    fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.with_seed(seed);
        }
    }

    fn with_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        if let DataSource::Synthetic(s) = &mut self.data {
            s.seed = seed;
        }
    }

    /// Validates everything that can fail before a command writes output.
    pub fn check(&self) -> Result<()> {
        self.train.validate()?;
        if self.output_dir.is_none() {
            return Err(Error::Config("no output directory (set output_dir or --out)".into()));
        }
        match &self.data {
            DataSource::Synthetic(s) => s.validate(),
            DataSource::Files(f) => {
                for p in [&f.source, &f.target] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("data file {} does not exist", p.display())));
                    }
                }
                f.target_durations()?;
                Ok(())
            }
        }
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("checked in RunConfig::check")
    }
}

impl FileData {
    fn target_durations(&self) -> Result<TargetDurations> {
        match (self.target_durations, self.target_location) {
            (Some(d), _) => Ok(d),
            (None, Some(loc)) => TargetDurations::study_location(loc)
                .ok_or_else(|| Error::Config(format!("unknown target location {loc}"))),
            (None, None) => Err(Error::Config("set target_durations or target_location".into())),
        }
    }

    fn frame(&self, path: &Path) -> Result<FeatureFrame> {
        match &self.recipe {
            FeatureRecipe::PassThrough => load_feature_csv(path),
            FeatureRecipe::Default(recipe) => {
                let raw = load_csv(path)?;
                let (cleaned, _) = clean(&raw, self.clip_hi)?;
                Ok(derive_features(&cleaned, recipe)?.0)
            }
        }
    }
}

/// Builds the splits described by a data source.
pub fn build_bundle(data: &DataSource) -> Result<SplitBundle> {
    match data {
        DataSource::Synthetic(cfg) => Ok(synth_domains(cfg)?.0),
        DataSource::Files(f) => {
            let source = f.frame(&f.source)?;
            let target = f.frame(&f.target)?;
            SplitBundle::from_frames(&source, &f.source_durations, &target, &f.target_durations()?)
        }
    }
}

fn uncalibrated(m: &FeatureMatrix) -> Vec<f64> {
    match &m.uncalibrated {
        Some(u) => u.clone(),
        None => m.x.row_iter().map(|r| r[0]).collect(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub seed: u64,
    pub best_epoch: usize,
    pub target_val: Option<EvalReport>,
    pub target_test: EvalReport,
    pub uncalibrated_test: Option<EvalReport>,
}

/// Trains on the configured data and writes the checkpoint, epoch log,
/// test report, prediction series and cumulative-error series.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let bundle = build_bundle(&cfg.data)?;
    let outcome = run_training(&bundle, &cfg.train)?;
    let test = &bundle.target_test;
    let y = test.labels().ok_or_else(|| Error::Data("target test split has no labels".into()))?;
    let pred = outcome.checkpoint.predict(&test.x)?;
    let uncal = uncalibrated(test);
    let report = TrainReport {
        mode: cfg.train.mode,
        seed: cfg.train.seed,
        best_epoch: outcome.checkpoint.epoch,
        target_val: outcome.best_val,
        target_test: metrics(y, &pred)?,
        uncalibrated_test: metrics(y, &uncal).ok(),
    };

    let out = cfg.output_dir();
    std::fs::create_dir_all(out)?;
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(out.join(EPOCHS_FILE))?);
    for e in &outcome.logs {
        serde_json::to_writer(&mut log, e)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let ts: Vec<String> = test.timestamps.iter().map(|&t| format_timestamp(t)).collect();
    export_series(&ts, y, &uncal, &pred, &out.join(SERIES_FILE))?;
    export_cumulative(&ts, &cumulative_abs_error(y, &pred)?, &out.join(CUMERR_FILE))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub r2_x100: Option<f64>,
    pub mae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub label: String,
    pub runs: Vec<AblationRun>,
    pub median_r2_x100: Option<f64>,
    pub median_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub alpha_override: Option<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, mode: Mode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Aligned text table of median R²x100 and MAE per mode.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>, p: usize| v.map_or("failed".to_string(), |v| format!("{v:.p$}"));
        let mut s = format!("{:<14}{:>10}{:>10}\n", "model", "R2x100", "MAE");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<14}{:>10}{:>10}\n",
                r.label,
                fmt(r.median_r2_x100, 1),
                fmt(r.median_mae, 2)
            ));
        }
        s
    }
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Runs every ablation mode on identical splits and seeds.
pub fn run_ablation(cfg: &RunConfig) -> Result<AblationReport> {
    let seeds = if cfg.ablation.seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        cfg.ablation.seeds.clone()
    };
    let modes = cfg.ablation.modes.clone().unwrap_or_else(|| Mode::ALL.to_vec());
    let mut runs: Vec<Vec<AblationRun>> = vec![Vec::new(); modes.len()];
    for &seed in &seeds {
        let mut seeded = cfg.clone();
        seeded.with_seed(seed);
        let bundle = build_bundle(&seeded.data)?;
        let test = &bundle.target_test;
        let y = test.labels().ok_or_else(|| Error::Data("target test split has no labels".into()))?;
        for (i, &mode) in modes.iter().enumerate() {
            let tc = TrainConfig { mode, ..seeded.train.clone() };
            let result = run_training(&bundle, &tc)
                .and_then(|o| Ok((metrics(y, &o.checkpoint.predict(&test.x)?)?, o.checkpoint.epoch)));
            runs[i].push(match result {
                Ok((r, epoch)) => AblationRun {
                    seed,
                    r2_x100: Some(r.r2_x100),
                    mae: Some(r.mae),
                    best_epoch: Some(epoch),
                    error: None,
                },
                Err(e) => AblationRun { seed, r2_x100: None, mae: None, best_epoch: None, error: Some(e.to_string()) },
            });
        }
    }
    let rows = modes
        .iter()
        .zip(runs)
        .map(|(&mode, runs)| {
            let r2: Vec<f64> = runs.iter().filter_map(|r| r.r2_x100).collect();
            let mae: Vec<f64> = runs.iter().filter_map(|r| r.mae).collect();
            AblationRow {
                mode,
                label: mode.label().to_string(),
                median_r2_x100: median(&r2),
                median_mae: median(&mae),
                runs,
            }
        })
        .collect();
    Ok(AblationReport { seeds, alpha_override: cfg.train.alpha_override, rows })
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let report = run_ablation(cfg)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(out)?;
    write_json(&out.join(ABLATION_FILE), &report)?;
    std::fs::write(out.join(ABLATION_TEXT_FILE), report.to_table())?;
    Ok(report)
}

pub fn grid_from_config(cfg: &RunConfig) -> Result<Grid> {
    let bins = if cfg.grid.bins.trim().is_empty() { vec![] } else { parse_bins(&cfg.grid.bins)? };
    let alpha_inf = cfg.grid.alpha_inf.clone();
    if bins.is_empty() && alpha_inf.is_empty() {
        return Err(Error::Config("grid search needs a nonempty grid".into()));
    }
    Ok(Grid {
        bins: if bins.is_empty() { vec![cfg.train.bins] } else { bins },
        alpha_inf: if alpha_inf.is_empty() { vec![cfg.train.alpha_inf] } else { alpha_inf },
    })
}

pub fn cmd_gridsearch(cfg: &RunConfig) -> Result<crate::train::GridReport> {
    let grid = grid_from_config(cfg)?;
    let bundle = build_bundle(&cfg.data)?;
    let report = grid_search(&bundle, &cfg.train, &grid)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(out)?;
    write_json(&out.join(GRID_FILE), &report)?;
    Ok(report)
}

/// Writes every synthetic split as a feature CSV plus a JSON sidecar holding
/// the generating config. Returns the written paths.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let DataSource::Synthetic(syn) = &cfg.data else {
        return Err(Error::Config("synth needs a synthetic data section".into()));
    };
    let (bundle, _) = synth_domains(syn)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (name, part) in bundle.parts() {
        let path = out.join(format!("{name}.csv"));
        write_feature_csv(&part.to_frame(), &path)?;
        written.push(path);
    }
    let sidecar = out.join(SYNTH_SIDECAR);
    write_json(&sidecar, syn)?;
    written.push(sidecar);
    Ok(written)
}
