//! Config-driven experiment harness: one run executes
//! ingest -> scale -> window -> features -> train -> evaluate and persists
//! a report whose every metric can be recomputed from the stored
//! predictions; a matrix run reuses one split across configurations,
//! emits comparison tables and a pairwise Diebold-Mariano matrix against
//! the ARIMA and dense-network baselines.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    ann_train, arima_random_walk_forecast, diebold_mariano, dm_horizon, AnnConfig, DmResult,
    StatsError,
};
use crate::data::{
    fit_scale, parse_csv, slice_windows, split_train_val, CsvSchema, DataError, DatasetSplit,
    PriceSeries, WindowPair,
};
use crate::losses::{LossError, LossKind, LossParams};
use crate::model::{
    load_checkpoint, metrics_over_windows, predict_windows, save_checkpoint, train, Checkpoint,
    CheckpointMeta, EpochLog, ModelConfig, ModelError, Seq2Seq, TrainSettings, ValMetrics,
};
use crate::pattern::{
    build_similarity_features, default_templates, PatternError, SubWindowPlan, TemplateSet,
};
use crate::synth::{generate_series, SynthConfig};
use crate::zigzag::{build_zigzag_features, ZigzagConfig, ZigzagError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("incompatible matrix configs: {0}")]
    IncompatibleConfigs(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Zigzag(#[from] ZigzagError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Process exit code: 2 config, 3 data, 4 numerical failure, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::IncompatibleConfigs(_) => 2,
            ExperimentError::Data(_) => 3,
            ExperimentError::Zigzag(_) | ExperimentError::Pattern(_) => 2,
            ExperimentError::Model(ModelError::NonFiniteLoss { .. }) => 4,
            ExperimentError::Model(ModelError::InvalidConfig(_)) => 2,
            ExperimentError::Model(_) => 4,
            ExperimentError::Loss(_) | ExperimentError::Stats(_) => 4,
            ExperimentError::Verify(_) => 4,
            ExperimentError::Io(_) | ExperimentError::Json(_) => 1,
        }
    }
}

/// Which feature channels are stacked onto the close-price input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FeatureSelection {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "zigzag")]
    Zigzag,
    #[serde(rename = "similarity")]
    Similarity,
    #[serde(rename = "zigzag+similarity")]
    ZigzagSimilarity,
}

impl FeatureSelection {
    pub fn uses_zigzag(&self) -> bool {
        matches!(self, FeatureSelection::Zigzag | FeatureSelection::ZigzagSimilarity)
    }

    pub fn uses_similarity(&self) -> bool {
        matches!(
            self,
            FeatureSelection::Similarity | FeatureSelection::ZigzagSimilarity
        )
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().as_str() {
            "none" => Some(FeatureSelection::None),
            "zigzag" => Some(FeatureSelection::Zigzag),
            "similarity" => Some(FeatureSelection::Similarity),
            "zigzag+similarity" | "similarity+zigzag" | "both" => {
                Some(FeatureSelection::ZigzagSimilarity)
            }
            _ => None,
        }
    }
}

/// Where the price series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: String,
        #[serde(default)]
        schema: CsvSchema,
        #[serde(default = "default_instrument")]
        instrument: String,
    },
    Synthetic(SynthConfig),
}

fn default_instrument() -> String {
    "UNKNOWN".into()
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub train_ratio: f64,
    pub input_length: usize,
    pub output_length: usize,
    pub stride: usize,
    pub features: FeatureSelection,
    pub zigzag: ZigzagConfig,
    pub pattern_plan: SubWindowPlan,
    /// Optional JSON file overriding the built-in 13 templates.
    pub template_file: Option<String>,
    pub model: ModelConfig,
    pub loss: LossKind,
    pub loss_params: LossParams,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            data: DataSource::default(),
            train_ratio: 0.9,
            input_length: 672,
            output_length: 16,
            stride: 16,
            features: FeatureSelection::None,
            zigzag: ZigzagConfig::default(),
            pattern_plan: SubWindowPlan::default(),
            template_file: None,
            model: ModelConfig::default(),
            loss: LossKind::Mpv,
            loss_params: LossParams::default(),
            epochs: 150,
            batch_size: 128,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |field: &str, msg: String| {
            Err(ExperimentError::Config(format!("{field}: {msg}")))
        };
        if self.name.is_empty() {
            return fail("name", "must not be empty".into());
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return fail("train_ratio", format!("{} outside (0, 1)", self.train_ratio));
        }
        if self.input_length == 0 || self.output_length == 0 || self.stride == 0 {
            return fail(
                "input_length/output_length/stride",
                "must all be >= 1".into(),
            );
        }
        if self.features.uses_similarity() {
            for &size in &self.pattern_plan.window_sizes {
                if size == 0 || !self.input_length.is_multiple_of(size) {
                    return fail(
                        "pattern_plan.window_sizes",
                        format!("size {size} does not divide input_length {}", self.input_length),
                    );
                }
            }
        }
        if self.features.uses_zigzag() {
            self.zigzag
                .validate()
                .map_err(|e| ExperimentError::Config(format!("zigzag.thresholds: {e}")))?;
        }
        self.loss_params
            .validate()
            .map_err(|e| ExperimentError::Config(format!("loss_params: {e}")))?;
        if self.epochs > 0 && self.batch_size == 0 {
            return fail("batch_size", "must be >= 1".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail("learning_rate", format!("{} must be > 0", self.learning_rate));
        }
        self.model
            .validate()
            .map_err(|e| ExperimentError::Config(format!("model: {e}")))?;
        Ok(())
    }

    /// Close price plus the selected feature blocks.
    pub fn input_channels(&self) -> usize {
        let mut channels = 1;
        if self.features.uses_zigzag() {
            channels += 3 * self.zigzag.thresholds.len();
        }
        if self.features.uses_similarity() {
            channels += 13 * self.pattern_plan.window_sizes.len();
        }
        channels
    }

    pub fn templates(&self) -> Result<TemplateSet, ExperimentError> {
        match &self.template_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                Ok(TemplateSet::from_json(&text)?)
            }
            None => Ok(default_templates()),
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            loss: self.loss,
            loss_params: self.loss_params.clone(),
        }
    }

    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(canonical.as_bytes()))
    }

    fn shares_split_with(&self, other: &ExperimentConfig) -> bool {
        self.data == other.data
            && self.train_ratio == other.train_ratio
            && self.input_length == other.input_length
            && self.output_length == other.output_length
            && self.stride == other.stride
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---------------------------------------------------------------------------
// Pipeline stages

pub fn load_series(source: &DataSource) -> Result<PriceSeries, ExperimentError> {
    match source {
        DataSource::Csv {
            path,
            schema,
            instrument,
        } => Ok(parse_csv(path, schema, instrument.clone())?),
        DataSource::Synthetic(config) => Ok(generate_series(config)),
    }
}

/// Computes the selected feature channels for every window in place.
pub fn attach_features(
    windows: &mut [WindowPair],
    config: &ExperimentConfig,
) -> Result<(), ExperimentError> {
    if config.features == FeatureSelection::None {
        return Ok(());
    }
    let templates = if config.features.uses_similarity() {
        Some(config.templates()?)
    } else {
        None
    };
    for window in windows.iter_mut() {
        let mut features = Vec::new();
        if config.features.uses_zigzag() {
            features.extend(build_zigzag_features(&window.input, &config.zigzag)?);
        }
        if let Some(templates) = &templates {
            features.extend(build_similarity_features(
                &window.input,
                &config.pattern_plan,
                templates,
            )?);
        }
        window.features = features;
    }
    Ok(())
}

/// Ingest, scale, window and split per the config; features not attached.
pub fn prepare_raw_split(config: &ExperimentConfig) -> Result<DatasetSplit, ExperimentError> {
    let series = load_series(&config.data)?;
    let transform = fit_scale(&series, config.train_ratio)?;
    let windows = slice_windows(
        &series,
        &transform,
        config.input_length,
        config.output_length,
        config.stride,
    )?;
    Ok(split_train_val(windows, config.train_ratio)?)
}

/// Full split with the config's feature channels attached.
pub fn prepare_split(config: &ExperimentConfig) -> Result<DatasetSplit, ExperimentError> {
    let mut split = prepare_raw_split(config)?;
    attach_features(&mut split.train, config)?;
    attach_features(&mut split.validation, config)?;
    Ok(split)
}

// ---------------------------------------------------------------------------
// Reports

pub const REPORT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub input_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub metrics: ValMetrics,
    pub curves: Vec<EpochLog>,
    /// Validation predictions and targets; every metric above is
    /// recomputable from these within [`REPORT_TOLERANCE`].
    pub predictions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub name: String,
    pub metrics: ValMetrics,
    pub curves: Vec<EpochLog>,
    pub predictions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmCell {
    pub statistic: f64,
    pub p_value: f64,
}

impl DmCell {
    pub fn significant_at_1pct(&self) -> bool {
        self.p_value < 0.01
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub name: String,
    pub runs: Vec<RunReport>,
    pub baselines: Vec<BaselineReport>,
    pub dm_horizon: usize,
    pub dm_names: Vec<String>,
    /// Row-major pairwise matrix; None on the diagonal and for degenerate
    /// differentials.
    pub dm_matrix: Vec<Vec<Option<DmCell>>>,
}

/// Executes one experiment. Returns the report plus the trained model's
/// checkpoint.
pub fn run_experiment(
    config: &ExperimentConfig,
) -> Result<(RunReport, Checkpoint), ExperimentError> {
    config.validate()?;
    let split = prepare_split(config)?;
    run_on_split(config, &split)
}

/// Same as [`run_experiment`] but on an already prepared split (matrix runs
/// share one split across configurations).
pub fn run_on_split(
    config: &ExperimentConfig,
    split: &DatasetSplit,
) -> Result<(RunReport, Checkpoint), ExperimentError> {
    let mut model_config = config.model.clone();
    model_config.input_channels = config.input_channels();
    model_config.output_length = config.output_length;

    let settings = config.train_settings();
    let (model, curves) = train(split, &model_config, &settings)?;
    let predictions = predict_windows(&model, &split.validation)?;
    let targets: Vec<Vec<f64>> = split.validation.iter().map(|w| w.target.clone()).collect();
    let metrics = metrics_over_windows(&predictions, &targets, config.loss_params.zigzag_threshold)?;

    let checkpoint = model.to_checkpoint(CheckpointMeta {
        epoch: settings.epochs,
        seed: settings.seed,
        loss: settings.loss.name().to_string(),
    });
    let report = RunReport {
        name: config.name.clone(),
        config: config.clone(),
        provenance: Provenance {
            config_hash: config.config_hash(),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            input_channels: model_config.input_channels,
        },
        metrics,
        curves,
        predictions,
        targets,
    };
    Ok((report, checkpoint))
}

/// Persists a run's artifacts under `dir`: report.json, checkpoint.json and
/// curves.csv.
pub fn write_run_artifacts(
    dir: impl AsRef<Path>,
    report: &RunReport,
    checkpoint: &Checkpoint,
) -> Result<(), ExperimentError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    save_checkpoint(dir.join("checkpoint.json"), checkpoint)?;
    let mut curves = Vec::new();
    write_curves_csv(&report.curves, &mut curves)?;
    std::fs::write(dir.join("curves.csv"), curves)?;
    Ok(())
}

pub fn write_curves_csv(curves: &[EpochLog], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_pvrmse,val_pvmae,val_smape")?;
    for row in curves {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.epoch, row.train_loss, row.val_pvrmse, row.val_pvmae, row.val_smape
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Matrix runs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub name: String,
    pub include_baselines: bool,
    pub configs: Vec<ExperimentConfig>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            name: "matrix".into(),
            include_baselines: true,
            configs: Vec::new(),
        }
    }
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.configs.len() < 2 {
            return Err(ExperimentError::Config(format!(
                "configs: need at least 2 configurations, got {}",
                self.configs.len()
            )));
        }
        let mut names = std::collections::BTreeSet::new();
        for config in &self.configs {
            config.validate()?;
            if !names.insert(config.name.clone()) {
                return Err(ExperimentError::Config(format!(
                    "configs: duplicate name {:?}",
                    config.name
                )));
            }
        }
        let first = &self.configs[0];
        for config in &self.configs[1..] {
            if !config.shares_split_with(first) {
                return Err(ExperimentError::IncompatibleConfigs(format!(
                    "{:?} uses different data/split settings than {:?}",
                    config.name, first.name
                )));
            }
        }
        Ok(())
    }
}

/// Per-window forecast error series feeding the DM test: one mean error per
/// validation window.
pub fn window_mean_errors(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<f64> {
    predictions
        .iter()
        .zip(targets)
        .map(|(pred, target)| {
            let n = pred.len() as f64;
            pred.iter()
                .zip(target)
                .map(|(p, t)| p - t)
                .sum::<f64>()
                / n
        })
        .collect()
}

type RunOutcome = Result<(RunReport, Checkpoint), ExperimentError>;

/// Runs every configuration against one shared split, optionally with up to
/// `jobs` worker threads, then the ARIMA and dense baselines, and finally
/// the pairwise DM matrix.
pub fn run_matrix(matrix: &MatrixConfig, jobs: usize) -> Result<MatrixReport, ExperimentError> {
    matrix.validate()?;
    let shared = &matrix.configs[0];
    let raw_split = prepare_raw_split(shared)?;

    // Per-config splits differ only in attached features.
    let jobs = jobs.max(1).min(matrix.configs.len());
    let results: Mutex<Vec<Option<RunOutcome>>> =
        Mutex::new((0..matrix.configs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= matrix.configs.len() {
                    break;
                }
                let config = &matrix.configs[index];
                let outcome = (|| {
                    let mut split = raw_split.clone();
                    attach_features(&mut split.train, config)?;
                    attach_features(&mut split.validation, config)?;
                    run_on_split(config, &split)
                })();
                results.lock().expect("no poisoned workers")[index] = Some(outcome);
            });
        }
    });
    let mut runs = Vec::with_capacity(matrix.configs.len());
    for slot in results.into_inner().expect("workers joined") {
        let (report, _checkpoint) = slot.expect("every index visited")?;
        runs.push(report);
    }

    let targets: Vec<Vec<f64>> = raw_split
        .validation
        .iter()
        .map(|w| w.target.clone())
        .collect();
    let threshold = shared.loss_params.zigzag_threshold;

    let mut baselines = Vec::new();
    if matrix.include_baselines {
        // Driftless random walk: repeat the last observed input value.
        let predictions: Vec<Vec<f64>> = raw_split
            .validation
            .iter()
            .map(|w| arima_random_walk_forecast(&w.input, shared.output_length))
            .collect::<Result<_, _>>()?;
        let metrics = metrics_over_windows(&predictions, &targets, threshold)?;
        baselines.push(BaselineReport {
            name: "arima".into(),
            metrics,
            curves: Vec::new(),
            predictions,
            targets: targets.clone(),
        });

        let ann_config = AnnConfig {
            layer_widths: vec![shared.input_length, 128, 32, shared.output_length],
        };
        let (ann, curves) = ann_train(&raw_split, &ann_config, &shared.train_settings())?;
        let predictions: Vec<Vec<f64>> = raw_split
            .validation
            .iter()
            .map(|w| ann.predict(&w.input))
            .collect::<Result<_, _>>()
            .map_err(ModelError::from)?;
        let metrics = metrics_over_windows(&predictions, &targets, threshold)?;
        baselines.push(BaselineReport {
            name: "ann".into(),
            metrics,
            curves,
            predictions,
            targets: targets.clone(),
        });
    }

    let horizon = dm_horizon(shared.output_length);
    let mut names = Vec::new();
    let mut error_series = Vec::new();
    for run in &runs {
        names.push(run.name.clone());
        error_series.push(window_mean_errors(&run.predictions, &run.targets));
    }
    for baseline in &baselines {
        names.push(baseline.name.clone());
        error_series.push(window_mean_errors(&baseline.predictions, &baseline.targets));
    }
    let dm_matrix = build_dm_matrix(&error_series, horizon);

    Ok(MatrixReport {
        name: matrix.name.clone(),
        runs,
        baselines,
        dm_horizon: horizon,
        dm_names: names,
        dm_matrix,
    })
}

fn build_dm_matrix(errors: &[Vec<f64>], horizon: usize) -> Vec<Vec<Option<DmCell>>> {
    let n = errors.len();
    let mut matrix = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if let Ok(DmResult {
                statistic, p_value, ..
            }) = diebold_mariano(&errors[i], &errors[j], horizon, false)
            {
                matrix[i][j] = Some(DmCell { statistic, p_value });
            }
        }
    }
    matrix
}

/// The comparison table: configuration, PVRMSE x 1e-3, PVMAE x 1e-3, SMAPE.
pub fn write_table_csv(report: &MatrixReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "configuration,pvrmse_x1e-3,pvmae_x1e-3,smape")?;
    let rows = report
        .runs
        .iter()
        .map(|r| (r.name.as_str(), r.metrics))
        .chain(report.baselines.iter().map(|b| (b.name.as_str(), b.metrics)));
    for (name, metrics) in rows {
        writeln!(
            out,
            "{},{},{},{}",
            name,
            metrics.pvrmse * 1e3,
            metrics.pvmae * 1e3,
            metrics.smape
        )?;
    }
    Ok(())
}

/// The pairwise DM matrix; entries carry a `*` when significant at the 0.01
/// level, the diagonal and degenerate pairs print as `-`.
pub fn write_dm_csv(report: &MatrixReport, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "model")?;
    for name in &report.dm_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (i, name) in report.dm_names.iter().enumerate() {
        write!(out, "{name}")?;
        for j in 0..report.dm_names.len() {
            match &report.dm_matrix[i][j] {
                Some(cell) => {
                    let star = if cell.significant_at_1pct() { "*" } else { "" };
                    write!(out, ",{:.4}{star}", cell.statistic)?;
                }
                None => write!(out, ",-")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_matrix_artifacts(
    dir: impl AsRef<Path>,
    report: &MatrixReport,
) -> Result<(), ExperimentError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("matrix_report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    let mut table = Vec::new();
    write_table_csv(report, &mut table)?;
    std::fs::write(dir.join("table.csv"), table)?;
    let mut dm = Vec::new();
    write_dm_csv(report, &mut dm)?;
    std::fs::write(dir.join("dm_matrix.csv"), dm)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Verification

fn check_close(label: &str, stored: f64, recomputed: f64) -> Result<(), ExperimentError> {
    if (stored - recomputed).abs() > REPORT_TOLERANCE {
        return Err(ExperimentError::Verify(format!(
            "{label}: stored {stored} vs recomputed {recomputed}"
        )));
    }
    Ok(())
}

/// Recomputes every metric of a run report from its persisted predictions
/// and targets; any drift beyond 1e-12 fails.
pub fn verify_run_report(report: &RunReport) -> Result<(), ExperimentError> {
    if report.predictions.len() != report.targets.len() || report.predictions.is_empty() {
        return Err(ExperimentError::Verify(format!(
            "{}: predictions/targets missing or mismatched",
            report.name
        )));
    }
    let metrics = metrics_over_windows(
        &report.predictions,
        &report.targets,
        report.config.loss_params.zigzag_threshold,
    )?;
    check_close(&format!("{}.rmse", report.name), report.metrics.rmse, metrics.rmse)?;
    check_close(
        &format!("{}.pvrmse", report.name),
        report.metrics.pvrmse,
        metrics.pvrmse,
    )?;
    check_close(
        &format!("{}.pvmae", report.name),
        report.metrics.pvmae,
        metrics.pvmae,
    )?;
    check_close(
        &format!("{}.smape", report.name),
        report.metrics.smape,
        metrics.smape,
    )?;
    Ok(())
}

/// Verifies every run, every baseline and every DM cell of a matrix report.
pub fn verify_matrix_report(report: &MatrixReport) -> Result<(), ExperimentError> {
    let threshold = report
        .runs
        .first()
        .map(|r| r.config.loss_params.zigzag_threshold)
        .ok_or_else(|| ExperimentError::Verify("matrix report has no runs".into()))?;
    for run in &report.runs {
        verify_run_report(run)?;
    }
    for baseline in &report.baselines {
        let metrics = metrics_over_windows(&baseline.predictions, &baseline.targets, threshold)?;
        check_close(
            &format!("{}.pvrmse", baseline.name),
            baseline.metrics.pvrmse,
            metrics.pvrmse,
        )?;
        check_close(
            &format!("{}.pvmae", baseline.name),
            baseline.metrics.pvmae,
            metrics.pvmae,
        )?;
        check_close(
            &format!("{}.smape", baseline.name),
            baseline.metrics.smape,
            metrics.smape,
        )?;
        check_close(
            &format!("{}.rmse", baseline.name),
            baseline.metrics.rmse,
            metrics.rmse,
        )?;
    }

    let mut error_series = Vec::new();
    for run in &report.runs {
        error_series.push(window_mean_errors(&run.predictions, &run.targets));
    }
    for baseline in &report.baselines {
        error_series.push(window_mean_errors(&baseline.predictions, &baseline.targets));
    }
    let recomputed = build_dm_matrix(&error_series, report.dm_horizon);
    if recomputed.len() != report.dm_matrix.len() {
        return Err(ExperimentError::Verify("dm matrix size mismatch".into()));
    }
    for (i, row) in recomputed.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            match (cell, &report.dm_matrix[i][j]) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    check_close(&format!("dm[{i}][{j}].statistic"), b.statistic, a.statistic)?;
                    check_close(&format!("dm[{i}][{j}].p_value"), b.p_value, a.p_value)?;
                }
                _ => {
                    return Err(ExperimentError::Verify(format!(
                        "dm[{i}][{j}]: presence mismatch"
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Loads either a run report or a matrix report from JSON and verifies it.
pub fn verify_report_file(path: impl AsRef<Path>) -> Result<String, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(matrix) = serde_json::from_str::<MatrixReport>(&text) {
        verify_matrix_report(&matrix)?;
        let cells = matrix.dm_names.len() * matrix.dm_names.len();
        return Ok(format!(
            "matrix report {:?}: {} runs, {} baselines, {} dm cells verified",
            matrix.name,
            matrix.runs.len(),
            matrix.baselines.len(),
            cells
        ));
    }
    let run: RunReport = serde_json::from_str(&text)?;
    verify_run_report(&run)?;
    Ok(format!("run report {:?} verified", run.name))
}

/// Metrics plus the predictions/targets they were computed from.
pub type Evaluation = (ValMetrics, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Loads a checkpoint and reruns its model over a prepared validation set.
pub fn evaluate_checkpoint(
    checkpoint_path: impl AsRef<Path>,
    config: &ExperimentConfig,
) -> Result<Evaluation, ExperimentError> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let model = Seq2Seq::from_checkpoint(&checkpoint)?;
    let split = prepare_split(config)?;
    let predictions = predict_windows(&model, &split.validation)?;
    let targets: Vec<Vec<f64>> = split.validation.iter().map(|w| w.target.clone()).collect();
    let metrics = metrics_over_windows(&predictions, &targets, config.loss_params.zigzag_threshold)?;
    Ok((metrics, predictions, targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(name: &str) -> ExperimentConfig {
        ExperimentConfig {
            name: name.into(),
            data: DataSource::Synthetic(SynthConfig {
                len: 400,
                seed: 3,
                ..SynthConfig::default()
            }),
            input_length: 48,
            output_length: 8,
            stride: 8,
            model: ModelConfig {
                hidden_size: 3,
                output_length: 8,
                ..ModelConfig::default()
            },
            epochs: 1,
            batch_size: 16,
            learning_rate: 1e-3,
            pattern_plan: SubWindowPlan {
                window_sizes: vec![48, 12],
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn defaults_follow_the_common_settings() {
        let config = ExperimentConfig::default();
        assert_eq!(config.input_length, 672);
        assert_eq!(config.output_length, 16);
        assert_eq!(config.stride, 16);
        assert_eq!(config.epochs, 150);
        assert_eq!(config.batch_size, 128);
        assert_eq!(config.learning_rate, 1e-4);
        assert_eq!(config.model.hidden_size, 128);
        assert_eq!(config.model.encoder_layers, 1);
        assert_eq!(config.model.decoder_layers, 1);
        assert_eq!(config.model.dropout_rate, 0.0);
        assert_eq!(config.model.teacher_forcing_ratio, 0.0);
        assert_eq!(config.pattern_plan.window_sizes, vec![672, 336, 96, 48, 24, 12]);
        assert_eq!(
            config.zigzag.thresholds,
            vec![0.0063, 0.007, 0.008, 0.0097, 0.012, 0.015, 0.0163, 0.0288]
        );
    }

    #[test]
    fn omitted_fields_materialize_from_json() {
        let config: ExperimentConfig = serde_json::from_str(r#"{"name": "x"}"#).unwrap();
        assert_eq!(config.epochs, 150);
        assert_eq!(config.model.hidden_size, 128);
        assert_eq!(config.input_channels(), 1);
    }

    #[test]
    fn channel_arithmetic() {
        let mut config = ExperimentConfig::default();
        assert_eq!(config.input_channels(), 1);
        config.features = FeatureSelection::Zigzag;
        assert_eq!(config.input_channels(), 1 + 24);
        config.features = FeatureSelection::Similarity;
        assert_eq!(config.input_channels(), 1 + 78);
        config.features = FeatureSelection::ZigzagSimilarity;
        assert_eq!(config.input_channels(), 103);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut config = tiny_config("bad");
        config.train_ratio = 1.5;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("train_ratio"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn incompatible_matrix_is_rejected() {
        let a = tiny_config("a");
        let mut b = tiny_config("b");
        b.stride = 4;
        let matrix = MatrixConfig {
            name: "m".into(),
            include_baselines: false,
            configs: vec![a, b],
        };
        assert!(matches!(
            matrix.validate(),
            Err(ExperimentError::IncompatibleConfigs(_))
        ));
    }

    #[test]
    fn run_report_round_trips_and_verifies() {
        let config = tiny_config("smoke");
        let (report, _checkpoint) = run_experiment(&config).unwrap();
        assert_eq!(report.curves.len(), 1);
        assert!(report.metrics.pvrmse.is_finite());
        assert!(report.metrics.smape.is_finite());
        verify_run_report(&report).unwrap();

        let json = serde_json::to_string(&report).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        verify_run_report(&back).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn tampered_report_fails_verification() {
        let config = tiny_config("tamper");
        let (mut report, _) = run_experiment(&config).unwrap();
        report.metrics.pvrmse += 1e-6;
        assert!(matches!(
            verify_run_report(&report),
            Err(ExperimentError::Verify(_))
        ));
    }

    #[test]
    fn identical_seeds_reproduce_reports_byte_for_byte() {
        let config = tiny_config("det");
        let (a, _) = run_experiment(&config).unwrap();
        let (b, _) = run_experiment(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn effective_config_in_report_reproduces_the_report() {
        // The embedded config has all defaults materialized; running it
        // again must land on the same numbers.
        let sparse: ExperimentConfig = serde_json::from_str(
            r#"{
                "name": "roundtrip",
                "data": { "kind": "synthetic", "len": 400, "seed": 3 },
                "input_length": 48,
                "output_length": 8,
                "stride": 8,
                "model": { "hidden_size": 3, "output_length": 8 },
                "epochs": 1,
                "batch_size": 16,
                "learning_rate": 0.001
            }"#,
        )
        .unwrap();
        let (report, _) = run_experiment(&sparse).unwrap();
        let (again, _) = run_experiment(&report.config).unwrap();
        assert_eq!(report.metrics, again.metrics);
        assert_eq!(report.predictions, again.predictions);
    }

    #[test]
    fn template_file_overrides_builtins() {
        let mut custom: Vec<crate::pattern::PatternTemplate> =
            crate::pattern::default_templates().templates().to_vec();
        custom[0].name = "custom-uptrend".into();
        let json = serde_json::to_string(&custom).unwrap();
        let dir = std::env::temp_dir().join("driftcast-template-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("templates.json");
        std::fs::write(&path, json).unwrap();

        let config = ExperimentConfig {
            template_file: Some(path.display().to_string()),
            ..tiny_config("templated")
        };
        let templates = config.templates().unwrap();
        assert_eq!(templates.templates()[0].name, "custom-uptrend");

        // A file violating the template invariants is rejected.
        std::fs::write(&path, "[]").unwrap();
        assert!(config.templates().is_err());
    }
}
