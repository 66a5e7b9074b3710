//! `driftcast` — the experiment driver. Subcommands cover the pipeline
//! end to end: ingest and validate data, inspect feature channels, train,
//! evaluate checkpoints, run comparison matrices with baselines and DM
//! tests, forecast ahead, and re-verify persisted reports.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
//! failure. `DRIFTCAST_LOG` selects the log level (error|warn|info|debug).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use driftcast_core::baselines::{ann_train, arima_random_walk_forecast, AnnConfig};
use driftcast_core::data::fit_scale;
use driftcast_core::experiment::{
    attach_features, evaluate_checkpoint, load_series, prepare_raw_split, run_experiment,
    run_matrix, verify_report_file, write_curves_csv, write_dm_csv, write_matrix_artifacts,
    write_run_artifacts, write_table_csv, ExperimentConfig, ExperimentError, MatrixConfig,
};
use driftcast_core::model::{load_checkpoint, metrics_over_windows, Seq2Seq};
use driftcast_core::synth::write_csv;

#[derive(Parser)]
#[command(
    name = "driftcast",
    version,
    about = "Non-stationary series forecasting: pattern features, attention seq2seq, peak/valley metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the configured data source; print a summary and
    /// optionally write the series as canonical OHLCV CSV.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Write the validated series as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the configured feature channels for one window and emit
    /// them as CSV (one row per channel).
    Features {
        #[arg(long)]
        config: PathBuf,
        /// Index of the window to featurize.
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train per the config; writes report.json, checkpoint.json and
    /// curves.csv into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the config's validation split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a matrix of configurations sharing one split; emits the
    /// comparison table, the DM matrix and the combined report.
    Compare {
        /// Matrix config file (a JSON object with a `configs` array).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for independent configurations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the ARIMA persistence and dense-network baselines on the
    /// config's split.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast the steps following the end of the series with a trained
    /// checkpoint; prints scaled and raw price forecasts.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute every metric of a persisted report from its stored
    /// predictions; fails (exit 4) on any drift beyond 1e-12.
    VerifyReport {
        #[arg(long)]
        report: PathBuf,
    },
}

fn log_level() -> u8 {
    match std::env::var("DRIFTCAST_LOG").as_deref() {
        Ok("error") => 0,
        Ok("warn") => 1,
        Ok("debug") => 3,
        _ => 2,
    }
}

fn info(message: impl AsRef<str>) {
    if log_level() >= 2 {
        eprintln!("[driftcast] {}", message.as_ref());
    }
}

fn debug(message: impl AsRef<str>) {
    if log_level() >= 3 {
        eprintln!("[driftcast:debug] {}", message.as_ref());
    }
}

fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn load_matrix_config(path: &Path) -> Result<MatrixConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let matrix: MatrixConfig = serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    matrix.validate()?;
    Ok(matrix)
}

fn run(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Ingest { config, out } => {
            let config = load_experiment_config(&config)?;
            let series = load_series(&config.data)?;
            let transform = fit_scale(&series, config.train_ratio)?;
            let first = series.records().first().expect("non-empty");
            let last = series.records().last().expect("non-empty");
            println!(
                "instrument {}  records {}  span {} .. {}",
                series.instrument,
                series.len(),
                first.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
                last.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            );
            println!("close scale fitted on training prefix: {transform}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("series.csv");
                let mut file = std::fs::File::create(&path)?;
                write_csv(&series, &mut file)?;
                info(format!("wrote {}", path.display()));
            }
            Ok(())
        }
        Command::Features { config, window, out } => {
            let config = load_experiment_config(&config)?;
            let split = prepare_raw_split(&config)?;
            let mut windows: Vec<_> = split.train.into_iter().chain(split.validation).collect();
            if window >= windows.len() {
                return Err(ExperimentError::Config(format!(
                    "window: index {window} out of range ({} windows)",
                    windows.len()
                )));
            }
            let mut selected = windows.swap_remove(window);
            attach_features(std::slice::from_mut(&mut selected), &config)?;
            debug(format!(
                "window {window}: {} feature channels over {} steps",
                selected.features.len(),
                selected.input.len()
            ));
            let mut buffer = Vec::new();
            writeln!(buffer, "channel,values...").expect("vec write");
            write_channel(&mut buffer, "close", &selected.input);
            for (i, channel) in selected.features.iter().enumerate() {
                write_channel(&mut buffer, &format!("feature_{i}"), channel);
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join(format!("features_window_{window}.csv"));
                    std::fs::write(&path, buffer)?;
                    info(format!("wrote {}", path.display()));
                }
                None => {
                    std::io::stdout().write_all(&buffer)?;
                }
            }
            Ok(())
        }
        Command::Train { config, seed, out } => {
            let mut config = load_experiment_config(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            info(format!(
                "training {:?}: {} epochs, {} channels, seed {}",
                config.name,
                config.epochs,
                config.input_channels(),
                config.seed
            ));
            let (report, checkpoint) = run_experiment(&config)?;
            let dir = out.join(&config.name);
            write_run_artifacts(&dir, &report, &checkpoint)?;
            println!(
                "{}: pvrmse {:.6e}  pvmae {:.6e}  smape {:.4}  rmse {:.6e}",
                report.name,
                report.metrics.pvrmse,
                report.metrics.pvmae,
                report.metrics.smape,
                report.metrics.rmse
            );
            info(format!("artifacts in {}", dir.display()));
            Ok(())
        }
        Command::Evaluate { config, checkpoint, out } => {
            let config = load_experiment_config(&config)?;
            let (metrics, predictions, targets) = evaluate_checkpoint(&checkpoint, &config)?;
            println!(
                "pvrmse {:.6e}  pvmae {:.6e}  smape {:.4}  rmse {:.6e}  ({} validation windows)",
                metrics.pvrmse,
                metrics.pvmae,
                metrics.smape,
                metrics.rmse,
                predictions.len()
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let payload = serde_json::json!({
                    "metrics": metrics,
                    "predictions": predictions,
                    "targets": targets,
                });
                let path = dir.join("evaluation.json");
                std::fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
                info(format!("wrote {}", path.display()));
            }
            Ok(())
        }
        Command::Compare { config, out, jobs } => {
            let matrix = load_matrix_config(&config)?;
            info(format!(
                "running {} configurations with {jobs} worker(s)",
                matrix.configs.len()
            ));
            let report = run_matrix(&matrix, jobs)?;
            write_matrix_artifacts(&out, &report)?;
            let mut table = Vec::new();
            write_table_csv(&report, &mut table)?;
            print!("{}", String::from_utf8_lossy(&table));
            let mut dm = Vec::new();
            write_dm_csv(&report, &mut dm)?;
            print!("{}", String::from_utf8_lossy(&dm));
            info(format!("artifacts in {}", out.display()));
            Ok(())
        }
        Command::Baseline { config, seed, out } => {
            let mut config = load_experiment_config(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let split = prepare_raw_split(&config)?;
            let targets: Vec<Vec<f64>> =
                split.validation.iter().map(|w| w.target.clone()).collect();
            let threshold = config.loss_params.zigzag_threshold;

            let persistence: Vec<Vec<f64>> = split
                .validation
                .iter()
                .map(|w| arima_random_walk_forecast(&w.input, config.output_length))
                .collect::<Result<_, _>>()?;
            let arima = metrics_over_windows(&persistence, &targets, threshold)?;
            println!(
                "arima(0,1,0): pvrmse {:.6e}  pvmae {:.6e}  smape {:.4}  rmse {:.6e}",
                arima.pvrmse, arima.pvmae, arima.smape, arima.rmse
            );

            let ann_config = AnnConfig {
                layer_widths: vec![config.input_length, 128, 32, config.output_length],
            };
            let (ann, curves) = ann_train(&split, &ann_config, &config.train_settings())
                .map_err(ExperimentError::from)?;
            let predictions: Vec<Vec<f64>> = split
                .validation
                .iter()
                .map(|w| ann.predict(&w.input))
                .collect::<Result<_, _>>()
                .map_err(driftcast_core::model::ModelError::from)
                .map_err(ExperimentError::from)?;
            let ann_metrics = metrics_over_windows(&predictions, &targets, threshold)?;
            println!(
                "ann {:?}: pvrmse {:.6e}  pvmae {:.6e}  smape {:.4}  rmse {:.6e}",
                ann_config.layer_widths,
                ann_metrics.pvrmse,
                ann_metrics.pvmae,
                ann_metrics.smape,
                ann_metrics.rmse
            );

            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let payload = serde_json::json!({
                    "arima": { "metrics": arima, "predictions": persistence },
                    "ann": { "metrics": ann_metrics, "predictions": predictions, "widths": ann_config.layer_widths },
                    "targets": targets,
                });
                std::fs::write(
                    dir.join("baselines.json"),
                    serde_json::to_string_pretty(&payload)?,
                )?;
                let mut csv = Vec::new();
                write_curves_csv(&curves, &mut csv)?;
                std::fs::write(dir.join("ann_curves.csv"), csv)?;
                info(format!("artifacts in {}", dir.display()));
            }
            Ok(())
        }
        Command::Predict { config, checkpoint, out } => {
            let config = load_experiment_config(&config)?;
            let checkpoint = load_checkpoint(&checkpoint)?;
            let model = Seq2Seq::from_checkpoint(&checkpoint)?;
            let series = load_series(&config.data)?;
            let transform = fit_scale(&series, config.train_ratio)?;
            if series.len() < config.input_length {
                return Err(ExperimentError::Config(format!(
                    "series has {} records, need at least input_length {}",
                    series.len(),
                    config.input_length
                )));
            }
            let closes = series.closes();
            let tail = &closes[closes.len() - config.input_length..];
            let scaled: Vec<f64> = tail.iter().map(|&c| transform.forward(c)).collect();
            let mut window = driftcast_core::data::WindowPair {
                input: scaled,
                target: vec![0.0; config.output_length],
                features: Vec::new(),
                origin_index: closes.len() - config.input_length,
            };
            attach_features(std::slice::from_mut(&mut window), &config)?;
            let input = driftcast_core::model::window_input(&window);
            let prediction = model
                .predict(&input, *window.input.last().expect("non-empty"))
                .map_err(ExperimentError::from)?;

            let mut buffer = Vec::new();
            writeln!(buffer, "step,scaled,price").expect("vec write");
            for (i, &scaled_value) in prediction.iter().enumerate() {
                writeln!(
                    buffer,
                    "{},{},{}",
                    i + 1,
                    scaled_value,
                    transform.inverse(scaled_value)
                )
                .expect("vec write");
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join("forecast.csv");
                    std::fs::write(&path, buffer)?;
                    info(format!("wrote {}", path.display()));
                }
                None => std::io::stdout().write_all(&buffer)?,
            }
            Ok(())
        }
        Command::VerifyReport { report } => {
            let summary = verify_report_file(&report)?;
            println!("{summary}");
            Ok(())
        }
    }
}

fn write_channel(buffer: &mut Vec<u8>, name: &str, values: &[f64]) {
    let mut line = String::with_capacity(values.len() * 8 + name.len());
    line.push_str(name);
    for v in values {
        line.push(',');
        line.push_str(&v.to_string());
    }
    line.push('\n');
    buffer.extend_from_slice(line.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
