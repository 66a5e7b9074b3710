//! Browser bindings for the demo page: three interactive operations over
//! the core pipeline. Requests and responses are JSON strings so the page
//! needs no generated types beyond the wasm-bindgen glue.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use driftcast_core::data::{DatasetSplit, WindowPair};
use driftcast_core::losses::{pvrmse, rmse, smape, LossKind, LossParams};
use driftcast_core::model::{predict_windows, train, window_input, ModelConfig, TrainSettings};
use driftcast_core::pattern::{default_templates, match_subwindow, sample_template};
use driftcast_core::synth::{generate_closes, SynthConfig};
use driftcast_core::zigzag::{extract_pivots, PivotKind};
use driftcast_core::CellKind;

fn to_js_error(error: impl std::fmt::Display) -> JsError {
    JsError::new(&error.to_string())
}

#[derive(Deserialize)]
#[serde(default)]
struct SeriesRequest {
    seed: u64,
    len: usize,
    threshold: f64,
    walk_sigma: f64,
    slow_amplitude: f64,
    fast_amplitude: f64,
    patterns: bool,
}

impl Default for SeriesRequest {
    fn default() -> Self {
        SeriesRequest {
            seed: 1,
            len: 672,
            threshold: 0.0097,
            walk_sigma: 0.12,
            slow_amplitude: 2.0,
            fast_amplitude: 0.8,
            patterns: true,
        }
    }
}

impl SeriesRequest {
    fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            len: self.len,
            seed: self.seed,
            walk_sigma: self.walk_sigma,
            slow_amplitude: self.slow_amplitude,
            fast_amplitude: self.fast_amplitude,
            pattern_every: if self.patterns { 480 } else { 0 },
            ..SynthConfig::default()
        }
    }
}

#[derive(Serialize)]
struct PivotOut {
    index: usize,
    kind: &'static str,
    value: f64,
}

#[derive(Serialize)]
struct SeriesResponse {
    closes: Vec<f64>,
    pivots: Vec<PivotOut>,
    threshold: f64,
}

/// Generates a synthetic close-price series and its zigzag pivots at the
/// requested reversal threshold.
#[wasm_bindgen]
pub fn series_with_pivots(request: &str) -> Result<String, JsError> {
    let request: SeriesRequest = serde_json::from_str(request).map_err(to_js_error)?;
    let closes = generate_closes(&request.synth_config());
    let pivots = extract_pivots(&closes, request.threshold)
        .map_err(to_js_error)?
        .into_iter()
        .map(|p| PivotOut {
            index: p.index,
            kind: match p.kind {
                PivotKind::Peak => "peak",
                PivotKind::Valley => "valley",
            },
            value: p.value,
        })
        .collect();
    let response = SeriesResponse {
        closes,
        pivots,
        threshold: request.threshold,
    };
    serde_json::to_string(&response).map_err(to_js_error)
}

#[derive(Deserialize)]
#[serde(default)]
struct MatchRequest {
    seed: u64,
    len: usize,
    offset: usize,
    size: usize,
    walk_sigma: f64,
    slow_amplitude: f64,
    fast_amplitude: f64,
    patterns: bool,
}

impl Default for MatchRequest {
    fn default() -> Self {
        MatchRequest {
            seed: 1,
            len: 672,
            offset: 0,
            size: 48,
            walk_sigma: 0.12,
            slow_amplitude: 2.0,
            fast_amplitude: 0.8,
            patterns: true,
        }
    }
}

#[derive(Serialize)]
struct TemplateScore {
    id: u32,
    name: String,
    distance: f64,
}

#[derive(Serialize)]
struct MatchResponse {
    window: Vec<f64>,
    normalized: Vec<f64>,
    scores: Vec<TemplateScore>,
    best_id: u32,
    best_name: String,
    best_shape: Vec<f64>,
}

/// Cuts a sub-window out of the generated series and matches it against
/// the 13 reference shapes with DTW; returns the distances, the winner and
/// its sampled shape for overlay.
#[wasm_bindgen]
pub fn match_window_against_templates(request: &str) -> Result<String, JsError> {
    let request: MatchRequest = serde_json::from_str(request).map_err(to_js_error)?;
    let config = SynthConfig {
        len: request.len,
        seed: request.seed,
        walk_sigma: request.walk_sigma,
        slow_amplitude: request.slow_amplitude,
        fast_amplitude: request.fast_amplitude,
        pattern_every: if request.patterns { 480 } else { 0 },
        ..SynthConfig::default()
    };
    let closes = generate_closes(&config);
    let end = (request.offset + request.size).min(closes.len());
    let start = end.saturating_sub(request.size);
    let window = closes[start..end].to_vec();

    let templates = default_templates();
    let (distances, one_hot) = match_subwindow(&window, &templates).map_err(to_js_error)?;
    let best = one_hot.iter().position(|&v| v == 1.0).expect("one-hot");
    let best_template = &templates.templates()[best];
    let best_shape = sample_template(best_template, window.len()).map_err(to_js_error)?;

    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized: Vec<f64> = if hi > lo {
        window.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; window.len()]
    };

    let scores = templates
        .templates()
        .iter()
        .zip(&distances)
        .map(|(t, &d)| TemplateScore {
            id: t.id,
            name: t.name.clone(),
            distance: d,
        })
        .collect();
    let response = MatchResponse {
        window,
        normalized,
        scores,
        best_id: best_template.id,
        best_name: best_template.name.clone(),
        best_shape,
    };
    serde_json::to_string(&response).map_err(to_js_error)
}

#[derive(Deserialize)]
#[serde(default)]
struct ForecastRequest {
    seed: u64,
    epochs: usize,
    cell: String,
    attention: bool,
    hidden: usize,
}

impl Default for ForecastRequest {
    fn default() -> Self {
        ForecastRequest {
            seed: 3,
            epochs: 8,
            cell: "gru".into(),
            attention: true,
            hidden: 12,
        }
    }
}

#[derive(Serialize)]
struct MetricsOut {
    rmse: f64,
    pvrmse: f64,
    smape: f64,
}

#[derive(Serialize)]
struct CurvePoint {
    epoch: usize,
    train_loss: f64,
    val_pvrmse: f64,
}

#[derive(Serialize)]
struct ForecastResponse {
    history: Vec<f64>,
    target: Vec<f64>,
    forecast: Vec<f64>,
    persistence: Vec<f64>,
    model_metrics: MetricsOut,
    persistence_metrics: MetricsOut,
    curve: Vec<CurvePoint>,
}

const DEMO_INPUT_LEN: usize = 64;
const DEMO_OUTPUT_LEN: usize = 16;

/// Trains a small model right in the browser on a generated sine-and-walk
/// series, then forecasts the last held-out window and compares against
/// persistence. Takes a few seconds at the default settings.
#[wasm_bindgen]
pub fn train_and_forecast(request: &str) -> Result<String, JsError> {
    let request: ForecastRequest = serde_json::from_str(request).map_err(to_js_error)?;
    let cell = CellKind::parse(&request.cell)
        .ok_or_else(|| JsError::new(&format!("unknown cell kind {:?}", request.cell)))?;
    let epochs = request.epochs.clamp(1, 40);
    let hidden = request.hidden.clamp(2, 24);

    let config = SynthConfig {
        len: 2200,
        seed: request.seed,
        walk_sigma: 0.015,
        noise_sigma: 0.01,
        ..SynthConfig::default()
    };
    let closes = generate_closes(&config);
    let lo = closes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = closes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = closes.iter().map(|&c| (c - lo) / (hi - lo)).collect();

    let mut windows = Vec::new();
    let mut origin = 0;
    while origin + DEMO_INPUT_LEN + DEMO_OUTPUT_LEN <= scaled.len() {
        windows.push(WindowPair {
            input: scaled[origin..origin + DEMO_INPUT_LEN].to_vec(),
            target: scaled
                [origin + DEMO_INPUT_LEN..origin + DEMO_INPUT_LEN + DEMO_OUTPUT_LEN]
                .to_vec(),
            features: Vec::new(),
            origin_index: origin,
        });
        origin += DEMO_OUTPUT_LEN;
    }
    let cut = windows.len() * 9 / 10;
    let validation = windows.split_off(cut);
    let split = DatasetSplit {
        train: windows,
        validation,
    };

    let model_config = ModelConfig {
        cell,
        use_attention: request.attention,
        hidden_size: hidden,
        input_channels: 1,
        output_length: DEMO_OUTPUT_LEN,
        ..ModelConfig::default()
    };
    let settings = TrainSettings {
        epochs,
        batch_size: 16,
        learning_rate: 3e-3,
        seed: request.seed,
        loss: LossKind::Mpv,
        loss_params: LossParams::default(),
    };
    let (model, log) = train(&split, &model_config, &settings).map_err(to_js_error)?;

    let showcase = split.validation.last().expect("validation non-empty");
    let forecast = model
        .predict(&window_input(showcase), *showcase.input.last().unwrap())
        .map_err(to_js_error)?;
    let persistence = vec![*showcase.input.last().unwrap(); DEMO_OUTPUT_LEN];

    let predictions = predict_windows(&model, &split.validation).map_err(to_js_error)?;
    let threshold = settings.loss_params.zigzag_threshold;
    let mut model_metrics = MetricsOut {
        rmse: 0.0,
        pvrmse: 0.0,
        smape: 0.0,
    };
    let mut persistence_metrics = MetricsOut {
        rmse: 0.0,
        pvrmse: 0.0,
        smape: 0.0,
    };
    let n = split.validation.len() as f64;
    for (window, prediction) in split.validation.iter().zip(&predictions) {
        let baseline = vec![*window.input.last().unwrap(); DEMO_OUTPUT_LEN];
        model_metrics.rmse += rmse(prediction, &window.target).map_err(to_js_error)? / n;
        model_metrics.pvrmse +=
            pvrmse(prediction, &window.target, threshold).map_err(to_js_error)? / n;
        model_metrics.smape += smape(prediction, &window.target).map_err(to_js_error)? / n;
        persistence_metrics.rmse += rmse(&baseline, &window.target).map_err(to_js_error)? / n;
        persistence_metrics.pvrmse +=
            pvrmse(&baseline, &window.target, threshold).map_err(to_js_error)? / n;
        persistence_metrics.smape += smape(&baseline, &window.target).map_err(to_js_error)? / n;
    }

    let response = ForecastResponse {
        history: showcase.input.clone(),
        target: showcase.target.clone(),
        forecast,
        persistence,
        model_metrics,
        persistence_metrics,
        curve: log
            .iter()
            .map(|row| CurvePoint {
                epoch: row.epoch,
                train_loss: row.train_loss,
                val_pvrmse: row.val_pvrmse,
            })
            .collect(),
    };
    serde_json::to_string(&response).map_err(to_js_error)
}
