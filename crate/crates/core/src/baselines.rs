//! Reference forecasters and the Diebold-Mariano loss-differential test.
//!
//! ARIMA with p = 0, d = 1, q = 0 and no drift admits a closed form: the
//! forecast repeats the last observed value, so it is implemented as exact
//! persistence instead of a general ARIMA fitter. The dense baseline is a
//! 672-128-32-16 feed-forward network trained with the shared tape,
//! optimizer and loss machinery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetSplit;
use crate::losses::{loss_on_tape, LossError};
use crate::model::{metrics_over_windows, EpochLog, ModelError, TrainSettings};
use crate::rng::Rng;
use crate::tensor::{Adam, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {required} observations, got {len}")]
    SeriesTooShort { len: usize, required: usize },
    #[error("long-run variance is not positive; the differential is degenerate")]
    NonPositiveVariance,
    #[error("horizon must be >= 1")]
    InvalidHorizon,
}

/// Multi-step forecast of a driftless random walk: every step repeats the
/// last observation. Only the final history value matters.
pub fn arima_random_walk_forecast(history: &[f64], horizon: usize) -> Result<Vec<f64>, StatsError> {
    let last = *history.last().ok_or(StatsError::EmptyHistory)?;
    Ok(vec![last; horizon])
}

// ---------------------------------------------------------------------------
// Dense network baseline

/// Layer widths of the dense baseline; the first entry is the input length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub layer_widths: Vec<usize>,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            layer_widths: vec![672, 128, 32, 16],
        }
    }
}

impl AnnConfig {
    pub fn input_length(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_length(&self) -> usize {
        *self.layer_widths.last().expect("widths are non-empty")
    }
}

/// Feed-forward close-price forecaster: ReLU after every hidden layer,
/// sigmoid on the output so predictions stay in (0, 1).
#[derive(Debug)]
pub struct Ann {
    config: AnnConfig,
    params: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
}

impl Ann {
    pub fn new(config: AnnConfig, rng: &mut Rng) -> Self {
        assert!(config.layer_widths.len() >= 2, "need at least one layer");
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        for (i, pair) in config.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_out * fan_in).map(|_| rng.range(-bound, bound)).collect();
            let weight = params.insert(
                format!("ann.{i}.w"),
                Tensor::from_vec(fan_out, fan_in, data).expect("sized"),
            );
            let bias = params.insert(format!("ann.{i}.b"), Tensor::zeros(fan_out, 1));
            layers.push((weight, bias));
        }
        Ann {
            config,
            params,
            layers,
        }
    }

    pub fn config(&self) -> &AnnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_on_tape(&self, tape: &mut Tape, input: Var) -> Result<Var, TensorError> {
        let last = self.layers.len() - 1;
        let mut activation = input;
        for (i, (weight, bias)) in self.layers.iter().enumerate() {
            let w = tape.param(&self.params, *weight);
            let b = tape.param(&self.params, *bias);
            let lin = tape.matmul(w, activation)?;
            let lin = tape.add(lin, b)?;
            activation = if i == last {
                tape.sigmoid(lin)
            } else {
                tape.relu(lin)
            };
        }
        Ok(activation)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, TensorError> {
        let mut tape = Tape::new();
        let x = tape.constant_column(input);
        let y = self.forward_on_tape(&mut tape, x)?;
        Ok(tape.value(y).to_vec())
    }

    /// Forward + backward for one example; the loss gradient accumulates
    /// into the parameters scaled by `grad_scale`.
    pub fn accumulate_gradients(
        &mut self,
        input: &[f64],
        target: &[f64],
        settings: &TrainSettings,
        grad_scale: f64,
    ) -> Result<f64, LossError> {
        let mut tape = Tape::new();
        let x = tape.constant_column(input);
        let prediction = self.forward_on_tape(&mut tape, x)?;
        let loss = loss_on_tape(
            &mut tape,
            prediction,
            target,
            settings.loss,
            &settings.loss_params,
        )?;
        let value = tape.value(loss)[0];
        tape.backward_scaled(loss, grad_scale, &mut self.params)?;
        Ok(value)
    }
}

/// Trains the dense baseline with the same deterministic loop shape as the
/// recurrent model: shuffled epochs, per-batch accumulation, Adam steps.
pub fn ann_train(
    split: &DatasetSplit,
    config: &AnnConfig,
    settings: &TrainSettings,
) -> Result<(Ann, Vec<EpochLog>), ModelError> {
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for pair in split.train.iter().chain(&split.validation) {
        if pair.input.len() != config.input_length() || pair.target.len() != config.output_length()
        {
            return Err(ModelError::InvalidConfig(format!(
                "dense baseline expects {}-in/{}-out windows, got {}/{}",
                config.input_length(),
                config.output_length(),
                pair.input.len(),
                pair.target.len()
            )));
        }
    }

    let mut rng = Rng::new(settings.seed);
    let mut model = Ann::new(config.clone(), &mut rng);
    let mut optimizer = Adam::new(settings.learning_rate);
    let mut log = Vec::with_capacity(settings.epochs);
    let threshold = settings.loss_params.zigzag_threshold;

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..settings.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(settings.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let pair = &split.train[i];
                let value =
                    model.accumulate_gradients(&pair.input, &pair.target, settings, scale)?;
                if !value.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    });
                }
                epoch_loss += value;
            }
            optimizer.step(&mut model.params)?;
        }

        let predictions: Result<Vec<Vec<f64>>, TensorError> = split
            .validation
            .iter()
            .map(|pair| model.predict(&pair.input))
            .collect();
        let predictions = predictions.map_err(ModelError::from)?;
        let targets: Vec<Vec<f64>> = split.validation.iter().map(|w| w.target.clone()).collect();
        let metrics = metrics_over_windows(&predictions, &targets, threshold)?;
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / split.train.len() as f64,
            val_pvrmse: metrics.pvrmse,
            val_pvmae: metrics.pvmae,
            val_smape: metrics.smape,
        });
    }
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Diebold-Mariano

/// Result of the loss-differential test. A negative statistic means the
/// second model has the larger forecasting errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub h: usize,
    pub n: usize,
}

/// The horizon feeding the test, evaluated from the forecast length as
/// floor(len^(1/3)) + 1.
pub fn dm_horizon(output_length: usize) -> usize {
    (output_length as f64).powf(1.0 / 3.0).floor() as usize + 1
}

/// Classical Diebold-Mariano test on squared-error differentials
/// d_t = e_a,t^2 - e_b,t^2 with a truncated long-run variance using the
/// first h-1 sample autocovariances. `harvey_correction` applies the
/// small-sample adjustment; the classical statistic is the default.
pub fn diebold_mariano(
    errors_a: &[f64],
    errors_b: &[f64],
    h: usize,
    harvey_correction: bool,
) -> Result<DmResult, StatsError> {
    if errors_a.len() != errors_b.len() {
        return Err(StatsError::LengthMismatch {
            left: errors_a.len(),
            right: errors_b.len(),
        });
    }
    let n = errors_a.len();
    if n < 10 {
        return Err(StatsError::SeriesTooShort { len: n, required: 10 });
    }
    if h == 0 {
        return Err(StatsError::InvalidHorizon);
    }

    let differentials: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| a * a - b * b)
        .collect();
    let mean = differentials.iter().sum::<f64>() / n as f64;

    let autocovariance = |lag: usize| -> f64 {
        let mut sum = 0.0;
        for t in lag..n {
            sum += (differentials[t] - mean) * (differentials[t - lag] - mean);
        }
        sum / n as f64
    };
    let mut long_run = autocovariance(0);
    for lag in 1..h {
        long_run += 2.0 * autocovariance(lag);
    }
    // A constant differential leaves only rounding residue (~1e-32 of the
    // squared scale); treat anything at that level as degenerate.
    let scale = differentials.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if long_run <= scale * 1e-24 {
        return Err(StatsError::NonPositiveVariance);
    }

    let mut statistic = mean / (long_run / n as f64).sqrt();
    if harvey_correction {
        let nf = n as f64;
        let hf = h as f64;
        let adjust = ((nf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / nf) / nf).sqrt();
        statistic *= adjust;
    }
    let p_value = 2.0 * (1.0 - standard_normal_cdf(statistic.abs()));
    Ok(DmResult {
        statistic,
        p_value,
        h,
        n,
    })
}

/// Phi(x) through the complementary error function.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Rational-polynomial erfc with ~1e-7 absolute error.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587
                                    + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        poly
    } else {
        2.0 - poly
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persistence_repeats_last_value() {
        let history = vec![0.1, 0.9, 0.5321];
        let forecast = arima_random_walk_forecast(&history, 16).unwrap();
        assert_eq!(forecast, vec![0.5321; 16]);
        assert_eq!(arima_random_walk_forecast(&history, 1).unwrap(), vec![0.5321]);
    }

    #[test]
    fn persistence_ignores_everything_but_the_last_value() {
        let a = arima_random_walk_forecast(&[9.0, -4.0, 2.0], 4).unwrap();
        let b = arima_random_walk_forecast(&[0.01, 77.0, 2.0], 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_history_is_rejected() {
        assert!(matches!(
            arima_random_walk_forecast(&[], 4),
            Err(StatsError::EmptyHistory)
        ));
    }

    #[test]
    fn horizon_formula() {
        assert_eq!(dm_horizon(16), 3);
        assert_eq!(dm_horizon(1), 2);
        assert_eq!(dm_horizon(27), 4);
        assert_eq!(dm_horizon(96), 5);
    }

    #[test]
    fn zero_parameter_ann_outputs_half() {
        let mut rng = Rng::new(0);
        let mut ann = Ann::new(
            AnnConfig {
                layer_widths: vec![8, 4, 3, 2],
            },
            &mut rng,
        );
        for (_, tensor) in ann.params_mut().iter_mut() {
            tensor.data_mut().fill(0.0);
        }
        let out = ann.predict(&[0.3; 8]).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn dm_antisymmetry_is_exact() {
        let mut rng = Rng::new(55);
        for _ in 0..20 {
            let a: Vec<f64> = (0..40).map(|_| rng.normal() * 0.3).collect();
            let b: Vec<f64> = (0..40).map(|_| rng.normal() * 0.5 + 0.1).collect();
            let ab = diebold_mariano(&a, &b, 3, false).unwrap();
            let ba = diebold_mariano(&b, &a, 3, false).unwrap();
            assert_eq!(ab.statistic, -ba.statistic);
        }
    }

    #[test]
    fn identical_errors_are_degenerate() {
        let e: Vec<f64> = (0..20).map(|i| (i as f64) * 0.1).collect();
        assert!(matches!(
            diebold_mariano(&e, &e, 3, false),
            Err(StatsError::NonPositiveVariance)
        ));
    }

    #[test]
    fn constant_differential_is_degenerate() {
        let zeros = vec![0.0; 20];
        let constant = vec![0.4; 20];
        assert!(matches!(
            diebold_mariano(&zeros, &constant, 3, false),
            Err(StatsError::NonPositiveVariance)
        ));
    }

    #[test]
    fn worse_second_model_gives_negative_statistic() {
        let mut rng = Rng::new(2);
        let a: Vec<f64> = (0..60).map(|_| rng.normal() * 0.1).collect();
        let b: Vec<f64> = (0..60).map(|_| rng.normal() * 0.9).collect();
        let result = diebold_mariano(&a, &b, 3, false).unwrap();
        assert!(result.statistic < 0.0);
        assert!((0.0..=1.0).contains(&result.p_value));
    }

    #[test]
    fn normal_cdf_reference_points() {
        // The erfc approximation is good to ~1.2e-7 absolute.
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 2e-7);
        assert!((standard_normal_cdf(1.959964) - 0.975).abs() < 1e-5);
        assert!((standard_normal_cdf(-2.575829) - 0.005).abs() < 1e-5);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let err = diebold_mariano(&[0.0; 12], &[0.0; 11], 3, false).unwrap_err();
        assert!(matches!(err, StatsError::LengthMismatch { left: 12, right: 11 }));
    }

    #[test]
    fn short_series_is_rejected() {
        let err = diebold_mariano(&[0.1; 9], &[0.2; 9], 3, false).unwrap_err();
        assert!(matches!(err, StatsError::SeriesTooShort { len: 9, .. }));
    }
}
