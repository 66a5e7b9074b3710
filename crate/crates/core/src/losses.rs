//! Training losses and evaluation metrics.
//!
//! Four losses: plain RMSE, SPV and MPV (RMSE scaled by penalties on the
//! horizontal mismatch of peak/valley positions) and WRMSE (RMSE with
//! per-point weights emphasizing values far from the target mean). The
//! SPV/MPV penalty factors are piecewise constant in the prediction, so the
//! backward pass treats them as constants multiplying the RMSE gradient.
//!
//! Metrics: PVRMSE and PVMAE over paired zigzag pivots, and SMAPE bounded
//! in [0, 200].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, TensorError, Var};
use crate::zigzag::{extract_pivots, Pivot, PivotKind};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: predicted {pred}, target {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("sequences must have at least {required} points, got {len}")]
    SequenceTooShort { len: usize, required: usize },
    #[error("no pivots found even after the argmax/argmin fallback")]
    NoPivotsAtAll,
    #[error("invalid loss parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which training loss to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Rmse,
    Spv,
    Mpv,
    Wrmse,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Rmse, LossKind::Wrmse, LossKind::Spv, LossKind::Mpv];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Rmse => "rmse",
            LossKind::Spv => "spv",
            LossKind::Mpv => "mpv",
            LossKind::Wrmse => "wrmse",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().as_str() {
            "rmse" => Some(LossKind::Rmse),
            "spv" => Some(LossKind::Spv),
            "mpv" => Some(LossKind::Mpv),
            "wrmse" => Some(LossKind::Wrmse),
            _ => None,
        }
    }
}

/// Coefficients for the SPV/MPV penalties. Defaults follow the usual
/// setting: alpha = beta = 0.5 for SPV; k = 3 pairs with coefficients
/// 0.3 / 0.15 / 0.05 for MPV; pivot extraction threshold 0.0063.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub spv_alpha: f64,
    pub spv_beta: f64,
    pub mpv_alphas: Vec<f64>,
    pub mpv_betas: Vec<f64>,
    pub zigzag_threshold: f64,
    /// When set, pd/vd are divided by (len - 1) instead of being raw index
    /// distances. Off by default.
    pub normalize_positions: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            spv_alpha: 0.5,
            spv_beta: 0.5,
            mpv_alphas: vec![0.3, 0.15, 0.05],
            mpv_betas: vec![0.3, 0.15, 0.05],
            zigzag_threshold: 0.0063,
            normalize_positions: false,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.mpv_alphas.len() != self.mpv_betas.len() {
            return Err(LossError::InvalidParams(format!(
                "mpv_alphas ({}) and mpv_betas ({}) must have the same length",
                self.mpv_alphas.len(),
                self.mpv_betas.len()
            )));
        }
        let all = self
            .mpv_alphas
            .iter()
            .chain(&self.mpv_betas)
            .chain([&self.spv_alpha, &self.spv_beta]);
        for &c in all {
            if c.is_nan() || c < 0.0 {
                return Err(LossError::InvalidParams(format!(
                    "coefficient {c} must be non-negative"
                )));
            }
        }
        if !(self.zigzag_threshold > 0.0 && self.zigzag_threshold < 1.0) {
            return Err(LossError::InvalidParams(format!(
                "zigzag threshold {} outside (0, 1)",
                self.zigzag_threshold
            )));
        }
        Ok(())
    }
}

fn check_lengths(pred: &[f64], target: &[f64], required: usize) -> Result<(), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.len() < required {
        return Err(LossError::SequenceTooShort {
            len: pred.len(),
            required,
        });
    }
    Ok(())
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; ties break toward the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check_lengths(pred, target, 1)?;
    let sse: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Pivot pairs shared by the MPV loss and the PV metrics: peaks of the
/// predicted sequence paired with peaks of the target in temporal order up
/// to the smaller count, valleys likewise. A sequence without any zigzag
/// pivot falls back to its global argmax as the single peak and argmin as
/// the single valley; if the two sequences still share no pivot kind, both
/// fall back.
#[derive(Debug, Clone)]
pub struct PairedPivots {
    pub peak_pairs: Vec<(Pivot, Pivot)>,
    pub valley_pairs: Vec<(Pivot, Pivot)>,
}

impl PairedPivots {
    pub fn peak_count(&self) -> usize {
        self.peak_pairs.len()
    }

    pub fn valley_count(&self) -> usize {
        self.valley_pairs.len()
    }
}

fn split_by_kind(pivots: Vec<Pivot>) -> (Vec<Pivot>, Vec<Pivot>) {
    let mut peaks = Vec::new();
    let mut valleys = Vec::new();
    for p in pivots {
        match p.kind {
            PivotKind::Peak => peaks.push(p),
            PivotKind::Valley => valleys.push(p),
        }
    }
    (peaks, valleys)
}

fn fallback_pivots(values: &[f64]) -> (Vec<Pivot>, Vec<Pivot>) {
    let peak = Pivot {
        index: argmax(values),
        kind: PivotKind::Peak,
        value: values[argmax(values)],
    };
    let valley = Pivot {
        index: argmin(values),
        kind: PivotKind::Valley,
        value: values[argmin(values)],
    };
    (vec![peak], vec![valley])
}

pub fn pair_pivots(
    pred: &[f64],
    target: &[f64],
    threshold: f64,
) -> Result<PairedPivots, LossError> {
    check_lengths(pred, target, 2)?;
    let zigzag = |values: &[f64]| -> (Vec<Pivot>, Vec<Pivot>) {
        let pivots = extract_pivots(values, threshold).unwrap_or_default();
        if pivots.is_empty() {
            fallback_pivots(values)
        } else {
            split_by_kind(pivots)
        }
    };
    let (mut pred_peaks, mut pred_valleys) = zigzag(pred);
    let (mut target_peaks, mut target_valleys) = zigzag(target);

    let pairs_total = pred_peaks.len().min(target_peaks.len())
        + pred_valleys.len().min(target_valleys.len());
    if pairs_total == 0 {
        // Pivot kinds do not overlap (one side has only peaks, the other
        // only valleys); compare global extrema instead.
        (pred_peaks, pred_valleys) = fallback_pivots(pred);
        (target_peaks, target_valleys) = fallback_pivots(target);
    }

    let peak_pairs: Vec<(Pivot, Pivot)> = pred_peaks
        .into_iter()
        .zip(target_peaks)
        .collect();
    let valley_pairs: Vec<(Pivot, Pivot)> = pred_valleys
        .into_iter()
        .zip(target_valleys)
        .collect();
    if peak_pairs.is_empty() && valley_pairs.is_empty() {
        return Err(LossError::NoPivotsAtAll);
    }
    Ok(PairedPivots {
        peak_pairs,
        valley_pairs,
    })
}

/// Penalty factor 1 + alpha*pd + beta*vd of the SPV loss; pd/vd are the
/// index distances between the argmax/argmin of the two sequences.
pub fn spv_factor(pred: &[f64], target: &[f64], params: &LossParams) -> f64 {
    let norm = if params.normalize_positions {
        (pred.len() - 1).max(1) as f64
    } else {
        1.0
    };
    let pd = (argmax(pred) as f64 - argmax(target) as f64).abs() / norm;
    let vd = (argmin(pred) as f64 - argmin(target) as f64).abs() / norm;
    1.0 + params.spv_alpha * pd + params.spv_beta * vd
}

/// Penalty factor of the MPV loss over the first k paired pivots.
pub fn mpv_factor(pred: &[f64], target: &[f64], params: &LossParams) -> Result<f64, LossError> {
    let pairs = pair_pivots(pred, target, params.zigzag_threshold)?;
    let norm = if params.normalize_positions {
        (pred.len() - 1).max(1) as f64
    } else {
        1.0
    };
    let mut factor = 1.0;
    for (i, (p_hat, p)) in pairs.peak_pairs.iter().take(params.mpv_alphas.len()).enumerate() {
        let pd = (p_hat.index as f64 - p.index as f64).abs() / norm;
        factor += params.mpv_alphas[i] * pd;
    }
    for (j, (v_hat, v)) in pairs.valley_pairs.iter().take(params.mpv_betas.len()).enumerate() {
        let vd = (v_hat.index as f64 - v.index as f64).abs() / norm;
        factor += params.mpv_betas[j] * vd;
    }
    Ok(factor)
}

pub fn spv_loss(pred: &[f64], target: &[f64], params: &LossParams) -> Result<f64, LossError> {
    check_lengths(pred, target, 2)?;
    Ok(rmse(pred, target)? * spv_factor(pred, target, params))
}

pub fn mpv_loss(pred: &[f64], target: &[f64], params: &LossParams) -> Result<f64, LossError> {
    check_lengths(pred, target, 2)?;
    Ok(rmse(pred, target)? * mpv_factor(pred, target, params)?)
}

/// Mean computed as first value plus the mean deviation from it; exact for
/// constant input, so the constant-target degeneracy of the weighted loss
/// returns exactly zero.
fn shifted_mean(values: &[f64]) -> f64 {
    let first = values[0];
    let deviation: f64 = values.iter().map(|v| v - first).sum();
    first + deviation / values.len() as f64
}

pub fn wrmse_loss(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check_lengths(pred, target, 1)?;
    let n = target.len() as f64;
    let mean = shifted_mean(target);
    let weighted: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t) * (t - mean) * (t - mean))
        .sum();
    Ok((weighted / n).sqrt())
}

/// Evaluates `kind` as a plain number.
pub fn loss_value(
    kind: LossKind,
    pred: &[f64],
    target: &[f64],
    params: &LossParams,
) -> Result<f64, LossError> {
    match kind {
        LossKind::Rmse => rmse(pred, target),
        LossKind::Spv => spv_loss(pred, target, params),
        LossKind::Mpv => mpv_loss(pred, target, params),
        LossKind::Wrmse => wrmse_loss(pred, target),
    }
}

/// Builds `kind` on the tape so gradients flow into `pred`. The SPV/MPV
/// penalty factors are computed from the current values and enter the graph
/// as constants; WRMSE weights depend only on the target.
pub fn loss_on_tape(
    tape: &mut Tape,
    pred: Var,
    target: &[f64],
    kind: LossKind,
    params: &LossParams,
) -> Result<Var, LossError> {
    let pred_values = tape.value(pred).to_vec();
    check_lengths(&pred_values, target, if matches!(kind, LossKind::Spv | LossKind::Mpv) { 2 } else { 1 })?;
    let n = target.len() as f64;
    let target_var = tape.constant_column(target);
    match kind {
        LossKind::Rmse => {
            let sse = tape.squared_error(pred, target_var)?;
            let mse = tape.scale(sse, 1.0 / n);
            Ok(tape.sqrt(mse))
        }
        LossKind::Spv => {
            let factor = spv_factor(&pred_values, target, params);
            let sse = tape.squared_error(pred, target_var)?;
            let mse = tape.scale(sse, 1.0 / n);
            let base = tape.sqrt(mse);
            Ok(tape.scale(base, factor))
        }
        LossKind::Mpv => {
            let factor = mpv_factor(&pred_values, target, params)?;
            let sse = tape.squared_error(pred, target_var)?;
            let mse = tape.scale(sse, 1.0 / n);
            let base = tape.sqrt(mse);
            Ok(tape.scale(base, factor))
        }
        LossKind::Wrmse => {
            let mean = shifted_mean(target);
            let weights: Vec<f64> = target.iter().map(|t| (t - mean) * (t - mean)).collect();
            let weights_var = tape.constant_column(&weights);
            let diff = tape.sub(pred, target_var)?;
            let squared = tape.mul(diff, diff)?;
            let weighted = tape.mul(squared, weights_var)?;
            let total = tape.sum(weighted);
            let scaled = tape.scale(total, 1.0 / n);
            Ok(tape.sqrt(scaled))
        }
    }
}

/// RMSE over paired zigzag pivot values: peaks and valleys are paired in
/// temporal order and only the paired values enter.
pub fn pvrmse(pred: &[f64], target: &[f64], zigzag_threshold: f64) -> Result<f64, LossError> {
    let pairs = pair_pivots(pred, target, zigzag_threshold)?;
    let m = pairs.peak_count();
    let n = pairs.valley_count();
    let sum: f64 = pairs
        .peak_pairs
        .iter()
        .chain(&pairs.valley_pairs)
        .map(|(a, b)| (a.value - b.value) * (a.value - b.value))
        .sum();
    Ok((sum / (m + n) as f64).sqrt())
}

/// MAE over the same pivot pairs as [`pvrmse`].
pub fn pvmae(pred: &[f64], target: &[f64], zigzag_threshold: f64) -> Result<f64, LossError> {
    let pairs = pair_pivots(pred, target, zigzag_threshold)?;
    let m = pairs.peak_count();
    let n = pairs.valley_count();
    let sum: f64 = pairs
        .peak_pairs
        .iter()
        .chain(&pairs.valley_pairs)
        .map(|(a, b)| (a.value - b.value).abs())
        .sum();
    Ok(sum / (m + n) as f64)
}

/// Symmetric mean absolute percentage error in [0, 200]; 0/0 terms count
/// as zero.
pub fn smape(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check_lengths(pred, target, 1)?;
    let n = pred.len() as f64;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let denom = p.abs() + t.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (p - t).abs() / denom
            }
        })
        .sum();
    Ok(100.0 * total / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{ParamStore, Tensor};

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        let got = rmse(&[0.5, 0.1], &[0.3, 0.5]).unwrap();
        assert!((got - 0.1f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rmse_length_mismatch() {
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(LossError::LengthMismatch { pred: 1, target: 2 })
        ));
    }

    #[test]
    fn spv_zero_at_equality_and_aligned_extrema() {
        let params = LossParams::default();
        let series = [0.1, 0.9, 0.3, 0.05, 0.4];
        assert_eq!(spv_loss(&series, &series, &params).unwrap(), 0.0);

        // Same extrem positions, different values: factor is exactly 1.
        let pred = [0.2, 0.8, 0.3, 0.1, 0.4];
        let target = [0.1, 0.9, 0.35, 0.05, 0.3];
        let expected = rmse(&pred, &target).unwrap();
        assert_eq!(spv_loss(&pred, &target, &params).unwrap(), expected);
    }

    #[test]
    fn spv_factor_is_linear_in_position_gaps() {
        let params = LossParams::default();
        // pred argmax at 4, argmin at 1; target argmax at 1, argmin at 0.
        let pred = [0.5, 0.2, 0.5, 0.5, 0.9];
        let target = [0.1, 0.8, 0.5, 0.5, 0.5];
        let factor = spv_factor(&pred, &target, &params);
        assert_eq!(factor, 1.0 + 0.5 * 3.0 + 0.5 * 1.0);
        let expected = rmse(&pred, &target).unwrap() * factor;
        assert!((spv_loss(&pred, &target, &params).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn mpv_factor_from_paired_pivots() {
        let params = LossParams {
            zigzag_threshold: 0.05,
            ..LossParams::default()
        };
        // Target: valley at index 4, peak at index 8.
        let mut target = vec![0.5; 16];
        target[4] = 0.2;
        target[8] = 0.8;
        // Pred: valley at index 8, peak at index 10.
        let mut pred = vec![0.5; 16];
        pred[8] = 0.2;
        pred[10] = 0.8;
        let factor = mpv_factor(&pred, &target, &params).unwrap();
        // One peak pair with pd = |10 - 8| = 2, one valley pair with
        // vd = |8 - 4| = 4, first coefficients 0.3 each.
        assert!((factor - (1.0 + 0.3 * 2.0 + 0.3 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn mpv_zero_at_equality() {
        let params = LossParams::default();
        let mut series = vec![0.5; 16];
        series[3] = 0.8;
        series[9] = 0.2;
        assert_eq!(mpv_loss(&series, &series, &params).unwrap(), 0.0);
    }

    #[test]
    fn wrmse_examples() {
        assert_eq!(wrmse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // Constant target: all weights vanish regardless of the prediction.
        assert_eq!(wrmse_loss(&[9.0, -3.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert!((wrmse_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pv_metric_examples() {
        // Target pivots: peak 0.5@1, valley 0.2@2; pred peak 0.6@1.
        let target = [0.4, 0.5, 0.2, 0.4];
        let pred = [0.4, 0.6, 0.2, 0.4];
        let got = pvrmse(&pred, &target, 0.05).unwrap();
        assert!((got - (0.01f64 / 2.0).sqrt()).abs() < 1e-12);
        let got = pvmae(&pred, &target, 0.05).unwrap();
        assert!((got - 0.05).abs() < 1e-12);
    }

    #[test]
    fn pv_metrics_zero_at_equality() {
        let series = [0.4, 0.5, 0.2, 0.4, 0.7, 0.3];
        assert_eq!(pvrmse(&series, &series, 0.05).unwrap(), 0.0);
        assert_eq!(pvmae(&series, &series, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn pv_fallback_on_flat_prediction() {
        // A constant prediction has no zigzag pivots; argmax/argmin stand in.
        let pred = [0.5; 8];
        let target = [0.4, 0.5, 0.2, 0.4, 0.6, 0.3, 0.5, 0.4];
        assert!(pvrmse(&pred, &target, 0.05).unwrap().is_finite());
    }

    #[test]
    fn pvmae_never_exceeds_pvrmse() {
        let mut rng = Rng::new(21);
        for _ in 0..500 {
            let pred: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
            let target: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
            let a = pvmae(&pred, &target, 0.0063).unwrap();
            let r = pvrmse(&pred, &target, 0.0063).unwrap();
            assert!(a <= r + 1e-12, "pvmae {a} > pvrmse {r}");
        }
    }

    #[test]
    fn pv_metrics_symmetric_when_counts_match() {
        let mut rng = Rng::new(33);
        let mut checked = 0;
        for _ in 0..200 {
            let a: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
            let pa = pair_pivots(&a, &b, 0.0063).unwrap();
            let pb = pair_pivots(&b, &a, 0.0063).unwrap();
            if pa.peak_count() == pb.peak_count() && pa.valley_count() == pb.valley_count() {
                let lhs = pvrmse(&a, &b, 0.0063).unwrap();
                let rhs = pvrmse(&b, &a, 0.0063).unwrap();
                assert!((lhs - rhs).abs() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn smape_examples_and_bounds() {
        assert_eq!(smape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 200.0);
        assert_eq!(smape(&[3.0], &[1.0]).unwrap(), 100.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);

        let mut rng = Rng::new(4);
        for _ in 0..1000 {
            let pred: Vec<f64> = (0..8).map(|_| rng.range(-2.0, 2.0)).collect();
            let target: Vec<f64> = (0..8).map(|_| rng.range(-2.0, 2.0)).collect();
            let v = smape(&pred, &target).unwrap();
            assert!((0.0..=200.0).contains(&v));
        }
    }

    #[test]
    fn penalized_losses_dominate_rmse() {
        let params = LossParams::default();
        let mut rng = Rng::new(6);
        for _ in 0..1000 {
            let pred: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
            let target: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
            let base = rmse(&pred, &target).unwrap();
            assert!(spv_loss(&pred, &target, &params).unwrap() >= base);
            assert!(mpv_loss(&pred, &target, &params).unwrap() >= base);
        }
    }

    #[test]
    fn spv_monotone_in_peak_gap() {
        let params = LossParams::default();
        let target: Vec<f64> = vec![0.1, 0.9, 0.2, 0.15, 0.1, 0.1, 0.1, 0.1];
        let mut previous = 0.0;
        // Slide the predicted peak away from the target's; rmse is held
        // fixed by permuting the same multiset of values.
        for shift in 1..7 {
            let mut pred = vec![0.1; 8];
            pred[shift] = 0.9;
            pred[0] = 0.05;
            let factor = spv_factor(&pred, &target, &params);
            assert!(factor >= previous);
            previous = factor;
        }
    }

    #[test]
    fn tape_losses_match_plain_values() {
        let params = LossParams::default();
        let mut rng = Rng::new(40);
        for kind in LossKind::ALL {
            for _ in 0..50 {
                let pred: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
                let target: Vec<f64> = (0..16).map(|_| rng.range(0.0, 1.0)).collect();
                let plain = loss_value(kind, &pred, &target, &params).unwrap();
                let mut store = ParamStore::new();
                let p = store.insert("pred", Tensor::column(&pred));
                let mut tape = Tape::new();
                let pv = tape.param(&store, p);
                let loss = loss_on_tape(&mut tape, pv, &target, kind, &params).unwrap();
                let tape_value = tape.value(loss)[0];
                assert!(
                    (plain - tape_value).abs() < 1e-12,
                    "{} plain {plain} vs tape {tape_value}",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn tape_loss_gradients_match_finite_differences() {
        let params = LossParams::default();
        let mut rng = Rng::new(41);
        for kind in LossKind::ALL {
            for _ in 0..10 {
                let pred: Vec<f64> = (0..12).map(|_| rng.range(0.05, 0.95)).collect();
                let target: Vec<f64> = (0..12).map(|_| rng.range(0.05, 0.95)).collect();

                let mut store = ParamStore::new();
                let p = store.insert("pred", Tensor::column(&pred));
                let mut tape = Tape::new();
                let pv = tape.param(&store, p);
                let loss = loss_on_tape(&mut tape, pv, &target, kind, &params).unwrap();
                tape.backward(loss, &mut store).unwrap();
                let analytic = store.get(p).grad().unwrap().to_vec();

                // For SPV/MPV the penalty factor is constant in a
                // neighborhood, so central differences see factor * d rmse.
                let eps = 1e-7;
                for i in 0..pred.len() {
                    let mut plus = pred.clone();
                    plus[i] += eps;
                    let mut minus = pred.clone();
                    minus[i] -= eps;
                    let f_plus = loss_value(kind, &plus, &target, &params).unwrap();
                    let f_minus = loss_value(kind, &minus, &target, &params).unwrap();
                    let numeric = (f_plus - f_minus) / (2.0 * eps);
                    let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (analytic[i] - numeric).abs() / denom < 1e-4,
                        "{} grad[{i}]: analytic {} vs numeric {}",
                        kind.name(),
                        analytic[i],
                        numeric
                    );
                }
            }
        }
    }
}
