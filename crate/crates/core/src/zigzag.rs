//! Zigzag pivot extraction: alternating peaks and valleys confirmed by a
//! relative reversal threshold, plus the 3-class one-hot feature channels
//! built from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ZigzagError {
    #[error("series of length {0} is too short; need at least 2 points")]
    SeriesTooShort(usize),
    #[error("invalid threshold {0}; must be in (0, 1)")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PivotKind {
    Peak,
    Valley,
}

/// A confirmed reversal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pivot {
    pub index: usize,
    pub kind: PivotKind,
    pub value: f64,
}

/// Reversal thresholds used for feature extraction, one 3-channel block per
/// threshold. The defaults produce on the order of 3 to 24 pivots on a
/// 672-step window depending on the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZigzagConfig {
    pub thresholds: Vec<f64>,
}

impl Default for ZigzagConfig {
    fn default() -> Self {
        ZigzagConfig {
            thresholds: vec![0.0063, 0.007, 0.008, 0.0097, 0.012, 0.015, 0.0163, 0.0288],
        }
    }
}

impl ZigzagConfig {
    pub fn validate(&self) -> Result<(), ZigzagError> {
        for &t in &self.thresholds {
            if !(t > 0.0 && t < 1.0) {
                return Err(ZigzagError::InvalidThreshold(t));
            }
        }
        Ok(())
    }
}

/// Division guard for extrema at or near zero.
const EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Unset,
    Up,
    Down,
}

/// Extracts alternating peak/valley pivots with a single-pass reversal
/// automaton: track the running extremum since the last confirmed pivot and
/// confirm it once price retraces from it by at least `threshold`, relative
/// to the extremum. The initial extremum and the trailing incomplete leg are
/// never emitted.
///
/// Thresholding is relative, so the pivot positions are invariant under
/// positive rescaling of the series. Series containing non-positive values
/// are shifted up internally so the relative moves stay well defined.
pub fn extract_pivots(series: &[f64], threshold: f64) -> Result<Vec<Pivot>, ZigzagError> {
    if series.len() < 2 {
        return Err(ZigzagError::SeriesTooShort(series.len()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ZigzagError::InvalidThreshold(threshold));
    }

    let minimum = series.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if minimum <= 0.0 { 1.0 - minimum } else { 0.0 };
    let value = |i: usize| series[i] + shift;

    let mut direction = Direction::Unset;
    // Running extrema. In the unset phase both are live; afterwards only
    // the one matching the direction is tracked in (ext_val, ext_idx).
    // The initial extremum is never emitted, so its index is not kept.
    let mut max_val = value(0);
    let mut min_val = value(0);
    let mut ext_val = value(0);
    let mut ext_idx = 0usize;
    let mut pivots = Vec::new();

    for i in 1..series.len() {
        let p = value(i);
        match direction {
            Direction::Unset => {
                if p > max_val {
                    max_val = p;
                }
                if p < min_val {
                    min_val = p;
                }
                if (max_val - p) / max_val.max(EPSILON) >= threshold {
                    direction = Direction::Down;
                    ext_val = p;
                    ext_idx = i;
                } else if (p - min_val) / min_val.max(EPSILON) >= threshold {
                    direction = Direction::Up;
                    ext_val = p;
                    ext_idx = i;
                }
            }
            Direction::Up => {
                if p > ext_val {
                    ext_val = p;
                    ext_idx = i;
                } else if (ext_val - p) / ext_val.max(EPSILON) >= threshold {
                    pivots.push(Pivot {
                        index: ext_idx,
                        kind: PivotKind::Peak,
                        value: series[ext_idx],
                    });
                    direction = Direction::Down;
                    ext_val = p;
                    ext_idx = i;
                }
            }
            Direction::Down => {
                if p < ext_val {
                    ext_val = p;
                    ext_idx = i;
                } else if (p - ext_val) / ext_val.max(EPSILON) >= threshold {
                    pivots.push(Pivot {
                        index: ext_idx,
                        kind: PivotKind::Valley,
                        value: series[ext_idx],
                    });
                    direction = Direction::Up;
                    ext_val = p;
                    ext_idx = i;
                }
            }
        }
    }
    Ok(pivots)
}

/// Builds the zigzag feature block: for each threshold, three one-hot
/// channels (peak, valley, other) over the input, stacked in threshold
/// order. Default config on a 672-step input yields a 24 x 672 matrix.
pub fn build_zigzag_features(
    input: &[f64],
    config: &ZigzagConfig,
) -> Result<Vec<Vec<f64>>, ZigzagError> {
    config.validate()?;
    let len = input.len();
    let mut channels = Vec::with_capacity(3 * config.thresholds.len());
    for &threshold in &config.thresholds {
        let pivots = extract_pivots(input, threshold)?;
        let mut peak = vec![0.0; len];
        let mut valley = vec![0.0; len];
        let mut other = vec![1.0; len];
        for pivot in &pivots {
            match pivot.kind {
                PivotKind::Peak => peak[pivot.index] = 1.0,
                PivotKind::Valley => valley[pivot.index] = 1.0,
            }
            other[pivot.index] = 0.0;
        }
        channels.push(peak);
        channels.push(valley);
        channels.push(other);
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn monotone_series_has_no_pivots() {
        let pivots = extract_pivots(&[1.0, 2.0, 3.0, 4.0], 0.1).unwrap();
        assert!(pivots.is_empty());
    }

    #[test]
    fn simple_oscillation_confirms_interior_pivots() {
        // 1.00 -> 1.10 sets direction up; the 1.10 -> 1.00 retrace (-9.1%)
        // confirms the peak at index 1; 1.00 -> 1.10 (+10%) confirms the
        // valley at index 2. The trailing high is never confirmed.
        let pivots = extract_pivots(&[1.00, 1.10, 1.00, 1.10], 0.05).unwrap();
        assert_eq!(pivots.len(), 2);
        assert_eq!((pivots[0].index, pivots[0].kind), (1, PivotKind::Peak));
        assert_eq!((pivots[1].index, pivots[1].kind), (2, PivotKind::Valley));
    }

    #[test]
    fn unreachable_threshold_yields_empty() {
        let series: Vec<f64> = (0..50).map(|i| 1.0 + 0.1 * ((i as f64) * 0.7).sin()).collect();
        let pivots = extract_pivots(&series, 0.99).unwrap();
        assert!(pivots.is_empty());
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(matches!(
            extract_pivots(&[1.0], 0.1),
            Err(ZigzagError::SeriesTooShort(1))
        ));
    }

    #[test]
    fn kinds_alternate_and_satisfy_threshold() {
        let mut rng = Rng::new(31);
        for _ in 0..50 {
            let mut v = 1.0;
            let series: Vec<f64> = (0..300)
                .map(|_| {
                    v *= 1.0 + 0.01 * rng.normal();
                    v
                })
                .collect();
            let threshold = 0.02;
            let pivots = extract_pivots(&series, threshold).unwrap();
            for pair in pivots.windows(2) {
                assert_ne!(pair[0].kind, pair[1].kind, "kinds must alternate");
                assert!(pair[0].index < pair[1].index);
                let move_rel = (pair[1].value - pair[0].value).abs() / pair[0].value.max(EPSILON);
                assert!(
                    move_rel >= threshold,
                    "inter-pivot move {move_rel} below threshold"
                );
            }
        }
    }

    #[test]
    fn peaks_dominate_neighbor_valleys() {
        let mut rng = Rng::new(77);
        let mut v = 1.0;
        let series: Vec<f64> = (0..672)
            .map(|_| {
                v *= 1.0 + 0.008 * rng.normal();
                v
            })
            .collect();
        let pivots = extract_pivots(&series, 0.0063).unwrap();
        for triple in pivots.windows(3) {
            match triple[1].kind {
                PivotKind::Peak => {
                    assert!(triple[1].value >= triple[0].value);
                    assert!(triple[1].value >= triple[2].value);
                }
                PivotKind::Valley => {
                    assert!(triple[1].value <= triple[0].value);
                    assert!(triple[1].value <= triple[2].value);
                }
            }
        }
    }

    #[test]
    fn counts_monotone_in_threshold() {
        let mut rng = Rng::new(5);
        let mut v = 1.0;
        let series: Vec<f64> = (0..672)
            .map(|_| {
                v *= 1.0 + 0.006 * rng.normal();
                v
            })
            .collect();
        let config = ZigzagConfig::default();
        let counts: Vec<usize> = config
            .thresholds
            .iter()
            .map(|&t| extract_pivots(&series, t).unwrap().len())
            .collect();
        for pair in counts.windows(2) {
            assert!(pair[0] >= pair[1], "counts {counts:?} not monotone");
        }
    }

    #[test]
    fn scale_invariance() {
        let mut rng = Rng::new(13);
        let mut v = 1.0;
        let series: Vec<f64> = (0..200)
            .map(|_| {
                v *= 1.0 + 0.01 * rng.normal();
                v
            })
            .collect();
        let base = extract_pivots(&series, 0.012).unwrap();
        for c in [0.5, 3.0, 120.0] {
            let scaled: Vec<f64> = series.iter().map(|&x| c * x).collect();
            let got = extract_pivots(&scaled, 0.012).unwrap();
            assert_eq!(base.len(), got.len());
            for (a, b) in base.iter().zip(&got) {
                assert_eq!(a.index, b.index);
                assert_eq!(a.kind, b.kind);
            }
        }
    }

    #[test]
    fn feature_matrix_shape_and_one_hot() {
        let mut rng = Rng::new(99);
        let mut v = 0.5;
        let input: Vec<f64> = (0..672)
            .map(|_| {
                v += 0.004 * rng.normal();
                v
            })
            .collect();
        let channels = build_zigzag_features(&input, &ZigzagConfig::default()).unwrap();
        assert_eq!(channels.len(), 24);
        for t in 0..672 {
            for block in channels.chunks(3) {
                let sum = block[0][t] + block[1][t] + block[2][t];
                assert_eq!(sum, 1.0, "column {t} not one-hot");
            }
        }
    }

    #[test]
    fn monotone_input_is_all_other() {
        let input: Vec<f64> = (0..672).map(|i| 1.0 + (i as f64) * 1e-4).collect();
        let channels = build_zigzag_features(&input, &ZigzagConfig::default()).unwrap();
        for block in channels.chunks(3) {
            assert!(block[0].iter().all(|&v| v == 0.0));
            assert!(block[1].iter().all(|&v| v == 0.0));
            assert!(block[2].iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn small_reversal_seen_only_by_small_thresholds() {
        // Flat series with a single ~0.7% bump at index 100.
        let mut input = vec![1.0; 672];
        input[100] = 1.007;
        // Confirm the peak: retrace back to 1.0 afterwards (already flat).
        let config = ZigzagConfig::default();
        let channels = build_zigzag_features(&input, &config).unwrap();
        // Block 0 is threshold 0.0063: bump confirmed as peak.
        assert_eq!(channels[0][100], 1.0, "smallest threshold sees the peak");
        // Block for threshold 0.008 (index 2) and larger: no pivot.
        assert_eq!(channels[6][100], 0.0);
        assert_eq!(channels[8][100], 1.0, "larger threshold marks it other");
    }
}
