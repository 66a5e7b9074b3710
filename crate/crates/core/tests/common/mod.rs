//! Independent oracles shared by the integration suites. Everything here
//! is deliberately coded from the definitions, not by calling back into
//! the library's implementation paths.

// Each test binary compiles this module separately and uses a subset.
#![allow(dead_code)]

use driftcast_core::zigzag::{Pivot, PivotKind};

/// Minimal cost over all monotone, boundary-complete alignments found by
/// exhaustive recursion. Costs are summed in path order (start to end),
/// matching the order the DP accumulates in, so equality is exact.
pub fn brute_force_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64) -> f64 {
        let acc = acc + (a[i] - b[j]).abs();
        let at_a_end = i + 1 == a.len();
        let at_b_end = j + 1 == b.len();
        if at_a_end && at_b_end {
            return acc;
        }
        let mut best = f64::INFINITY;
        if !at_a_end {
            best = best.min(walk(a, b, i + 1, j, acc));
        }
        if !at_b_end {
            best = best.min(walk(a, b, i, j + 1, acc));
        }
        if !at_a_end && !at_b_end {
            best = best.min(walk(a, b, i + 1, j + 1, acc));
        }
        best
    }
    walk(a, b, 0, 0, 0.0)
}

/// Full-matrix DTW written separately from the library's rolling-row
/// version; used to cross-check argmin template selection on windows too
/// long for brute force.
pub fn full_matrix_dtw(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![vec![f64::INFINITY; m + 1]; n + 1];
    table[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = (a[i - 1] - b[j - 1]).abs();
            let best = table[i - 1][j].min(table[i][j - 1]).min(table[i - 1][j - 1]);
            table[i][j] = cost + best;
        }
    }
    table[n][m]
}

/// Independently coded reversal automaton following the documented
/// algorithm: confirm the running extremum as a pivot once price retraces
/// from it by at least `threshold` relative to the extremum; the initial
/// extremum and the unfinished final leg are never emitted.
pub fn independent_zigzag(series: &[f64], threshold: f64) -> Vec<Pivot> {
    assert!(series.len() >= 2);
    let lowest = series.iter().copied().fold(f64::INFINITY, f64::min);
    let offset = if lowest <= 0.0 { 1.0 - lowest } else { 0.0 };
    let at = |i: usize| series[i] + offset;
    let relative_drop = |from: f64, to: f64| (from - to) / from.max(1e-12);
    let relative_rise = |from: f64, to: f64| (to - from) / from.max(1e-12);

    // Phase 1: find the first move that reaches the threshold.
    let mut running_high = at(0);
    let mut running_low = at(0);
    let mut direction_up: Option<bool> = None;
    let mut start = 1;
    for i in 1..series.len() {
        let p = at(i);
        running_high = running_high.max(p);
        running_low = running_low.min(p);
        if relative_drop(running_high, p) >= threshold {
            direction_up = Some(false);
            start = i;
            break;
        }
        if relative_rise(running_low, p) >= threshold {
            direction_up = Some(true);
            start = i;
            break;
        }
    }
    let Some(mut going_up) = direction_up else {
        return Vec::new();
    };

    // Phase 2: alternate legs; each confirmed extremum becomes a pivot.
    let mut pivots = Vec::new();
    let mut extremum = (at(start), start);
    for i in start + 1..series.len() {
        let p = at(i);
        if going_up {
            if p > extremum.0 {
                extremum = (p, i);
            } else if relative_drop(extremum.0, p) >= threshold {
                pivots.push(Pivot {
                    index: extremum.1,
                    kind: PivotKind::Peak,
                    value: series[extremum.1],
                });
                going_up = false;
                extremum = (p, i);
            }
        } else if p < extremum.0 {
            extremum = (p, i);
        } else if relative_rise(extremum.0, p) >= threshold {
            pivots.push(Pivot {
                index: extremum.1,
                kind: PivotKind::Valley,
                value: series[extremum.1],
            });
            going_up = true;
            extremum = (p, i);
        }
    }
    pivots
}

/// Textbook Diebold-Mariano recomputation on squared-error differentials.
pub fn independent_dm_statistic(errors_a: &[f64], errors_b: &[f64], h: usize) -> Option<f64> {
    assert_eq!(errors_a.len(), errors_b.len());
    let n = errors_a.len();
    let d: Vec<f64> = (0..n)
        .map(|t| errors_a[t] * errors_a[t] - errors_b[t] * errors_b[t])
        .collect();
    let d_bar = d.iter().sum::<f64>() / n as f64;
    let gamma = |k: usize| {
        (k..n)
            .map(|t| (d[t] - d_bar) * (d[t - k] - d_bar))
            .sum::<f64>()
            / n as f64
    };
    let mut variance = gamma(0);
    for k in 1..h {
        variance += 2.0 * gamma(k);
    }
    if variance <= 0.0 {
        return None;
    }
    Some(d_bar / (variance / n as f64).sqrt())
}

fn global_extrema_pivots(values: &[f64]) -> (Vec<Pivot>, Vec<Pivot>) {
    let mut hi = 0;
    let mut lo = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[hi] {
            hi = i;
        }
        if v < values[lo] {
            lo = i;
        }
    }
    (
        vec![Pivot {
            index: hi,
            kind: PivotKind::Peak,
            value: values[hi],
        }],
        vec![Pivot {
            index: lo,
            kind: PivotKind::Valley,
            value: values[lo],
        }],
    )
}

/// PVRMSE recomputed from the definition using the independent zigzag:
/// peaks paired with peaks in temporal order up to the smaller count
/// (valleys likewise), square errors of the paired values averaged, square
/// root. A side without pivots falls back to its global argmax/argmin; if
/// the sides still share no pivot kind, both fall back.
pub fn independent_pvrmse(pred: &[f64], target: &[f64], threshold: f64) -> f64 {
    let classify = |values: &[f64]| -> (Vec<Pivot>, Vec<Pivot>) {
        let pivots = independent_zigzag(values, threshold);
        if pivots.is_empty() {
            global_extrema_pivots(values)
        } else {
            (
                pivots
                    .iter()
                    .copied()
                    .filter(|p| p.kind == PivotKind::Peak)
                    .collect(),
                pivots
                    .iter()
                    .copied()
                    .filter(|p| p.kind == PivotKind::Valley)
                    .collect(),
            )
        }
    };
    let (mut pred_peaks, mut pred_valleys) = classify(pred);
    let (mut tgt_peaks, mut tgt_valleys) = classify(target);
    let m = pred_peaks.len().min(tgt_peaks.len());
    let n = pred_valleys.len().min(tgt_valleys.len());
    if m + n == 0 {
        (pred_peaks, pred_valleys) = global_extrema_pivots(pred);
        (tgt_peaks, tgt_valleys) = global_extrema_pivots(target);
    } else {
        pred_peaks.truncate(m);
        tgt_peaks.truncate(m);
        pred_valleys.truncate(n);
        tgt_valleys.truncate(n);
    }

    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in pred_peaks.iter().zip(&tgt_peaks) {
        total += (a.value - b.value) * (a.value - b.value);
        count += 1;
    }
    for (a, b) in pred_valleys.iter().zip(&tgt_valleys) {
        total += (a.value - b.value) * (a.value - b.value);
        count += 1;
    }
    (total / count as f64).sqrt()
}

/// Relative-error check with an absolute floor, the standard gradient
/// acceptance rule.
pub fn grads_match(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        return true;
    }
    diff <= rel_tol * analytic.abs().max(numeric.abs())
}
