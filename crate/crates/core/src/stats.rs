//! Order statistics and small reductions shared across modules.

use std::cmp::Ordering;

/// Quantile by linear interpolation between order statistics.
///
/// `q` is clamped to `[0, 1]`. Returns `None` on empty input. The value at
/// fractional rank `h = (n - 1) q` is `x[floor(h)] + (h - floor(h)) (x[floor(h)+1] - x[floor(h)])`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, q))
}

/// Same as [`quantile`] on data that is already sorted ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let q = q.clamp(0.0, 1.0);
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Median absolute deviation about the median (unscaled).
pub fn mad(values: &[f64]) -> Option<f64> {
    let med = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

/// Arithmetic mean with a fixed left-to-right summation order.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Index of the first minimum and whether another index ties with it.
pub fn argmin_first(values: &[f64]) -> Option<(usize, bool)> {
    let mut best: Option<(usize, f64)> = None;
    let mut tie = false;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) => match v.total_cmp(&b) {
                Ordering::Less => {
                    best = Some((i, v));
                    tie = false;
                }
                Ordering::Equal => tie = true,
                Ordering::Greater => {}
            },
        }
    }
    best.map(|(i, _)| (i, tie))
}
