//! Periodic frame difference, cohort aggregation and cut-off detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phases::{Phase, PhaseSet};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("frame index {index} out of range for T = {t_len}")]
    OutOfRange { index: usize, t_len: usize },
    #[error("sequence length mismatch: predicted T = {pred}, reference T = {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("need at least {need} frames, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("empty cohort")]
    EmptyCohort,
}

/// Periodic frame difference between two 0-based indices on a cycle of `t_len`.
pub fn pfd(p: usize, phat: usize, t_len: usize) -> Result<usize, EvalError> {
    for i in [p, phat] {
        if i >= t_len {
            return Err(EvalError::OutOfRange { index: i, t_len });
        }
    }
    let (lo, hi) = (p.min(phat), p.max(phat));
    Ok((hi - lo).min(t_len - hi + lo))
}

/// Per-phase pFD of one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEval {
    #[serde(rename = "T")]
    pub t_len: usize,
    pub per_phase: BTreeMap<Phase, usize>,
}

impl PhaseEval {
    pub fn get(&self, p: Phase) -> usize {
        self.per_phase[&p]
    }
}

pub fn evaluate_phases(pred: &PhaseSet, gt: &PhaseSet) -> Result<PhaseEval, EvalError> {
    if pred.t_len != gt.t_len {
        return Err(EvalError::LengthMismatch { pred: pred.t_len, gt: gt.t_len });
    }
    let mut per_phase = BTreeMap::new();
    for p in Phase::ALL {
        per_phase.insert(p, pfd(pred.get(p), gt.get(p), gt.t_len)?);
    }
    Ok(PhaseEval { t_len: gt.t_len, per_phase })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub subjects: usize,
    pub per_phase: BTreeMap<Phase, PhaseStats>,
}

/// Mean, SD, median and max of every phase's pFD over a cohort.
pub fn summarize(evals: &[PhaseEval]) -> Result<CohortSummary, EvalError> {
    if evals.is_empty() {
        return Err(EvalError::EmptyCohort);
    }
    let mut per_phase = BTreeMap::new();
    for p in Phase::ALL {
        let v: Vec<f64> = evals.iter().map(|e| e.get(p) as f64).collect();
        per_phase.insert(
            p,
            PhaseStats {
                mean: stats::mean(&v).unwrap(),
                sd: stats::std_dev(&v).unwrap(),
                median: stats::median(&v).unwrap(),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            },
        );
    }
    Ok(CohortSummary { subjects: evals.len(), per_phase })
}

pub const DEFAULT_CUTOFF_THRESHOLD: f64 = 5.0;
const MAD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcVerdict {
    pub cutoff_flag: bool,
    /// Mean deformation magnitude of the last-to-first registration, mm.
    pub last_to_first_mag: f64,
    pub robust_score: f64,
    pub threshold: f64,
}

/// Flags a sequence whose last-to-first deformation magnitude is a high
/// outlier: `(v[T-1] - median(v[..T-1])) / (MAD(v[..T-1]) + eps) > threshold`.
pub fn detect_cutoff(vnorm_raw: &[f64], threshold: f64) -> Result<QcVerdict, EvalError> {
    let t = vnorm_raw.len();
    if t < 4 {
        return Err(EvalError::TooShort { need: 4, got: t });
    }
    let last = vnorm_raw[t - 1];
    let rest = &vnorm_raw[..t - 1];
    let med = stats::median(rest).unwrap();
    let mad = stats::mad(rest).unwrap();
    let robust_score = (last - med) / (mad + MAD_EPS);
    Ok(QcVerdict {
        cutoff_flag: robust_score > threshold,
        last_to_first_mag: last,
        robust_score,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_and_last_frames_are_neighbors() {
        for t in 2..50 {
            assert_eq!(pfd(0, t - 1, t).unwrap(), 1);
        }
        assert_eq!(pfd(5, 8, 30).unwrap(), 3);
        assert!(pfd(30, 1, 30).is_err());
    }

    #[test]
    fn exhaustive_cyclic_distance() {
        for t in 2..=40usize {
            for p in 0..t {
                for q in 0..t {
                    let brute = [-1i64, 0, 1]
                        .iter()
                        .map(|k| (p as i64 - q as i64 + k * t as i64).unsigned_abs() as usize)
                        .min()
                        .unwrap();
                    assert_eq!(pfd(p, q, t).unwrap(), brute);
                }
            }
        }
    }

    #[test]
    fn maximum_is_half_cycle() {
        for t in 2..=20usize {
            let m = (0..t).flat_map(|p| (0..t).map(move |q| pfd(p, q, t).unwrap())).max().unwrap();
            assert_eq!(m, t / 2);
        }
    }

    #[test]
    fn evaluation_of_shifted_phases() {
        let gt = PhaseSet { t_len: 30, ed: 0, ms: 5, es: 10, pf: 14, md: 22 };
        let same = evaluate_phases(&gt, &gt).unwrap();
        assert!(same.per_phase.values().all(|&v| v == 0));
        let off = evaluate_phases(&gt.shifted(1), &gt).unwrap();
        assert!(off.per_phase.values().all(|&v| v == 1));
        let other = PhaseSet { t_len: 20, ..gt };
        assert!(evaluate_phases(&other, &gt).is_err());
    }

    #[test]
    fn cohort_statistics() {
        let gt = PhaseSet { t_len: 30, ed: 0, ms: 5, es: 10, pf: 14, md: 22 };
        let evals: Vec<PhaseEval> = [0i64, 1, 3]
            .iter()
            .map(|&k| evaluate_phases(&gt.shifted(k), &gt).unwrap())
            .collect();
        let s = summarize(&evals).unwrap();
        let ed = s.per_phase[&Phase::Ed];
        assert!((ed.mean - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(ed.median, 1.0);
        assert_eq!(ed.max, 3.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn cutoff_on_constant_and_outlier() {
        let flat = vec![2.0; 10];
        let v = detect_cutoff(&flat, 5.0).unwrap();
        assert!(!v.cutoff_flag && v.robust_score.abs() < 1e-9);
        let mut spike = vec![1.0, 1.1, 0.9, 1.0, 1.2, 0.8, 1.0];
        spike.push(4.0);
        let v = detect_cutoff(&spike, 5.0).unwrap();
        assert!(v.cutoff_flag);
        assert_eq!(v.last_to_first_mag, 4.0);
        assert!(detect_cutoff(&[1.0, 2.0, 3.0], 5.0).is_err());
    }

    proptest! {
        #[test]
        fn pfd_metric_properties(t in 2usize..60, a in 0usize..60, b in 0usize..60, c in 0usize..60) {
            let (a, b, c) = (a % t, b % t, c % t);
            prop_assert_eq!(pfd(a, b, t).unwrap(), pfd(b, a, t).unwrap());
            prop_assert_eq!(pfd(a, a, t).unwrap(), 0);
            prop_assert!(pfd(a, c, t).unwrap() <= pfd(a, b, t).unwrap() + pfd(b, c, t).unwrap());
            prop_assert!(pfd(a, b, t).unwrap() <= t / 2);
        }

        #[test]
        fn cutoff_scale_invariance(v in proptest::collection::vec(0.1f64..5.0, 4..30), c in 0.1f64..10.0) {
            let a = detect_cutoff(&v, 5.0).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let b = detect_cutoff(&scaled, 5.0).unwrap();
            let mad = stats::mad(&v[..v.len() - 1]).unwrap();
            if mad > 1e-3 {
                prop_assert!((a.robust_score - b.robust_score).abs() <= 1e-6 * (1.0 + a.robust_score.abs()));
                if (a.robust_score - 5.0).abs() > 1e-3 {
                    prop_assert_eq!(a.cutoff_flag, b.cutoff_flag);
                }
            }
        }
    }
}
