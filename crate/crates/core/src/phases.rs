//! Rule-based key-frame extraction from a cyclic direction curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgvol::PreprocessReport;
use crate::stats::argmin_first;

#[derive(Debug, Error, PartialEq)]
pub enum PhaseError {
    #[error("sequence of length {0} is too short (need at least 3 frames)")]
    TooShort(usize),
    #[error("non-finite descriptor value at frame {0}")]
    NonFinite(usize),
    #[error("rule {rule} failed: {message} (interval {interval})")]
    Rule {
        rule: &'static str,
        interval: String,
        message: String,
    },
    #[error("phase index {index} out of range for T = {t_len}")]
    OutOfRange { index: usize, t_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Ed,
    Ms,
    Es,
    Pf,
    Md,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Ed, Phase::Ms, Phase::Es, Phase::Pf, Phase::Md];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Ed => "ed",
            Phase::Ms => "ms",
            Phase::Es => "es",
            Phase::Pf => "pf",
            Phase::Md => "md",
        }
    }
}

/// The five key frames, 0-based, on a cycle of `t_len` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSet {
    #[serde(rename = "T")]
    pub t_len: usize,
    pub ed: usize,
    pub ms: usize,
    pub es: usize,
    pub pf: usize,
    pub md: usize,
}

impl PhaseSet {
    pub fn get(&self, p: Phase) -> usize {
        match p {
            Phase::Ed => self.ed,
            Phase::Ms => self.ms,
            Phase::Es => self.es,
            Phase::Pf => self.pf,
            Phase::Md => self.md,
        }
    }

    /// Every index shifted by `k` frames, modulo `T`.
    pub fn shifted(&self, k: i64) -> Self {
        let t = self.t_len as i64;
        let s = |i: usize| (i as i64 + k).rem_euclid(t) as usize;
        Self {
            t_len: self.t_len,
            ed: s(self.ed),
            ms: s(self.ms),
            es: s(self.es),
            pf: s(self.pf),
            md: s(self.md),
        }
    }

    /// Checks ranges and the cyclic order MS, ES, PF, MD, ED.
    pub fn validate(&self) -> Result<(), PhaseError> {
        for p in Phase::ALL {
            let i = self.get(p);
            if i >= self.t_len {
                return Err(PhaseError::OutOfRange { index: i, t_len: self.t_len });
            }
        }
        if !self.is_cyclically_ordered() {
            return Err(PhaseError::Rule {
                rule: "order",
                interval: format!("{self:?}"),
                message: "phases are not in cyclic order MS, ES, PF, MD, ED".into(),
            });
        }
        Ok(())
    }

    pub fn is_cyclically_ordered(&self) -> bool {
        let t = self.t_len;
        let off = |i: usize| (i + t - self.ms) % t;
        let ed = if self.ed == self.ms { t } else { off(self.ed) };
        off(self.es) <= off(self.pf) && off(self.pf) <= off(self.md) && off(self.md) <= ed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    NegToPos,
    PosToNeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub index: usize,
    pub direction: Direction,
}

/// Relative magnitude below which a sample counts as zero.
const ZERO_TOL: f64 = 1e-12;

/// Cyclic sign changes. A crossing is reported at the first sample of the
/// new sign; samples that are zero take the sign of the run that follows.
pub fn zero_crossings(alpha: &[f64]) -> Vec<Crossing> {
    let t = alpha.len();
    let scale = alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if t == 0 || scale == 0.0 {
        return Vec::new();
    }
    let raw: Vec<i8> = alpha
        .iter()
        .map(|&v| {
            if v.abs() <= ZERO_TOL * scale {
                0
            } else if v > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    let mut sign = raw.clone();
    for i in 0..t {
        if sign[i] == 0 {
            sign[i] = (1..=t).map(|k| raw[(i + k) % t]).find(|&s| s != 0).unwrap_or(0);
        }
    }
    (0..t)
        .filter_map(|i| {
            let prev = sign[(i + t - 1) % t];
            match (prev, sign[i]) {
                (-1, 1) => Some(Crossing { index: i, direction: Direction::NegToPos }),
                (1, -1) => Some(Crossing { index: i, direction: Direction::PosToNeg }),
                _ => None,
            }
        })
        .collect()
}

/// Extracted phases together with tie and crossing diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseExtraction {
    pub phases: PhaseSet,
    /// More than one frame attains the global minimum.
    pub ms_tie: bool,
    pub crossings: Vec<Crossing>,
}

fn rule_err(rule: &'static str, from: usize, to: usize, message: &str) -> PhaseError {
    PhaseError::Rule {
        rule,
        interval: format!("({from}, {to}) cyclic"),
        message: message.into(),
    }
}

/// Applies the five key-frame rules, starting from the global minimum:
///
/// * MS: first frame attaining the minimum;
/// * ES: first negative-to-positive crossing at or after MS;
/// * PF: first discrete local maximum after ES (strict rise, weak fall);
/// * ED: last positive-to-negative crossing in `(PF, MS]`;
/// * MD: midpoint of the arc from PF forward to ED, rounded up.
pub fn extract_phases(alpha: &[f64]) -> Result<PhaseExtraction, PhaseError> {
    let t = alpha.len();
    if t < 3 {
        return Err(PhaseError::TooShort(t));
    }
    if let Some(i) = alpha.iter().position(|v| !v.is_finite()) {
        return Err(PhaseError::NonFinite(i));
    }
    let (ms, ms_tie) = argmin_first(alpha).expect("non-empty");
    let crossings = zero_crossings(alpha);
    let off = |i: usize| (i + t - ms) % t;

    let es = crossings
        .iter()
        .filter(|c| c.direction == Direction::NegToPos)
        .min_by_key(|c| off(c.index))
        .map(|c| c.index)
        .ok_or_else(|| rule_err("ES", ms, ms, "no negative-to-positive crossing"))?;

    let pf = (off(es) + 1..t)
        .map(|d| (ms + d) % t)
        .find(|&i| {
            let prev = alpha[(i + t - 1) % t];
            let next = alpha[(i + 1) % t];
            alpha[i] > prev && alpha[i] >= next
        })
        .ok_or_else(|| rule_err("PF", es, ms, "no local maximum"))?;

    let ed = crossings
        .iter()
        .filter(|c| c.direction == Direction::PosToNeg)
        .map(|c| (c.index, if c.index == ms { t } else { off(c.index) }))
        .filter(|&(_, d)| d > off(pf))
        .max_by_key(|&(_, d)| d)
        .map(|(i, _)| i)
        .ok_or_else(|| rule_err("ED", pf, ms, "no positive-to-negative crossing"))?;

    let arc = (ed + t - pf) % t;
    let md = (pf + (arc + 1) / 2) % t;

    let phases = PhaseSet { t_len: t, ed, ms, es, pf, md };
    Ok(PhaseExtraction { phases, ms_tie, crossings })
}

/// Maps phases found on a temporally repeated sequence back onto the
/// original frames by reducing every index modulo the original length.
pub fn phases_to_original(ps: &PhaseSet, report: &PreprocessReport) -> PhaseSet {
    if report.repeated_to == 0 {
        return *ps;
    }
    let t = report.original_t;
    PhaseSet {
        t_len: t,
        ed: ps.ed % t,
        ms: ps.ms % t,
        es: ps.es % t,
        pf: ps.pf % t,
        md: ps.md % t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn neg_sine(t: usize) -> Vec<f64> {
        (0..t).map(|i| -(2.0 * PI * i as f64 / t as f64).sin()).collect()
    }

    #[test]
    fn sine_crossings() {
        let c = zero_crossings(&neg_sine(32));
        assert_eq!(
            c,
            vec![
                Crossing { index: 0, direction: Direction::PosToNeg },
                Crossing { index: 16, direction: Direction::NegToPos },
            ]
        );
    }

    #[test]
    fn crossing_edge_cases() {
        assert!(zero_crossings(&[-1.0, -2.0, -0.5]).is_empty());
        assert_eq!(zero_crossings(&[-1.0, 1.0, -1.0, 1.0]).len(), 4);
        assert!(zero_crossings(&[0.0, 0.0, 0.0]).is_empty());
    }

    #[test]
    fn sine_phases() {
        let e = extract_phases(&neg_sine(32)).unwrap();
        assert_eq!(e.phases, PhaseSet { t_len: 32, ms: 8, es: 16, pf: 24, ed: 0, md: 28 });
        assert!(!e.ms_tie);
        assert!(e.phases.validate().is_ok());
    }

    #[test]
    fn shifted_sine() {
        let a = neg_sine(32);
        let rot: Vec<f64> = (0..32).map(|i| a[(i + 32 - 10) % 32]).collect();
        let e = extract_phases(&rot).unwrap();
        assert_eq!(e.phases, PhaseSet { t_len: 32, ms: 18, es: 26, pf: 2, ed: 10, md: 6 });
    }

    #[test]
    fn rule_failures_name_the_rule() {
        match extract_phases(&[-1.0, -2.0, -0.5, -0.1]) {
            Err(PhaseError::Rule { rule, .. }) => assert_eq!(rule, "ES"),
            other => panic!("{other:?}"),
        }
        assert_eq!(extract_phases(&[1.0, 2.0]), Err(PhaseError::TooShort(2)));
    }

    #[test]
    fn ties_are_flagged() {
        let e = extract_phases(&[-1.0, 1.0, 2.0, 1.0, -1.0, 0.5]).unwrap();
        assert!(e.ms_tie);
        assert_eq!(e.phases.ms, 0);
    }

    #[test]
    fn back_to_original_time_base() {
        let rep = PreprocessReport { original_t: 25, repeated_to: 40, ..Default::default() };
        let ps = PhaseSet { t_len: 40, ed: 30, ms: 10, es: 0, pf: 39, md: 25 };
        let o = phases_to_original(&ps, &rep);
        assert_eq!(o, PhaseSet { t_len: 25, ed: 5, ms: 10, es: 0, pf: 14, md: 0 });
        let z = PhaseSet { t_len: 40, ed: 0, ms: 0, es: 0, pf: 0, md: 0 };
        assert_eq!(phases_to_original(&z, &rep), PhaseSet { t_len: 25, ..z });
    }

    fn smooth_cyclic() -> impl Strategy<Value = Vec<f64>> {
        (8usize..48, proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3))
            .prop_map(|(t, coef)| {
                (0..t)
                    .map(|i| {
                        let x = 2.0 * PI * i as f64 / t as f64;
                        -x.sin()
                            + coef
                                .iter()
                                .enumerate()
                                .map(|(k, (a, b))| 0.3 * (a * ((k + 2) as f64 * x).sin() + b * ((k + 2) as f64 * x).cos()))
                                .sum::<f64>()
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn shift_equivariance(alpha in smooth_cyclic(), k in 0usize..64) {
            let t = alpha.len();
            let k = k % t;
            let rot: Vec<f64> = (0..t).map(|i| alpha[(i + t - k) % t]).collect();
            match (extract_phases(&alpha), extract_phases(&rot)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.phases.shifted(k as i64), b.phases),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn scale_invariance(alpha in smooth_cyclic(), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = alpha.iter().map(|v| v * c).collect();
            let a = extract_phases(&alpha).map(|e| e.phases);
            let b = extract_phases(&scaled).map(|e| e.phases);
            prop_assert_eq!(a.is_ok(), b.is_ok());
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn extraction_invariants(alpha in smooth_cyclic()) {
            if let Ok(e) = extract_phases(&alpha) {
                let p = e.phases;
                prop_assert!(p.validate().is_ok());
                prop_assert!(alpha.iter().all(|&v| alpha[p.ms] <= v));
                let t = alpha.len();
                prop_assert!(alpha[p.es] >= 0.0 && alpha[(p.es + t - 1) % t] < 0.0);
            }
        }
    }
}
