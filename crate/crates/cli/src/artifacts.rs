//! On-disk contracts between stages.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cmr_phase::descriptor::{FocusPoint, MotionDescriptor};
use cmr_phase::evalqc::{PhaseEval, QcVerdict};
use cmr_phase::imgvol::{PreprocessConfig, PreprocessReport};
use cmr_phase::phases::{Phase, PhaseSet};
use cmr_phase::register::{load_field, save_field, LevelTrace, PairRegistration, RegistrationConfig, VectorField3D};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::pipeline::PhaseOutcome;

pub const DESCRIPTOR_HEADER: &str = "t,alpha_raw,alpha_norm,vnorm_raw_mm,vnorm_norm";
pub const EVAL_HEADER: &str = "subject,T,ed_pfd,ms_pfd,es_pfd,pf_pfd,md_pfd,cutoff_flag,robust_score";
pub const FIELDS_INDEX: &str = "fields.json";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create `{}`: {e}", dir.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write `{}`: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read `{}`: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::io(format!("cannot parse `{}`: {e}", path.display())))
}

/// Index written next to the per-pair field files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsIndex {
    #[serde(rename = "T")]
    pub t_len: usize,
    pub shape: [usize; 3],
    pub grid_spacing_mm: f64,
    /// Field `t` describes the motion from frame `t` to frame `(t+1) mod T`.
    pub pairing: String,
    pub files: Vec<String>,
    pub registration: RegistrationConfig,
    pub preprocess: PreprocessConfig,
    pub preprocess_report: PreprocessReport,
    pub traces: Vec<PairTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTrace {
    pub initial_loss: f64,
    pub levels: Vec<LevelTrace>,
}

pub fn field_file(t: usize) -> String {
    format!("field_{t:03}.json")
}

pub fn save_fields(
    dir: &Path,
    pairs: &[PairRegistration],
    registration: &RegistrationConfig,
    preprocess: &PreprocessConfig,
    report: &PreprocessReport,
) -> Result<()> {
    ensure_dir(dir)?;
    let first = &pairs.first().ok_or_else(|| CliError::usage("no fields to write"))?.field;
    let mut files = Vec::with_capacity(pairs.len());
    for (t, p) in pairs.iter().enumerate() {
        let name = field_file(t);
        save_field(&p.field, &dir.join(&name))?;
        files.push(name);
    }
    let index = FieldsIndex {
        t_len: pairs.len(),
        shape: first.dims(),
        grid_spacing_mm: first.grid_spacing(),
        pairing: "field t: frame t -> frame (t+1) mod T".into(),
        files,
        registration: registration.clone(),
        preprocess: preprocess.clone(),
        preprocess_report: report.clone(),
        traces: pairs
            .iter()
            .map(|p| PairTrace { initial_loss: p.initial_loss, levels: p.levels.clone() })
            .collect(),
    };
    write_json(&dir.join(FIELDS_INDEX), &index)
}

pub fn load_fields(dir: &Path) -> Result<(FieldsIndex, Vec<VectorField3D>)> {
    let index: FieldsIndex = read_json(&dir.join(FIELDS_INDEX))?;
    let fields = index
        .files
        .iter()
        .map(|f| load_field(&dir.join(f)).map_err(CliError::from))
        .collect::<Result<Vec<_>>>()?;
    if fields.iter().any(|f| f.dims() != index.shape) {
        return Err(CliError::io(format!("fields in `{}` disagree with the index shape", dir.display())));
    }
    Ok((index, fields))
}

/// Sidecar of `descriptor.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMeta {
    /// Rows in the CSV (analyzed frames).
    #[serde(rename = "T")]
    pub t_len: usize,
    pub original_t: usize,
    pub focus: FocusPoint,
    pub mask_quantile: Option<f64>,
    pub sigma: f64,
    pub preprocess_report: PreprocessReport,
}

/// Descriptor columns as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    pub alpha_raw: Vec<f64>,
    pub alpha_norm: Vec<f64>,
    pub vnorm_raw: Vec<f64>,
    pub vnorm_norm: Vec<f64>,
}

impl From<&MotionDescriptor> for DescriptorTable {
    fn from(d: &MotionDescriptor) -> Self {
        Self {
            alpha_raw: d.alpha_raw.clone(),
            alpha_norm: d.alpha_norm.clone(),
            vnorm_raw: d.vnorm_raw.clone(),
            vnorm_norm: d.vnorm_norm.clone(),
        }
    }
}

/// Values are written in shortest round-trip form, so reading the CSV back
/// reproduces them exactly.
pub fn descriptor_csv(d: &DescriptorTable) -> String {
    let mut s = String::from(DESCRIPTOR_HEADER);
    s.push('\n');
    for t in 0..d.alpha_raw.len() {
        writeln!(s, "{t},{},{},{},{}", d.alpha_raw[t], d.alpha_norm[t], d.vnorm_raw[t], d.vnorm_norm[t]).unwrap();
    }
    s
}

pub fn parse_descriptor_csv(text: &str, path: &Path) -> Result<DescriptorTable> {
    let bad = |line: usize, m: &str| CliError::io(format!("`{}` line {line}: {m}", path.display()));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(DESCRIPTOR_HEADER) {
        return Err(bad(1, &format!("expected header `{DESCRIPTOR_HEADER}`")));
    }
    let mut out = DescriptorTable { alpha_raw: vec![], alpha_norm: vec![], vnorm_raw: vec![], vnorm_norm: vec![] };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(bad(i + 2, "expected 5 columns"));
        }
        if cols[0].parse::<usize>().ok() != Some(out.alpha_raw.len()) {
            return Err(bad(i + 2, "frame indices must run 0, 1, 2, ..."));
        }
        let v: Vec<f64> = cols[1..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(i + 2, "not a number"))?;
        out.alpha_raw.push(v[0]);
        out.alpha_norm.push(v[1]);
        out.vnorm_raw.push(v[2]);
        out.vnorm_norm.push(v[3]);
    }
    Ok(out)
}

pub fn read_descriptor(csv: &Path) -> Result<(DescriptorTable, Option<DescriptorMeta>)> {
    let table = parse_descriptor_csv(&read_text(csv)?, csv)?;
    let sidecar = csv.with_extension("json");
    let meta = if sidecar.exists() { Some(read_json(&sidecar)?) } else { None };
    Ok((table, meta))
}

/// `phases.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasesRecord {
    #[serde(rename = "T")]
    pub t_len: usize,
    pub ed: usize,
    pub ms: usize,
    pub es: usize,
    pub pf: usize,
    pub md: usize,
    /// Phases whose defining extremum was not unique.
    pub ties: Vec<Phase>,
    pub indexing: String,
}

impl PhasesRecord {
    pub fn phase_set(&self) -> PhaseSet {
        PhaseSet { t_len: self.t_len, ed: self.ed, ms: self.ms, es: self.es, pf: self.pf, md: self.md }
    }
}

impl From<&PhaseOutcome> for PhasesRecord {
    fn from(o: &PhaseOutcome) -> Self {
        let p = o.phases;
        Self {
            t_len: p.t_len,
            ed: p.ed,
            ms: p.ms,
            es: p.es,
            pf: p.pf,
            md: p.md,
            ties: if o.ms_tie { vec![Phase::Ms] } else { vec![] },
            indexing: "0-based".into(),
        }
    }
}

/// Reads phases from `phases.json` or from a phantom `truth.json`.
pub fn read_phase_set(path: &Path) -> Result<PhaseSet> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Truth { phases: PhaseSet },
        Flat(PhaseSet),
    }
    let ps = match read_json::<Either>(path)? {
        Either::Truth { phases } | Either::Flat(phases) => phases,
    };
    ps.validate().map_err(|e| CliError::usage(format!("`{}`: {e}", path.display())))?;
    Ok(ps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcRecord {
    #[serde(rename = "T")]
    pub t_len: usize,
    #[serde(flatten)]
    pub verdict: QcVerdict,
}

/// One evaluated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub subject: String,
    pub eval: PhaseEval,
    pub qc: Option<QcVerdict>,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    for r in rows {
        write!(s, "{},{}", r.subject, r.eval.t_len).unwrap();
        for p in Phase::ALL {
            write!(s, ",{}", r.eval.get(p)).unwrap();
        }
        match &r.qc {
            Some(q) => writeln!(s, ",{},{}", q.cutoff_flag, q.robust_score).unwrap(),
            None => s.push_str(",,\n"),
        }
    }
    s
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_csv_round_trips_exactly() {
        let t = DescriptorTable {
            alpha_raw: vec![-0.1, 1.0 / 3.0, 2e-17],
            alpha_norm: vec![-1.0, 0.123456789012345678, 1.0],
            vnorm_raw: vec![0.5, std::f64::consts::PI, 1e300],
            vnorm_norm: vec![0.0, 0.5, 1.0],
        };
        let s = descriptor_csv(&t);
        assert!(s.starts_with("t,alpha_raw,alpha_norm,vnorm_raw_mm,vnorm_norm\n0,"));
        assert_eq!(parse_descriptor_csv(&s, Path::new("x.csv")).unwrap(), t);
        assert!(parse_descriptor_csv("a,b\n", Path::new("x.csv")).is_err());
        assert!(parse_descriptor_csv(&s.replace("\n1,", "\n7,"), Path::new("x.csv")).is_err());
    }

    #[test]
    fn phases_json_layout() {
        let o = PhaseOutcome {
            phases: PhaseSet { t_len: 30, ed: 0, ms: 5, es: 10, pf: 14, md: 22 },
            ms_tie: true,
        };
        let v = serde_json::to_value(PhasesRecord::from(&o)).unwrap();
        assert_eq!(v["T"], 30);
        assert_eq!(v["ms"], 5);
        assert_eq!(v["ties"][0], "ms");
        assert_eq!(v["indexing"], "0-based");
    }

    #[test]
    fn eval_rows() {
        let gt = PhaseSet { t_len: 30, ed: 0, ms: 5, es: 10, pf: 14, md: 22 };
        let eval = cmr_phase::evalqc::evaluate_phases(&gt.shifted(1), &gt).unwrap();
        let s = eval_csv(&[EvalRow { subject: "a".into(), eval, qc: None }]);
        assert_eq!(s, format!("{EVAL_HEADER}\na,30,1,1,1,1,1,,\n"));
    }
}
