//! Stage functions shared by `detect` and the per-stage commands.

use std::path::Path;

use cmr_phase::descriptor::{
    compute_descriptor, focus_lv, focus_mse, focus_sept, focus_vol, DescriptorConfig, FocusPoint, FocusStrategy,
    MotionDescriptor,
};
use cmr_phase::evalqc::{detect_cutoff, QcVerdict};
use cmr_phase::imgvol::{load_array, preprocess, PreprocessConfig, PreprocessReport, Volume4D};
use cmr_phase::phases::{extract_phases, phases_to_original, PhaseSet};
use cmr_phase::register::{register_sequence, PairRegistration, RegistrationConfig, VectorField3D};
use ndarray::Array3;

use crate::config::FocusConfig;
use crate::error::{CliError, Result};

/// A preprocessed sequence and the record of how it was derived.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vol: Volume4D,
    pub report: PreprocessReport,
}

impl Prepared {
    /// Number of frames of the acquired sequence.
    pub fn original_t(&self) -> usize {
        self.report.original_t
    }
}

pub fn prepare(vol: &Volume4D, cfg: &PreprocessConfig) -> Result<Prepared> {
    let (vol, report) = preprocess(vol, cfg)?;
    Ok(Prepared { vol, report })
}

/// Registers every frame onto its successor. Fields are rounded to `f32`,
/// the precision they are stored with, so that results computed in memory
/// match results re-read from disk.
pub fn register(prep: &Prepared, cfg: &RegistrationConfig) -> Result<Vec<PairRegistration>> {
    let mut pairs = register_sequence(&prep.vol, cfg)?;
    for p in &mut pairs {
        p.field = p.field.quantized_f32();
    }
    Ok(pairs)
}

/// Reads a binary mask stored as raw+json with shape `[Z, Y, X]`.
pub fn load_mask(path: &Path, dims: [usize; 3]) -> Result<Array3<bool>> {
    let (header, data) = load_array(path)?;
    if header.shape != dims {
        return Err(CliError::usage(format!(
            "LV mask `{}` has shape {:?}, the analysis grid is {:?}",
            path.display(),
            header.shape,
            dims
        )));
    }
    let arr = Array3::from_shape_vec((dims[0], dims[1], dims[2]), data.into_iter().map(|v| v != 0.0).collect())
        .expect("shape checked");
    Ok(arr)
}

/// Focus point on the analysis grid `dims`; `vol` is the preprocessed
/// sequence, required by the mse strategy only.
pub fn resolve_focus(cfg: &FocusConfig, dims: [usize; 3], vol: Option<&Volume4D>) -> Result<FocusPoint> {
    cfg.validate()?;
    let focus = match cfg.strategy {
        FocusStrategy::Vol => focus_vol(dims),
        FocusStrategy::Mse => {
            let vol = vol.ok_or_else(|| CliError::usage("focus `mse` needs the image sequence"))?;
            focus_mse(vol, cfg.mse_quantile)?
        }
        FocusStrategy::Lv => {
            let mask = load_mask(cfg.lv_mask.as_deref().expect("validated"), dims)?;
            focus_lv(mask.view())?
        }
        FocusStrategy::Sept => focus_sept(cfg.rvip_ant.expect("validated"), cfg.rvip_inf.expect("validated"), dims)?,
    };
    Ok(focus)
}

pub fn describe(fields: &[VectorField3D], focus: &FocusPoint, cfg: &DescriptorConfig) -> Result<MotionDescriptor> {
    Ok(compute_descriptor(fields, focus, cfg)?)
}

/// Key frames on the original frame indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOutcome {
    pub phases: PhaseSet,
    pub ms_tie: bool,
}

pub fn find_phases(alpha_norm: &[f64], report: &PreprocessReport) -> Result<PhaseOutcome> {
    let ex = extract_phases(alpha_norm)?;
    Ok(PhaseOutcome {
        phases: phases_to_original(&ex.phases, report),
        ms_tie: ex.ms_tie,
    })
}

/// Cut-off check on the original frames: entry `T-1` is the last-to-first
/// registration even when the analysis ran on a repeated sequence.
pub fn quality(vnorm_raw: &[f64], original_t: usize, threshold: f64) -> Result<QcVerdict> {
    let n = original_t.min(vnorm_raw.len());
    Ok(detect_cutoff(&vnorm_raw[..n], threshold)?)
}
