//! Sequential volume-to-volume deformable registration.
//!
//! The displacement field is optimized directly: the loss is
//! `(1 - SSIM3D(F, M∘(id + u))) + lambda * sum_p ||grad u(p)||^2`, minimized by
//! coarse-to-fine gradient descent with an analytic gradient.

mod field;
mod optimize;
mod smooth;
mod ssim;
mod warp;

use ndarray::ArrayView3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgvol::Volume4D;

pub use field::{load_field, save_field, VectorField3D};
pub use optimize::{
    loss, loss_gradient, register_pair, register_pair_traced, LevelTrace, LossValue, PairRegistration,
};
pub use smooth::smoothness;
pub use ssim::{ssim, ssim3d, SsimParams};
pub use warp::warp;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image of shape {shape:?} is smaller than the {window}x{window} SSIM window")]
    TooSmall { shape: Vec<usize>, window: usize },
    #[error("invalid registration config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at pyramid level {level}, iteration {iteration}")]
    NonFinite { level: usize, iteration: usize },
    #[error("registration of frame {t}: {source}")]
    Frame {
        t: usize,
        #[source]
        source: Box<RegistrationError>,
    },
    #[error("invalid vector field: {0}")]
    InvalidField(String),
}

/// Parameters of the registration loss and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Weight of the diffusion regularizer (summed over voxels, not averaged).
    pub lambda: f64,
    /// Odd SSIM window size `N`.
    pub ssim_window: usize,
    /// Explicit SSIM constants; derived from the fixed image's dynamic range when unset.
    pub ssim_eps1: Option<f64>,
    pub ssim_eps2: Option<f64>,
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    /// Largest per-voxel update of the first iteration at each level, in voxels.
    pub step_size: f64,
    /// Stop a level once the relative loss decrease falls below this.
    pub convergence_tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            lambda: 2e-4,
            ssim_window: 7,
            ssim_eps1: None,
            ssim_eps2: None,
            pyramid_levels: 3,
            iters_per_level: 100,
            step_size: 0.25,
            convergence_tol: 1e-5,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: String| Err(RegistrationError::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return bad(format!("ssim_window must be odd and >= 3, got {}", self.ssim_window));
        }
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be >= 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.convergence_tol >= 0.0) {
            return bad(format!("convergence_tol must be >= 0, got {}", self.convergence_tol));
        }
        for e in [self.ssim_eps1, self.ssim_eps2].into_iter().flatten() {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("SSIM constants must be positive, got {e}"));
            }
        }
        Ok(())
    }

    /// SSIM parameters for registering onto `fixed`.
    pub fn ssim_params(&self, fixed: ArrayView3<'_, f64>) -> SsimParams {
        let (lo, hi) = fixed
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let mut p = SsimParams::from_dynamic_range(self.ssim_window, hi - lo);
        if let Some(c1) = self.ssim_eps1 {
            p.c1 = c1;
        }
        if let Some(c2) = self.ssim_eps2 {
            p.c2 = c2;
        }
        p
    }
}

/// Cyclic pairing used by [`register_sequence`]: field `t` describes the
/// motion from frame `t` to frame `(t + 1) mod T`.
pub fn sequence_pairs(len_t: usize) -> Vec<(usize, usize)> {
    (0..len_t).map(|t| (t, (t + 1) % len_t)).collect()
}

/// Registers every frame onto its successor, closing the cycle with the
/// last frame onto the first.
///
/// Field `t` is the tissue displacement from frame `t` to frame `t+1`:
/// `x_{t+1}(p + u_t(p)) ~ x_t(p)`, obtained by warping `x_{t+1}` onto `x_t`.
/// Pairs are independent and run in parallel.
pub fn register_sequence(
    vol: &Volume4D,
    cfg: &RegistrationConfig,
) -> Result<Vec<PairRegistration>, RegistrationError> {
    cfg.validate()?;
    let spacing = vol.spacing();
    if (spacing[0] - spacing[1]).abs() > 1e-9 * spacing[0] || (spacing[0] - spacing[2]).abs() > 1e-9 * spacing[0] {
        return Err(RegistrationError::InvalidConfig(format!(
            "registration needs an isotropic grid, got spacing {spacing:?}"
        )));
    }
    sequence_pairs(vol.len_t())
        .into_par_iter()
        .map(|(t, next)| {
            register_pair_traced(vol.frame(next), vol.frame(t), cfg, spacing[0])
                .map_err(|e| RegistrationError::Frame { t, source: Box::new(e) })
        })
        .collect()
}
