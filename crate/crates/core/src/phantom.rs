//! Analytic beating-shell phantom with known displacement fields and key frames.
//!
//! A spherical shell of constant thickness moves radially. Its mid-wall
//! radius follows `R(t) = R0 (1 - amplitude * s(tau))` with a cyclic
//! profile `s` in `[0, 1]`: a single contraction lobe, a fast early
//! relaxation, a flat diastasis and a late atrial relaxation.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgvol::Volume4D;
use crate::phases::PhaseSet;
use crate::register::VectorField3D;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error("frame {t} out of range for T = {t_len}")]
    FrameOutOfRange { t: usize, t_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// `(T, Z, Y, X)` of the full cycle.
    pub shape: [usize; 4],
    /// Shell center `(z, y, x)`; grid center when unset.
    pub center: Option<[f64; 3]>,
    /// Inner radius of the shell at rest, voxels.
    pub inner_radius: f64,
    pub wall_thickness: f64,
    /// Half-width of the cosine taper at each shell edge, voxels.
    pub edge_width: f64,
    /// Peak relative shortening of the mid-wall radius.
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Cyclic shift of the motion profile, frames.
    pub phase_offset: f64,
    /// Fraction of the cycle that is kept; trailing frames are dropped.
    pub truncate_fraction: f64,
    /// Level of the relaxation plateau between early and late filling.
    pub diastasis_level: f64,
    pub spacing_mm: f64,
    pub frame_duration_ms: Option<f64>,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [30, 16, 64, 64],
            center: None,
            inner_radius: 10.0,
            wall_thickness: 4.0,
            edge_width: 1.0,
            amplitude: 0.25,
            noise_sigma: 0.02,
            phase_offset: 0.0,
            truncate_fraction: 1.0,
            diastasis_level: 0.4,
            spacing_mm: 2.5,
            frame_duration_ms: Some(30.0),
            seed: 0,
        }
    }
}

/// Profile breakpoints, as fractions of the cycle.
const SYSTOLE_END: f64 = 1.0 / 3.0;
const EARLY_END: f64 = 0.6;
const DIASTASIS_END: f64 = 0.75;

const SHELL_INTENSITY: f64 = 1.0;
const POOL_INTENSITY: f64 = 0.5;

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidConfig(m));
        let [t, z, y, x] = self.shape;
        if t < 2 || z == 0 || y == 0 || x == 0 {
            return bad(format!("shape must have T >= 2 and positive extents, got {:?}", self.shape));
        }
        if !(self.amplitude > 0.0 && self.amplitude < 0.5) {
            return bad(format!("amplitude must lie in (0, 0.5), got {}", self.amplitude));
        }
        if !(self.truncate_fraction > 0.0 && self.truncate_fraction <= 1.0) {
            return bad(format!("truncate_fraction must lie in (0, 1], got {}", self.truncate_fraction));
        }
        if self.kept_frames() < 2 {
            return bad(format!("truncate_fraction {} keeps fewer than 2 frames", self.truncate_fraction));
        }
        if !(self.inner_radius > 0.0 && self.wall_thickness > 0.0 && self.edge_width >= 0.0) {
            return bad("radii and widths must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.spacing_mm > 0.0) {
            return bad("noise_sigma must be >= 0 and spacing_mm > 0".into());
        }
        if !(self.diastasis_level > 0.0 && self.diastasis_level < 1.0) {
            return bad(format!("diastasis_level must lie in (0, 1), got {}", self.diastasis_level));
        }
        if !self.phase_offset.is_finite() {
            return bad("phase_offset must be finite".into());
        }
        let c = self.center_coord();
        let outer = self.outer_radius() + self.edge_width;
        for a in [1usize, 2] {
            let n = self.shape[a + 1] as f64;
            if c[a] - outer < 0.0 || c[a] + outer > n - 1.0 {
                return bad(format!("shell of outer radius {outer} does not fit in-plane around {c:?}"));
            }
        }
        if (0..3).any(|a| c[a] < 0.0 || c[a] > self.shape[a + 1] as f64 - 1.0) {
            return bad(format!("center {c:?} outside the grid"));
        }
        Ok(())
    }

    pub fn center_coord(&self) -> [f64; 3] {
        self.center
            .unwrap_or_else(|| [1, 2, 3].map(|a| (self.shape[a] as f64 - 1.0) / 2.0))
    }

    /// Mid-wall radius at rest.
    pub fn rest_radius(&self) -> f64 {
        self.inner_radius + self.wall_thickness / 2.0
    }

    fn outer_radius(&self) -> f64 {
        self.inner_radius + self.wall_thickness
    }

    pub fn full_len(&self) -> usize {
        self.shape[0]
    }

    /// Number of frames after truncation.
    pub fn kept_frames(&self) -> usize {
        ((self.truncate_fraction * self.shape[0] as f64).round() as usize).min(self.shape[0])
    }

    /// Fraction of the cycle at (possibly fractional) frame `t`.
    fn tau(&self, t: f64) -> f64 {
        ((t - self.phase_offset) / self.shape[0] as f64).rem_euclid(1.0)
    }

    /// Mid-wall radius at frame `t`.
    pub fn radius(&self, t: f64) -> f64 {
        self.rest_radius() * (1.0 - self.amplitude * profile(self.tau(t), self.diastasis_level))
    }
}

/// Raised-cosine ramp from 0 to 1 over `[0, 1]`.
fn ramp(u: f64) -> f64 {
    0.5 * (1.0 - (std::f64::consts::PI * u.clamp(0.0, 1.0)).cos())
}

/// Shortening profile `s(tau)` in `[0, 1]`, periodic in `tau`.
pub fn profile(tau: f64, diastasis_level: f64) -> f64 {
    let tau = tau.rem_euclid(1.0);
    if tau < SYSTOLE_END {
        ramp(tau / SYSTOLE_END)
    } else if tau < EARLY_END {
        1.0 - (1.0 - diastasis_level) * ramp((tau - SYSTOLE_END) / (EARLY_END - SYSTOLE_END))
    } else if tau < DIASTASIS_END {
        diastasis_level
    } else {
        diastasis_level * (1.0 - ramp((tau - DIASTASIS_END) / (1.0 - DIASTASIS_END)))
    }
}

/// Cosine-tapered indicator of `r <= edge`, with taper half-width `h`.
fn soft_below(r: f64, edge: f64, h: f64) -> f64 {
    if h == 0.0 {
        return if r <= edge { 1.0 } else { 0.0 };
    }
    1.0 - ramp((r - edge + h) / (2.0 * h))
}

/// Shell membership in `[0, 1]` at distance `r` from the center when the
/// mid-wall radius is `rm`.
fn shell_weight(r: f64, rm: f64, half_wall: f64, h: f64) -> f64 {
    soft_below(r, rm + half_wall, h) * (1.0 - soft_below(r, rm - half_wall, h))
}

/// Image intensity at distance `r` for mid-wall radius `rm`.
fn intensity(r: f64, rm: f64, half_wall: f64, h: f64) -> f64 {
    SHELL_INTENSITY * shell_weight(r, rm, half_wall, h) + POOL_INTENSITY * soft_below(r, rm - half_wall, h)
}

/// Ground truth of a generated phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    /// Field `t` maps frame `t` onto frame `t + 1` (the last one onto frame 0).
    pub fields: Vec<VectorField3D>,
    /// Key frames on the full cycle.
    pub phases: PhaseSet,
    /// Mid-wall radius of every kept frame, voxels.
    pub radius_profile: Vec<f64>,
}

/// Serializable summary written next to a generated phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub phases: PhaseSet,
    pub radius_profile: Vec<f64>,
    pub config: PhantomConfig,
    pub indexing: String,
}

impl TruthRecord {
    pub fn new(truth: &PhantomTruth, cfg: &PhantomConfig) -> Self {
        Self {
            phases: truth.phases,
            radius_profile: truth.radius_profile.clone(),
            config: cfg.clone(),
            indexing: "0-based".into(),
        }
    }
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Key frames read off the continuous profile.
///
/// Field `t` describes the motion over `[t, t+1]` and is centered at
/// `t + 1/2`; an event at cycle fraction `tau` therefore lands on the
/// field index `tau T - 1/2 + offset`, rounded half-up.
pub fn ground_truth_phases(cfg: &PhantomConfig) -> PhaseSet {
    let t = cfg.full_len();
    let tf = t as f64;
    let at = |tau: f64| round_half_up(tau * tf - 0.5 + cfg.phase_offset).rem_euclid(t as i64) as usize;
    let ms = at(SYSTOLE_END / 2.0);
    let es = at(SYSTOLE_END);
    let pf = at((SYSTOLE_END + EARLY_END) / 2.0);
    let ed = at(1.0);
    let arc = (ed + t - pf) % t;
    let md = (pf + (arc + 1) / 2) % t;
    PhaseSet { t_len: t, ed, ms, es, pf, md }
}

fn check_frame(cfg: &PhantomConfig, t: usize) -> Result<usize, PhantomError> {
    let n = cfg.kept_frames();
    if t >= n {
        return Err(PhantomError::FrameOutOfRange { t, t_len: n });
    }
    Ok(n)
}

/// Radial displacement of the shell from frame `t` to the next kept frame,
/// weighted by shell membership at frame `t`.
pub fn analytic_field(cfg: &PhantomConfig, t: usize) -> Result<VectorField3D, PhantomError> {
    cfg.validate()?;
    let n = check_frame(cfg, t)?;
    let next = (t + 1) % n;
    let (r0, r1) = (cfg.radius(t as f64), cfg.radius(next as f64));
    let dr = r1 - r0;
    let c = cfg.center_coord();
    let [_, nz, ny, nx] = cfg.shape;
    let hw = cfg.wall_thickness / 2.0;
    Ok(VectorField3D::from_fn([nz, ny, nx], cfg.spacing_mm, |z, y, x| {
        let d = [z as f64 - c[0], y as f64 - c[1], x as f64 - c[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r == 0.0 || dr == 0.0 {
            return [0.0; 3];
        }
        let w = shell_weight(r, r0, hw, cfg.edge_width);
        d.map(|v| dr * w * v / r)
    }))
}

/// Membership of every voxel in the shell at frame `t`.
pub fn shell_mask(cfg: &PhantomConfig, t: usize, min_weight: f64) -> ndarray::Array3<bool> {
    let c = cfg.center_coord();
    let [_, nz, ny, nx] = cfg.shape;
    let rm = cfg.radius(t as f64);
    ndarray::Array3::from_shape_fn((nz, ny, nx), |(z, y, x)| {
        let r = ((z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2)).sqrt();
        shell_weight(r, rm, cfg.wall_thickness / 2.0, cfg.edge_width) >= min_weight
    })
}

/// Renders the kept frames and their analytic fields.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(Volume4D, PhantomTruth), PhantomError> {
    cfg.validate()?;
    let n = cfg.kept_frames();
    let [_, nz, ny, nx] = cfg.shape;
    let c = cfg.center_coord();
    let hw = cfg.wall_thickness / 2.0;
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let frames: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let rm = cfg.radius(t as f64);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let mut out = Vec::with_capacity(nz * ny * nx);
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let r = ((z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2)).sqrt();
                        let mut v = intensity(r, rm, hw, cfg.edge_width);
                        if cfg.noise_sigma > 0.0 {
                            v += noise.sample(&mut rng);
                        }
                        // stored values survive an f32 round trip unchanged
                        out.push(v as f32 as f64);
                    }
                }
            }
            out
        })
        .collect();
    let data = Array4::from_shape_vec((n, nz, ny, nx), frames.concat()).expect("shape");
    let vol = Volume4D::new(data, [cfg.spacing_mm; 3], cfg.frame_duration_ms)
        .map_err(|e| PhantomError::InvalidConfig(e.to_string()))?;
    let fields = (0..n)
        .into_par_iter()
        .map(|t| analytic_field(cfg, t))
        .collect::<Result<Vec<_>, _>>()?;
    let truth = PhantomTruth {
        fields,
        phases: ground_truth_phases(cfg),
        radius_profile: (0..n).map(|t| cfg.radius(t as f64)).collect(),
    };
    Ok((vol, truth))
}
