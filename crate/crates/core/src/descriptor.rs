//! Reduction of per-frame displacement fields to a 1D motion descriptor.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgvol::Volume4D;
use crate::register::VectorField3D;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("no temporal change in the sequence")]
    NoTemporalChange,
    #[error("no motion in the displacement fields")]
    NoMotion,
    #[error("empty mask")]
    EmptyMask,
    #[error("flat descriptor")]
    FlatDescriptor,
    #[error("focus point {coord:?} lies outside the grid {dims:?}")]
    FocusOutOfBounds { coord: [f64; 3], dims: [usize; 3] },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusStrategy {
    Lv,
    Sept,
    Vol,
    Mse,
}

impl std::str::FromStr for FocusStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lv" => Ok(Self::Lv),
            "sept" => Ok(Self::Sept),
            "vol" => Ok(Self::Vol),
            "mse" => Ok(Self::Mse),
            _ => Err(format!("unknown focus strategy '{s}' (expected lv, sept, vol or mse)")),
        }
    }
}

/// Reference point `(z, y, x)` on the registration grid, in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusPoint {
    pub coord: [f64; 3],
    pub strategy: FocusStrategy,
}

fn in_bounds(c: [f64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| c[a].is_finite() && c[a] >= 0.0 && c[a] <= (dims[a] as f64 - 1.0).max(0.0))
}

/// Geometric center of the grid.
pub fn focus_vol(dims: [usize; 3]) -> FocusPoint {
    FocusPoint {
        coord: dims.map(|n| (n as f64 - 1.0).max(0.0) / 2.0),
        strategy: FocusStrategy::Vol,
    }
}

/// Center of mass of the temporally averaged squared frame difference,
/// restricted to voxels at or above its `quantile`.
pub fn focus_mse(vol: &Volume4D, quantile: f64) -> Result<FocusPoint, DescriptorError> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(DescriptorError::InvalidParameter(format!("quantile must be in (0, 1), got {quantile}")));
    }
    let t = vol.len_t();
    let [nz, ny, nx] = vol.spatial_shape();
    let mut e = Array3::<f64>::zeros((nz, ny, nx));
    for i in 0..t {
        let a = vol.frame(i);
        let b = vol.frame((i + 1) % t);
        ndarray::Zip::from(&mut e).and(&a).and(&b).for_each(|e, &a, &b| *e += (b - a) * (b - a));
    }
    e /= t as f64;
    let flat: Vec<f64> = e.iter().copied().collect();
    if flat.iter().all(|&v| v == 0.0) {
        return Err(DescriptorError::NoTemporalChange);
    }
    let thr = stats::quantile(&flat, quantile).unwrap();
    let mut acc = [0.0; 3];
    let mut w = 0.0;
    for ((z, y, x), &v) in e.indexed_iter() {
        if v >= thr && v > 0.0 {
            acc[0] += v * z as f64;
            acc[1] += v * y as f64;
            acc[2] += v * x as f64;
            w += v;
        }
    }
    Ok(FocusPoint {
        coord: acc.map(|a| a / w),
        strategy: FocusStrategy::Mse,
    })
}

/// Unweighted centroid of a binary mask.
pub fn focus_lv(mask: ArrayView3<'_, bool>) -> Result<FocusPoint, DescriptorError> {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for ((z, y, x), &m) in mask.indexed_iter() {
        if m {
            acc[0] += z as f64;
            acc[1] += y as f64;
            acc[2] += x as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(DescriptorError::EmptyMask);
    }
    Ok(FocusPoint {
        coord: acc.map(|a| a / n as f64),
        strategy: FocusStrategy::Lv,
    })
}

/// Midpoint of the anterior and inferior RV insertion points.
pub fn focus_sept(rvip_ant: [f64; 3], rvip_inf: [f64; 3], dims: [usize; 3]) -> Result<FocusPoint, DescriptorError> {
    for c in [rvip_ant, rvip_inf] {
        if !in_bounds(c, dims) {
            return Err(DescriptorError::FocusOutOfBounds { coord: c, dims });
        }
    }
    Ok(FocusPoint {
        coord: [0, 1, 2].map(|a| (rvip_ant[a] + rvip_inf[a]) / 2.0),
        strategy: FocusStrategy::Sept,
    })
}

/// Signed direction per voxel: `-cos(v, focus - p)`. Motion toward the
/// focus is negative; zero vectors and the focus itself give 0.
pub fn angle_field(field: &VectorField3D, focus: &FocusPoint) -> Result<Array3<f64>, DescriptorError> {
    let dims = field.dims();
    if !in_bounds(focus.coord, dims) {
        return Err(DescriptorError::FocusOutOfBounds { coord: focus.coord, dims });
    }
    let c = focus.coord;
    Ok(Array3::from_shape_fn((dims[0], dims[1], dims[2]), |(z, y, x)| {
        let v = field.vector(z, y, x);
        let w = [c[0] - z as f64, c[1] - y as f64, c[2] - x as f64];
        let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let nw = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if nv == 0.0 || nw == 0.0 {
            return 0.0;
        }
        let cos = (v[0] * w[0] + v[1] * w[1] + v[2] * w[2]) / (nv * nw);
        -cos.clamp(-1.0, 1.0)
    }))
}

fn check_fields(fields: &[VectorField3D]) -> Result<[usize; 3], DescriptorError> {
    let first = fields.first().ok_or(DescriptorError::NoMotion)?;
    let dims = first.dims();
    if let Some(f) = fields.iter().find(|f| f.dims() != dims) {
        return Err(DescriptorError::ShapeMismatch(format!("{:?} vs {:?}", f.dims(), dims)));
    }
    Ok(dims)
}

/// Voxels whose temporally averaged displacement magnitude reaches the
/// `quantile` of that average.
pub fn magnitude_mask(fields: &[VectorField3D], quantile: f64) -> Result<Array3<bool>, DescriptorError> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(DescriptorError::InvalidParameter(format!("quantile must be in (0, 1), got {quantile}")));
    }
    let dims = check_fields(fields)?;
    let mut m = Array3::<f64>::zeros((dims[0], dims[1], dims[2]));
    for f in fields {
        m += &f.magnitudes();
    }
    m /= fields.len() as f64;
    let flat: Vec<f64> = m.iter().copied().collect();
    if flat.iter().all(|&v| v == 0.0) {
        return Err(DescriptorError::NoMotion);
    }
    let thr = stats::quantile(&flat, quantile).unwrap();
    Ok(m.mapv(|v| v >= thr))
}

/// Paired direction and magnitude curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionDescriptor {
    pub alpha_raw: Vec<f64>,
    /// Mean displacement magnitude, mm.
    pub vnorm_raw: Vec<f64>,
    pub alpha_norm: Vec<f64>,
    pub vnorm_norm: Vec<f64>,
    /// `None` when the reduction was not masked.
    pub mask_quantile: Option<f64>,
    pub sigma: f64,
    pub focus: FocusPoint,
}

impl MotionDescriptor {
    pub fn len(&self) -> usize {
        self.alpha_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_raw.is_empty()
    }
}

/// Per-frame means of the direction and of the magnitude (mm) over the
/// mask, or over every voxel when `mask` is `None`. Normalized curves are
/// left empty.
pub fn reduce_descriptor(
    fields: &[VectorField3D],
    focus: &FocusPoint,
    mask: Option<&Array3<bool>>,
) -> Result<MotionDescriptor, DescriptorError> {
    let dims = check_fields(fields)?;
    if let Some(m) = mask {
        let (a, b, c) = m.dim();
        if [a, b, c] != dims {
            return Err(DescriptorError::ShapeMismatch(format!("mask {:?} vs fields {:?}", [a, b, c], dims)));
        }
        if !m.iter().any(|&v| v) {
            return Err(DescriptorError::EmptyMask);
        }
    }
    let keep = |idx: (usize, usize, usize)| mask.is_none_or(|m| m[idx]);
    let mut alpha_raw = Vec::with_capacity(fields.len());
    let mut vnorm_raw = Vec::with_capacity(fields.len());
    for f in fields {
        let ang = angle_field(f, focus)?;
        let mag = f.magnitudes();
        let (mut sa, mut sm, mut n) = (0.0, 0.0, 0usize);
        for (idx, &a) in ang.indexed_iter() {
            if keep(idx) {
                sa += a;
                sm += mag[idx];
                n += 1;
            }
        }
        alpha_raw.push(sa / n as f64);
        vnorm_raw.push(sm / n as f64 * f.grid_spacing());
    }
    Ok(MotionDescriptor {
        alpha_raw,
        vnorm_raw,
        alpha_norm: Vec::new(),
        vnorm_norm: Vec::new(),
        mask_quantile: None,
        sigma: 0.0,
        focus: *focus,
    })
}

/// Cyclic Gaussian filter truncated at `ceil(4 sigma)` with normalized weights.
pub fn gaussian_cyclic(x: &[f64], sigma: f64) -> Vec<f64> {
    let t = x.len();
    if sigma <= 0.0 || t == 0 {
        return x.to_vec();
    }
    let r = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = w.iter().sum();
    (0..t as i64)
        .map(|i| {
            (-r..=r)
                .zip(&w)
                .map(|(k, wk)| wk * x[(i + k).rem_euclid(t as i64) as usize])
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// Linear map of `x` onto `[lo, hi]`; `None` if `x` is constant.
pub fn minmax(x: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    let (mn, mx) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = mx - mn;
    if !(span > 0.0) || span <= 1e-12 * mx.abs().max(mn.abs()) {
        return None;
    }
    Some(
        x.iter()
            .map(|&v| {
                if v == mn {
                    lo
                } else if v == mx {
                    hi
                } else {
                    lo + (hi - lo) * (v - mn) / span
                }
            })
            .collect(),
    )
}

/// Smooths `alpha_raw` cyclically and min/max-normalizes it onto `[-1, 1]`;
/// `vnorm_raw` is normalized onto `[0, 1]` without smoothing.
pub fn smooth_normalize(desc: &MotionDescriptor, sigma: f64) -> Result<MotionDescriptor, DescriptorError> {
    if desc.len() < 3 {
        return Err(DescriptorError::InvalidParameter(format!("need at least 3 frames, got {}", desc.len())));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DescriptorError::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    minmax(&desc.alpha_raw, -1.0, 1.0).ok_or(DescriptorError::FlatDescriptor)?;
    let smoothed = gaussian_cyclic(&desc.alpha_raw, sigma);
    let alpha_norm = minmax(&smoothed, -1.0, 1.0).ok_or(DescriptorError::FlatDescriptor)?;
    let vnorm_norm = minmax(&desc.vnorm_raw, 0.0, 1.0).unwrap_or_else(|| vec![0.0; desc.len()]);
    Ok(MotionDescriptor {
        alpha_norm,
        vnorm_norm,
        sigma,
        ..desc.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub mask_quantile: f64,
    pub sigma: f64,
    /// Average over masked voxels only.
    pub masked: bool,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            mask_quantile: 0.7,
            sigma: 2.0,
            masked: true,
        }
    }
}

/// Mask, reduce, smooth and normalize in one step.
pub fn compute_descriptor(
    fields: &[VectorField3D],
    focus: &FocusPoint,
    cfg: &DescriptorConfig,
) -> Result<MotionDescriptor, DescriptorError> {
    let mask = if cfg.masked {
        Some(magnitude_mask(fields, cfg.mask_quantile)?)
    } else {
        None
    };
    let mut raw = reduce_descriptor(fields, focus, mask.as_ref())?;
    raw.mask_quantile = cfg.masked.then_some(cfg.mask_quantile);
    smooth_normalize(&raw, cfg.sigma)
}
