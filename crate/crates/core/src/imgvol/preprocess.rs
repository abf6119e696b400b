use ndarray::{Array3, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::Lattice;
use super::{Volume4D, VolumeError};
use crate::stats;

/// Record of what the preprocessing chain did to a sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub original_t: usize,
    /// Length after temporal repetition, `0` when repetition was not applied.
    pub repeated_to: usize,
    pub clip_bounds: Option<(f64, f64)>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub resampled_spacing: Option<f64>,
}

impl PreprocessReport {
    fn identity(vol: &Volume4D) -> Self {
        Self {
            original_t: vol.len_t(),
            repeated_to: 0,
            clip_bounds: None,
            mean: None,
            std: None,
            resampled_spacing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Isotropic target spacing in mm; `None` keeps the input grid.
    pub target_spacing: Option<f64>,
    /// Repeat frames cyclically up to this length (off by default).
    pub repeat_to: Option<usize>,
    /// Center crop/pad to `(z, y, x)` after resampling.
    pub crop_shape: Option<[usize; 3]>,
    pub clip_quantile: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing: Some(2.5),
            repeat_to: None,
            crop_shape: None,
            clip_quantile: 0.999,
        }
    }
}

/// Resample -> (repeat) -> (crop/pad) -> clip -> standardize.
pub fn preprocess(
    vol: &Volume4D,
    cfg: &PreprocessConfig,
) -> Result<(Volume4D, PreprocessReport), VolumeError> {
    let mut report = PreprocessReport::identity(vol);
    let mut cur = match cfg.target_spacing {
        Some(target) => {
            report.resampled_spacing = Some(target);
            resample_isotropic(vol, target)?
        }
        None => vol.clone(),
    };
    if let Some(len) = cfg.repeat_to {
        let (rep, r) = repeat_temporal(&cur, len)?;
        report.repeated_to = r.repeated_to;
        cur = rep;
    }
    if let Some(shape) = cfg.crop_shape {
        let fill = cur.data().iter().copied().fold(f64::INFINITY, f64::min);
        cur = crop_or_pad(&cur, shape, fill)?;
    }
    let (out, r) = clip_standardize(&cur, cfg.clip_quantile)?;
    report.clip_bounds = r.clip_bounds;
    report.mean = r.mean;
    report.std = r.std;
    Ok((out, report))
}

/// Resamples every frame onto an isotropic grid of spacing `target` mm.
///
/// Output extent per axis is `round(n * s / target)` (at least 1). Grids are
/// aligned at their geometric centers, so the volume center maps onto itself.
pub fn resample_isotropic(vol: &Volume4D, target: f64) -> Result<Volume4D, VolumeError> {
    if !(target.is_finite() && target > 0.0) {
        return Err(VolumeError::Invalid(format!(
            "target spacing must be positive, got {target}"
        )));
    }
    let dims_in = vol.spatial_shape();
    let spacing = vol.spacing();
    let mut dims_out = [0usize; 3];
    for a in 0..3 {
        dims_out[a] = ((dims_in[a] as f64 * spacing[a] / target).round() as usize).max(1);
    }
    let map = |a: usize, j: usize| -> f64 {
        let c_out = (dims_out[a] as f64 - 1.0) / 2.0;
        let c_in = (dims_in[a] as f64 - 1.0) / 2.0;
        (j as f64 - c_out) * (target / spacing[a]) + c_in
    };
    let frames: Vec<Array3<f64>> = (0..vol.len_t())
        .into_par_iter()
        .map(|t| {
            let view = vol.frame(t);
            let frame = view.as_standard_layout();
            let lat = Lattice::new(frame.as_slice().unwrap(), dims_in);
            Array3::from_shape_fn((dims_out[0], dims_out[1], dims_out[2]), |(z, y, x)| {
                lat.sample([map(0, z), map(1, y), map(2, x)])
            })
        })
        .collect();
    let t = frames.len();
    let mut data = Array4::zeros((t, dims_out[0], dims_out[1], dims_out[2]));
    for (mut dst, src) in data.outer_iter_mut().zip(frames) {
        dst.assign(&src);
    }
    Volume4D::new(data, [target; 3], vol.frame_duration_ms())
}

/// Cyclically repeats frames until the sequence has `target_len` frames.
pub fn repeat_temporal(
    vol: &Volume4D,
    target_len: usize,
) -> Result<(Volume4D, PreprocessReport), VolumeError> {
    let t = vol.len_t();
    if target_len < t {
        return Err(VolumeError::Invalid(format!(
            "repeat target {target_len} is shorter than the sequence ({t} frames)"
        )));
    }
    let [z, y, x] = vol.spatial_shape();
    let mut data = Array4::zeros((target_len, z, y, x));
    for (i, mut dst) in data.outer_iter_mut().enumerate() {
        dst.assign(&vol.frame(i % t));
    }
    let mut report = PreprocessReport::identity(vol);
    report.repeated_to = target_len;
    Ok((
        Volume4D::new(data, vol.spacing(), vol.frame_duration_ms())?,
        report,
    ))
}

/// Clips intensities above the `quantile` quantile of the whole 4D array,
/// then standardizes to zero mean and unit standard deviation.
pub fn clip_standardize(
    vol: &Volume4D,
    quantile: f64,
) -> Result<(Volume4D, PreprocessReport), VolumeError> {
    if !(quantile > 0.5 && quantile <= 1.0) {
        return Err(VolumeError::Invalid(format!(
            "clip quantile must lie in (0.5, 1], got {quantile}"
        )));
    }
    let values = vol.data().as_slice().expect("standard layout");
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let high = stats::quantile_sorted(&sorted, quantile);
    let low = sorted[0];
    let clipped: Vec<f64> = values.iter().map(|&v| v.min(high)).collect();
    let mean = stats::mean(&clipped).unwrap();
    let std = stats::std_dev(&clipped).unwrap();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(VolumeError::Degenerate);
    }
    let out: Vec<f64> = clipped.iter().map(|v| (v - mean) / std).collect();
    let data = Array4::from_shape_vec(vol.data().raw_dim(), out).expect("same shape");
    let mut report = PreprocessReport::identity(vol);
    report.clip_bounds = Some((low, high));
    report.mean = Some(mean);
    report.std = Some(std);
    Ok((
        Volume4D::new(data, vol.spacing(), vol.frame_duration_ms())?,
        report,
    ))
}

/// Center crop or pad (with `fill`) each frame to `shape`.
pub fn crop_or_pad(vol: &Volume4D, shape: [usize; 3], fill: f64) -> Result<Volume4D, VolumeError> {
    if shape.contains(&0) {
        return Err(VolumeError::Invalid("crop shape must be positive".into()));
    }
    let src = vol.spatial_shape();
    // signed offset of output index 0 within the input grid
    let off: Vec<isize> = (0..3)
        .map(|a| (src[a] as isize - shape[a] as isize).div_euclid(2))
        .collect();
    let t = vol.len_t();
    let data = Array4::from_shape_fn((t, shape[0], shape[1], shape[2]), |(ti, z, y, x)| {
        let p = [z as isize + off[0], y as isize + off[1], x as isize + off[2]];
        if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < src[a]) {
            vol.data()[[ti, p[0] as usize, p[1] as usize, p[2] as usize]]
        } else {
            fill
        }
    });
    Volume4D::new(data, vol.spacing(), vol.frame_duration_ms())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol_from_fn(
        shape: (usize, usize, usize, usize),
        spacing: [f64; 3],
        f: impl Fn((usize, usize, usize, usize)) -> f64,
    ) -> Volume4D {
        Volume4D::new(Array4::from_shape_fn(shape, f), spacing, None).unwrap()
    }

    #[test]
    fn identity_resample_preserves_data() {
        let v = vol_from_fn((2, 3, 4, 5), [2.5; 3], |(t, z, y, x)| {
            ((t * 7 + z * 3 + y * 5 + x) as f64).sin()
        });
        let r = resample_isotropic(&v, 2.5).unwrap();
        assert_eq!(r.shape(), v.shape());
        for (a, b) in r.data().iter().zip(v.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resample_doubles_extent() {
        let v = vol_from_fn((2, 8, 8, 8), [5.0; 3], |_| 1.0);
        let r = resample_isotropic(&v, 2.5).unwrap();
        assert_eq!(r.shape(), (2, 16, 16, 16));
        assert_eq!(r.spacing(), [2.5; 3]);
    }

    #[test]
    fn resample_reproduces_linear_ramp() {
        // ramp in physical mm measured from the grid center
        let spacing = [3.0, 2.0, 1.7];
        let shape = (2, 6, 7, 9);
        let center = |a: usize, n: usize| (n as f64 - 1.0) / 2.0 * spacing[a];
        let v = vol_from_fn(shape, spacing, |(_, z, y, x)| {
            0.3 * (z as f64 * spacing[0] - center(0, 6)) - 0.2 * (y as f64 * spacing[1] - center(1, 7))
                + 1.1 * (x as f64 * spacing[2] - center(2, 9))
        });
        for target in [1.0, 2.5, 3.3] {
            let r = resample_isotropic(&v, target).unwrap();
            let [nz, ny, nx] = r.spatial_shape();
            for ((_, z, y, x), val) in r.data().indexed_iter() {
                let pos = [
                    (z as f64 - (nz as f64 - 1.0) / 2.0) * target,
                    (y as f64 - (ny as f64 - 1.0) / 2.0) * target,
                    (x as f64 - (nx as f64 - 1.0) / 2.0) * target,
                ];
                let half = [center(0, 6), center(1, 7), center(2, 9)];
                if (0..3).any(|a| pos[a].abs() > half[a] + 1e-12) {
                    continue; // outside the input extent: border replication
                }
                let expect = 0.3 * pos[0] - 0.2 * pos[1] + 1.1 * pos[2];
                assert!((val - expect).abs() < 1e-6, "{val} vs {expect}");
            }
        }
    }

    #[test]
    fn repeat_uses_modular_indexing() {
        let v = vol_from_fn((25, 1, 1, 1), [1.0; 3], |(t, ..)| t as f64);
        let (r, rep) = repeat_temporal(&v, 40).unwrap();
        assert_eq!(r.len_t(), 40);
        for t in 25..40 {
            assert_eq!(r.frame(t)[[0, 0, 0]], (t - 25) as f64);
        }
        assert_eq!((rep.original_t, rep.repeated_to), (25, 40));

        let v12 = vol_from_fn((12, 1, 1, 1), [1.0; 3], |(t, ..)| t as f64);
        let (r12, _) = repeat_temporal(&v12, 40).unwrap();
        assert_eq!(r12.frame(39)[[0, 0, 0]], 3.0);

        let v40 = vol_from_fn((40, 1, 1, 1), [1.0; 3], |(t, ..)| t as f64);
        let (r40, rep40) = repeat_temporal(&v40, 40).unwrap();
        assert_eq!(r40, v40);
        assert_eq!(rep40.repeated_to, 40);
        assert!(repeat_temporal(&v40, 39).is_err());
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let v = vol_from_fn((2, 2, 2, 2), [1.0; 3], |_| 3.25);
        assert!(matches!(clip_standardize(&v, 0.999), Err(VolumeError::Degenerate)));
    }

    #[test]
    fn standardized_input_is_nearly_unchanged() {
        // symmetric +-1 pattern: mean 0, std 1, max equals the 0.999 quantile
        let v = vol_from_fn((2, 4, 4, 4), [1.0; 3], |(t, z, y, x)| {
            if (t + z + y + x) % 2 == 0 { 1.0 } else { -1.0 }
        });
        let (out, report) = clip_standardize(&v, 0.999).unwrap();
        for (a, b) in out.data().iter().zip(v.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(report.clip_bounds, Some((-1.0, 1.0)));
    }

    #[test]
    fn crop_and_pad_center() {
        let v = vol_from_fn((2, 1, 4, 4), [1.0; 3], |(_, _, y, x)| (y * 4 + x) as f64);
        let c = crop_or_pad(&v, [1, 2, 2], 0.0).unwrap();
        assert_eq!(c.frame(0)[[0, 0, 0]], 5.0);
        let p = crop_or_pad(&v, [1, 6, 6], -1.0).unwrap();
        assert_eq!(p.frame(0)[[0, 0, 0]], -1.0);
        assert_eq!(p.frame(0)[[0, 1, 1]], 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn standardization_moments(seed in prop::collection::vec(-50.0f64..50.0, 2 * 27)) {
            let v = vol_from_fn((2, 3, 3, 3), [1.0; 3], |(t, z, y, x)| seed[t * 27 + z * 9 + y * 3 + x]);
            if let Ok((out, _)) = clip_standardize(&v, 0.999) {
                let vals = out.data().as_slice().unwrap();
                prop_assert!(stats::mean(vals).unwrap().abs() < 1e-6);
                prop_assert!((stats::std_dev(vals).unwrap() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn resample_has_no_overshoot(
            seed in prop::collection::vec(-5.0f64..5.0, 2 * 4 * 5 * 3),
            target in 0.4f64..3.0,
        ) {
            let v = vol_from_fn((2, 4, 5, 3), [1.0, 1.5, 0.8], |(t, z, y, x)| seed[((t * 4 + z) * 5 + y) * 3 + x]);
            let lo = seed.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = seed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let r = resample_isotropic(&v, target).unwrap();
            prop_assert!(r.data().iter().all(|&x| x >= lo && x <= hi));
        }

        #[test]
        fn repeat_then_truncate_is_identity(t in 2usize..9, extra in 0usize..12) {
            let v = vol_from_fn((t, 2, 1, 2), [1.0; 3], |(a, b, c, d)| (a * 13 + b * 5 + c * 3 + d) as f64);
            let (r, _) = repeat_temporal(&v, t + extra).unwrap();
            prop_assert_eq!(r.truncated(t).unwrap(), v);
        }
    }
}
