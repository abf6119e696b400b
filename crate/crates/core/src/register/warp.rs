use ndarray::{Array3, ArrayView3};
use rayon::prelude::*;

use super::{RegistrationError, VectorField3D};
use crate::imgvol::Lattice;

/// Resamples `moving` at `p + u(p)` for every voxel `p` (spatial-transformer
/// warp with trilinear interpolation and border replication).
pub fn warp(moving: ArrayView3<'_, f64>, field: &VectorField3D) -> Result<Array3<f64>, RegistrationError> {
    let (z, y, x) = moving.dim();
    if [z, y, x] != field.dims() {
        return Err(RegistrationError::ShapeMismatch(format!(
            "moving {:?} vs field {:?}",
            [z, y, x],
            field.dims()
        )));
    }
    let owned = moving.as_standard_layout();
    let lat = Lattice::new(owned.as_slice().unwrap(), [z, y, x]);
    let (vals, _) = warp_lattice(&lat, field.as_slice(), false);
    Ok(Array3::from_shape_vec((z, y, x), vals).expect("shape"))
}

/// Warped intensities and, optionally, the interpolant gradient at every
/// displaced position (3 values per voxel).
pub(crate) fn warp_lattice(lat: &Lattice<'_>, disp: &[f64], with_grad: bool) -> (Vec<f64>, Vec<f64>) {
    let [nz, ny, nx] = lat.dims();
    let plane = ny * nx;
    let mut vals = vec![0.0; nz * plane];
    let mut grads = vec![0.0; if with_grad { nz * plane * 3 } else { 0 }];
    let row = |z: usize, y: usize, x: usize| {
        let i = ((z * ny + y) * nx + x) * 3;
        [z as f64 + disp[i], y as f64 + disp[i + 1], x as f64 + disp[i + 2]]
    };
    if with_grad {
        vals.par_chunks_mut(plane)
            .zip(grads.par_chunks_mut(plane * 3))
            .enumerate()
            .for_each(|(z, (v, g))| {
                for y in 0..ny {
                    for x in 0..nx {
                        let k = y * nx + x;
                        let (s, d) = lat.sample_grad(row(z, y, x));
                        v[k] = s;
                        g[k * 3..k * 3 + 3].copy_from_slice(&d);
                    }
                }
            });
    } else {
        vals.par_chunks_mut(plane).enumerate().for_each(|(z, v)| {
            for y in 0..ny {
                for x in 0..nx {
                    v[y * nx + x] = lat.sample(row(z, y, x));
                }
            }
        });
    }
    (vals, grads)
}
