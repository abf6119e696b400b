use std::path::Path;

use ndarray::{Array3, Array4};

use super::RegistrationError;
use crate::imgvol::{load_array, save_array, RawHeader, VolumeError};

/// Dense per-voxel displacement `(dz, dy, dx)` in voxel units of an
/// isotropic grid with spacing `grid_spacing` mm. Shape `(Z, Y, X, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3D {
    disp: Array4<f64>,
    grid_spacing: f64,
}

impl VectorField3D {
    pub fn new(disp: Array4<f64>, grid_spacing: f64) -> Result<Self, RegistrationError> {
        if disp.dim().3 != 3 {
            return Err(RegistrationError::InvalidField(format!(
                "last axis must hold 3 components, got {}",
                disp.dim().3
            )));
        }
        if !(grid_spacing > 0.0 && grid_spacing.is_finite()) {
            return Err(RegistrationError::InvalidField(format!(
                "grid spacing must be positive, got {grid_spacing}"
            )));
        }
        if disp.iter().any(|v| !v.is_finite()) {
            return Err(RegistrationError::InvalidField("non-finite displacement".into()));
        }
        let disp = if disp.is_standard_layout() {
            disp
        } else {
            disp.as_standard_layout().into_owned()
        };
        Ok(Self { disp, grid_spacing })
    }

    pub fn zeros(dims: [usize; 3], grid_spacing: f64) -> Self {
        Self {
            disp: Array4::zeros((dims[0], dims[1], dims[2], 3)),
            grid_spacing,
        }
    }

    /// Builds a field by evaluating `f(z, y, x)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        grid_spacing: f64,
        mut f: impl FnMut(usize, usize, usize) -> [f64; 3],
    ) -> Self {
        let mut disp = Array4::zeros((dims[0], dims[1], dims[2], 3));
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let v = f(z, y, x);
                    for c in 0..3 {
                        disp[[z, y, x, c]] = v[c];
                    }
                }
            }
        }
        Self { disp, grid_spacing }
    }

    pub fn dims(&self) -> [usize; 3] {
        let (z, y, x, _) = self.disp.dim();
        [z, y, x]
    }

    pub fn grid_spacing(&self) -> f64 {
        self.grid_spacing
    }

    pub fn disp(&self) -> &Array4<f64> {
        &self.disp
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        self.disp.as_slice().expect("standard layout")
    }

    #[inline]
    pub fn vector(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        [
            self.disp[[z, y, x, 0]],
            self.disp[[z, y, x, 1]],
            self.disp[[z, y, x, 2]],
        ]
    }

    /// Euclidean norm per voxel, in voxels.
    pub fn magnitudes(&self) -> Array3<f64> {
        let [z, y, x] = self.dims();
        let s = self.as_slice();
        Array3::from_shape_fn((z, y, x), |(a, b, c)| {
            let i = ((a * y + b) * x + c) * 3;
            (s[i] * s[i] + s[i + 1] * s[i + 1] + s[i + 2] * s[i + 2]).sqrt()
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            disp: &self.disp * factor,
            grid_spacing: self.grid_spacing,
        }
    }

    /// Rounds every component to `f32` precision, as persisted on disk.
    pub fn quantized_f32(&self) -> Self {
        Self {
            disp: self.disp.mapv(|v| v as f32 as f64),
            grid_spacing: self.grid_spacing,
        }
    }
}

/// Writes a field as raw+json with shape `[Z, Y, X, 3]`.
pub fn save_field(field: &VectorField3D, path: &Path) -> Result<(), VolumeError> {
    let [z, y, x] = field.dims();
    let header = RawHeader::new(vec![z, y, x, 3], vec![field.grid_spacing(); 3]);
    save_array(path, &header, field.as_slice())
}

pub fn load_field(path: &Path) -> Result<VectorField3D, VolumeError> {
    let (header, data) = load_array(path)?;
    if header.shape.len() != 4 || header.shape[3] != 3 {
        return Err(VolumeError::Header {
            path: path.to_path_buf(),
            field: "shape".into(),
            message: format!("expected [Z, Y, X, 3], found {:?}", header.shape),
        });
    }
    let s = &header.shape;
    let disp = Array4::from_shape_vec((s[0], s[1], s[2], 3), data).expect("length checked");
    let spacing = header.spacing_mm.first().copied().unwrap_or(1.0);
    VectorField3D::new(disp, spacing).map_err(|e| VolumeError::Invalid(e.to_string()))
}
