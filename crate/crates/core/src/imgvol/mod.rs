//! 4D image data model, file ingestion and the preprocessing chain.
//!
//! A [`Volume4D`] stores a cine sequence as a `(t, z, y, x)` array of
//! intensities together with its physical voxel spacing in millimeters.

mod io;
mod preprocess;
mod sample;

use std::path::PathBuf;

use ndarray::{Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    load_array, load_volume4d, save_array, save_nrrd, save_volume4d, RawHeader, VolumeFormat,
};
pub use preprocess::{
    clip_standardize, crop_or_pad, preprocess, repeat_temporal, resample_isotropic,
    PreprocessConfig, PreprocessReport,
};
pub use sample::{trilinear_sample, trilinear_sample_grad, Lattice};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid header field `{field}` in `{path}`: {message}")]
    Header {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("non-finite intensity at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid volume: {0}")]
    Invalid(String),
    #[error("degenerate constant volume")]
    Degenerate,
}

impl VolumeError {
    pub(crate) fn header(path: &std::path::Path, field: &str, message: impl Into<String>) -> Self {
        VolumeError::Header {
            path: path.to_path_buf(),
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Voxel spacing `(sz, sy, sx)` in millimeters.
pub type Spacing = [f64; 3];

/// A `T x Z x Y x X` scalar image sequence.
///
/// Invariants (checked by [`Volume4D::new`]): `T >= 2`, every spatial
/// extent is positive, all intensities are finite and all spacing
/// components are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    data: Array4<f64>,
    spacing: Spacing,
    frame_duration_ms: Option<f64>,
}

impl Volume4D {
    pub fn new(
        data: Array4<f64>,
        spacing: Spacing,
        frame_duration_ms: Option<f64>,
    ) -> Result<Self, VolumeError> {
        let (t, z, y, x) = data.dim();
        if t < 2 {
            return Err(VolumeError::Invalid(format!(
                "a sequence needs at least 2 frames, got {t}"
            )));
        }
        if z == 0 || y == 0 || x == 0 {
            return Err(VolumeError::Invalid(format!(
                "spatial shape must be positive, got ({z}, {y}, {x})"
            )));
        }
        if let Some(s) = spacing.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(VolumeError::Invalid(format!(
                "spacing components must be positive, got {s}"
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite { index });
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self {
            data,
            spacing,
            frame_duration_ms,
        })
    }

    /// `(T, Z, Y, X)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn len_t(&self) -> usize {
        self.data.dim().0
    }

    pub fn spatial_shape(&self) -> [usize; 3] {
        let (_, z, y, x) = self.data.dim();
        [z, y, x]
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn frame_duration_ms(&self) -> Option<f64> {
        self.frame_duration_ms
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(0), t)
    }

    pub fn frames(&self) -> impl Iterator<Item = ArrayView3<'_, f64>> {
        self.data.outer_iter()
    }

    /// Keeps the first `len` frames.
    pub fn truncated(&self, len: usize) -> Result<Self, VolumeError> {
        if len > self.len_t() {
            return Err(VolumeError::Invalid(format!(
                "cannot truncate {} frames to {len}",
                self.len_t()
            )));
        }
        let data = self
            .data
            .slice(ndarray::s![..len, .., .., ..])
            .to_owned();
        Self::new(data, self.spacing, self.frame_duration_ms)
    }
}

/// Serializable summary of a volume's geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    pub shape: [usize; 4],
    pub spacing_mm: Spacing,
}

impl From<&Volume4D> for VolumeGeometry {
    fn from(v: &Volume4D) -> Self {
        let (t, z, y, x) = v.shape();
        Self {
            shape: [t, z, y, x],
            spacing_mm: v.spacing(),
        }
    }
}
