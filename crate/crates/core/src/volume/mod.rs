//! Scalar volumes, intensity normalization and bitmask binning.
//!
//! Voxel values are held as `f32` regardless of the on-disk type; every
//! supported storage type (`u16`, `i16`, `f32`) round-trips exactly through
//! that representation. The [`DType`] tag records how the payload is written.

mod nifti;
mod rawjson;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nifti::read_nifti;
pub use rawjson::{read_rawjson, sidecar_paths, write_rawjson, RawJsonHeader};

/// Largest normalized intensity. The full-range map sends `x_max` here.
pub const NORMALIZED_MAX: f32 = 65535.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U16,
    I16,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U16 | DType::I16 => 2,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti1,
    RawJson,
}

impl std::str::FromStr for VolumeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nifti1" | "nifti" => Ok(VolumeFormat::Nifti1),
            "rawjson" => Ok(VolumeFormat::RawJson),
            other => Err(Error::InvalidArgument(format!("unknown volume format `{other}`"))),
        }
    }
}

impl VolumeFormat {
    /// Guess from the file name: `.nii` and `.hdr` are NIfTI, everything else rawjson.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") | Some("hdr") | Some("img") => VolumeFormat::Nifti1,
            _ => VolumeFormat::RawJson,
        }
    }
}

/// Dense 3D scalar image, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: DType,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        dtype: DType,
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected: expected * dtype.size(),
                actual: data.len() * dtype.size(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            dtype,
            data,
        })
    }

    /// A volume filled with one value.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, [0.0; 3], DType::F32, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.linear_index(i, j, k)]
    }

    /// Physical position (mm) of a voxel center.
    pub fn voxel_to_physical(&self, idx: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + idx[a] * self.spacing[a])
    }

    /// Continuous voxel coordinates of a physical point.
    pub fn physical_to_voxel(&self, pt: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (pt[a] - self.origin[a]) / self.spacing[a])
    }

    /// Physical center of the voxel grid.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + 0.5 * (self.dims[a] as f64 - 1.0) * self.spacing[a])
    }

    pub fn with_geometry(mut self, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        self.origin = origin;
        Ok(self)
    }

    fn map_data(&self, dtype: DType, data: Vec<f32>) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            dtype,
            data,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Number of significant bits kept per image, with the matching 16-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningMask {
    bits: u8,
}

impl BinningMask {
    pub fn new(bits: u8) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::InvalidArgument(format!("binning bits must be in [1, 16], got {bits}")));
        }
        Ok(Self { bits })
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn mask(self) -> u16 {
        (((1u32 << self.bits) - 1) << (16 - self.bits)) as u16
    }

    /// Right shift that turns a masked value into a bin index.
    pub fn shift(self) -> u32 {
        16 - self.bits as u32
    }

    pub fn bins(self) -> usize {
        1 << self.bits
    }
}

/// Load a volume. No normalization is applied.
pub fn load_volume(path: impl AsRef<Path>, format: VolumeFormat) -> Result<Volume> {
    match format {
        VolumeFormat::Nifti1 => read_nifti(path.as_ref()),
        VolumeFormat::RawJson => read_rawjson(path.as_ref()),
    }
}

/// Write a volume as a rawjson pair (`.json` sidecar and `.raw` payload).
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_rawjson(v, path.as_ref())
}

/// Affine spread of intensities onto `[0, 65535]`, rounded to integers.
///
/// Constant volumes map to all zeros.
pub fn normalize_intensities(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let data = if range > 0.0 {
        let scale = NORMALIZED_MAX as f64 / range;
        v.data
            .iter()
            .map(|&x| ((x as f64 - lo) * scale).round().clamp(0.0, NORMALIZED_MAX as f64) as f32)
            .collect()
    } else {
        vec![0.0; v.len()]
    };
    v.map_data(DType::U16, data)
}

/// Keep only the top `mask.bits()` bits of every voxel.
///
/// Values are first rounded and clamped into the 16-bit range, so the result
/// is well defined even on volumes that were not normalized.
pub fn apply_binning(v: &Volume, mask: BinningMask) -> Volume {
    let m = mask.mask();
    let data = v.data.iter().map(|&x| (to_u16(x) & m) as f32).collect();
    v.map_data(DType::U16, data)
}

/// Normalize and, when `bits` is set, bin. This is the preparation every
/// metric evaluation expects.
pub fn prepare(v: &Volume, bits: Option<u8>) -> Result<Volume> {
    let n = normalize_intensities(v);
    match bits {
        Some(b) => Ok(apply_binning(&n, BinningMask::new(b)?)),
        None => Ok(n),
    }
}

#[inline]
pub(crate) fn to_u16(x: f32) -> u16 {
    x.round().clamp(0.0, NORMALIZED_MAX) as u16
}
