//! Read-only NIfTI-1 subset: uncompressed, little-endian, int16/uint16/float32.
//!
//! qform/sform are consulted only for the origin; no reorientation is done.

use std::fs;
use std::path::Path;

use super::rawjson::decode_le;
use super::{DType, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_UINT16: i16 = 512;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::InvalidHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_SIZE {
        return Err(bad("file shorter than the 348-byte header"));
    }
    let sizeof_hdr = i32_at(&bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(bad("big-endian files are not supported"));
        }
        return Err(bad("sizeof_hdr is not 348"));
    }
    let magic = &bytes[344..348];
    let single_file = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(bad("magic is neither `n+1` nor `ni1`")),
    };

    let ndim = i16_at(&bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(bad("dim[0] outside [1, 7]"));
    }
    let mut dims = [1usize; 3];
    for a in 0..7 {
        let d = i16_at(&bytes, 42 + 2 * a);
        if a < ndim as usize {
            if d < 1 {
                return Err(bad("non-positive dimension"));
            }
            if a < 3 {
                dims[a] = d as usize;
            } else if d != 1 {
                return Err(bad("only 3D volumes are supported"));
            }
        }
    }

    let dtype = match i16_at(&bytes, 70) {
        DT_INT16 => DType::I16,
        DT_UINT16 => DType::U16,
        DT_FLOAT32 => DType::F32,
        other => return Err(Error::UnsupportedDatatype(format!("NIfTI datatype code {other}"))),
    };

    let mut spacing = [1.0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let p = f32_at(&bytes, 80 + 4 * a).abs() as f64;
        if !(p > 0.0) || !p.is_finite() {
            return Err(bad("pixdim must be positive"));
        }
        *s = p;
    }

    let qform_code = i16_at(&bytes, 252);
    let sform_code = i16_at(&bytes, 254);
    let origin = if sform_code > 0 {
        [
            f32_at(&bytes, 292) as f64,
            f32_at(&bytes, 308) as f64,
            f32_at(&bytes, 324) as f64,
        ]
    } else if qform_code > 0 {
        [
            f32_at(&bytes, 268) as f64,
            f32_at(&bytes, 272) as f64,
            f32_at(&bytes, 276) as f64,
        ]
    } else {
        [0.0; 3]
    };

    let expected = dims.iter().product::<usize>() * dtype.size();
    let owned_img;
    let payload: &[u8] = if single_file {
        let offset = f32_at(&bytes, 108);
        if offset < HEADER_SIZE as f32 || offset.fract() != 0.0 {
            return Err(bad("vox_offset before end of header"));
        }
        let offset = offset as usize;
        if offset > bytes.len() {
            return Err(Error::SizeMismatch {
                expected,
                actual: 0,
            });
        }
        &bytes[offset..]
    } else {
        let img = path.with_extension("img");
        owned_img = fs::read(&img).map_err(|e| Error::io(&img, e))?;
        &owned_img
    };
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }

    let mut data = decode_le(payload, dtype);
    let slope = f32_at(&bytes, 112);
    let inter = f32_at(&bytes, 116);
    let mut dtype = dtype;
    if slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0) {
        data.iter_mut().for_each(|x| *x = *x * slope + inter);
        dtype = DType::F32;
    }
    Volume::new(dims, spacing, origin, dtype, data)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Minimal single-file NIfTI-1 image, used by tests only.
    pub(crate) fn nifti_bytes(dims: [i16; 3], pixdim: [f32; 3], datatype: i16, payload: &[u8]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        h[40..42].copy_from_slice(&3i16.to_le_bytes());
        for (a, d) in dims.iter().enumerate() {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        for (a, p) in pixdim.iter().enumerate() {
            h[80 + 4 * a..84 + 4 * a].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(payload);
        h
    }

    #[test]
    fn reads_header_dims_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t1.nii");
        let n = 176 * 256 * 176;
        let payload = vec![0u8; n * 2];
        fs::write(&path, nifti_bytes([176, 256, 176], [1.0; 3], DT_INT16, &payload)).unwrap();
        let v = read_nifti(&path).unwrap();
        assert_eq!(v.dims(), [176, 256, 176]);
        assert_eq!(v.spacing(), [1.0; 3]);
        assert_eq!(v.dtype(), DType::I16);
    }

    #[test]
    fn decodes_little_endian_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        let vals: Vec<f32> = vec![-1.5, 0.0, 2.25, 1e6, 3.0, 4.0, 5.0, 6.0];
        let payload: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, nifti_bytes([2, 2, 2], [0.7; 3], DT_FLOAT32, &payload)).unwrap();
        let v = read_nifti(&path).unwrap();
        assert_eq!(v.data(), vals.as_slice());
        assert!((v.spacing()[0] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = read_nifti(&dir.path().join("nope.nii"));
        assert!(matches!(missing, Err(Error::Io { .. })));

        let p = dir.path().join("dt.nii");
        fs::write(&p, nifti_bytes([2, 2, 2], [1.0; 3], 2, &[0u8; 8])).unwrap();
        assert!(matches!(read_nifti(&p), Err(Error::UnsupportedDatatype(_))));

        let p = dir.path().join("short.nii");
        fs::write(&p, nifti_bytes([2, 2, 2], [1.0; 3], DT_UINT16, &[0u8; 14])).unwrap();
        assert!(matches!(read_nifti(&p), Err(Error::SizeMismatch { expected: 16, actual: 14 })));

        let p = dir.path().join("magic.nii");
        let mut b = nifti_bytes([2, 2, 2], [1.0; 3], DT_UINT16, &[0u8; 16]);
        b[344..348].copy_from_slice(b"abc\0");
        fs::write(&p, b).unwrap();
        assert!(matches!(read_nifti(&p), Err(Error::InvalidHeader { .. })));
    }
}
