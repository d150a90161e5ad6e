//! Separable affine transform families and the cube ↔ parameter mapping.
//!
//! Each family has three parameters. Rotation, scale and skew are expressed in
//! cube coordinates `c ∈ [-1, 1]`; translation is in millimetres. Linear parts
//! act about a fixed center (normally the fixed image's physical center):
//!
//! `M = T(center) · L · T(-center) · T(t)`

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the translation cube, in mm.
pub const TRANSLATION_HALF_RANGE_MM: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Translation,
    Rotation,
    Scale,
    Skew,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::Translation,
        TransformKind::Rotation,
        TransformKind::Scale,
        TransformKind::Skew,
    ];

    /// Half-width of the cube range for this family.
    pub fn half_range(self) -> f64 {
        match self {
            TransformKind::Translation => TRANSLATION_HALF_RANGE_MM,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Translation => "translation",
            TransformKind::Rotation => "rotation",
            TransformKind::Scale => "scale",
            TransformKind::Skew => "skew",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(TransformKind::Translation),
            "rotation" => Ok(TransformKind::Rotation),
            "scale" => Ok(TransformKind::Scale),
            "skew" => Ok(TransformKind::Skew),
            other => Err(Error::InvalidArgument(format!("unknown transform kind `{other}`"))),
        }
    }
}

/// Three parameters of one transform family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub kind: TransformKind,
    pub p: [f64; 3],
}

impl AffineParams {
    pub fn new(kind: TransformKind, p: [f64; 3]) -> Result<Self> {
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite parameters {p:?}")));
        }
        if kind != TransformKind::Translation && p.iter().any(|x| x.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{kind} cube coordinates must lie in [-1, 1], got {p:?}"
            )));
        }
        Ok(Self { kind, p })
    }

    pub fn identity(kind: TransformKind) -> Self {
        Self { kind, p: [0.0; 3] }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            kind: TransformKind::Translation,
            p: t,
        }
    }
}

/// Map a cube index to the parameters it represents.
///
/// Each axis is mapped linearly onto `[-half_range, half_range]`, with the
/// middle index `(R-1)/2` at the identity.
pub fn cube_index_to_params(idx: [usize; 3], resolution: usize, kind: TransformKind) -> Result<AffineParams> {
    if resolution < 3 || resolution % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "cube resolution must be odd and at least 3, got {resolution}"
        )));
    }
    if idx.iter().any(|&i| i >= resolution) {
        return Err(Error::IndexOutOfRange {
            index: idx,
            limit: resolution,
        });
    }
    let half = ((resolution - 1) / 2) as f64;
    let range = kind.half_range();
    let p = idx.map(|i| range * (i as f64 - half) / half);
    Ok(AffineParams { kind, p })
}

/// The per-axis parameter value of every cube index, `table[i]` for index `i`.
pub fn axis_values(resolution: usize, kind: TransformKind) -> Result<Vec<f64>> {
    (0..resolution)
        .map(|i| cube_index_to_params([i, 0, 0], resolution, kind).map(|p| p.p[0]))
        .collect()
}

/// Scale factor for a scale cube coordinate: `1 + c` above zero and
/// `1 / (1 + |c|)` below, so `f(c) · f(-c) = 1` and `c ∈ [-1, 1]` spans `[0.5, 2]`.
pub fn scale_factor(c: f64) -> f64 {
    if c >= 0.0 {
        1.0 + c
    } else {
        1.0 / (1.0 - c)
    }
}

/// Rotation angle (radians) for a rotation cube coordinate, `θ = 2·asin(c)`.
pub fn rotation_angle(c: f64) -> f64 {
    2.0 * c.clamp(-1.0, 1.0).asin()
}

/// Order in which per-axis rotations are composed. `Zyx` means
/// `R = Rz · Ry · Rx`, so the x rotation acts first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationOrder {
    #[default]
    Zyx,
    Zxy,
    Yxz,
    Yzx,
    Xyz,
    Xzy,
}

impl RotationOrder {
    /// Axes from leftmost to rightmost factor.
    fn axes(self) -> [usize; 3] {
        match self {
            RotationOrder::Zyx => [2, 1, 0],
            RotationOrder::Zxy => [2, 0, 1],
            RotationOrder::Yxz => [1, 0, 2],
            RotationOrder::Yzx => [1, 2, 0],
            RotationOrder::Xyz => [0, 1, 2],
            RotationOrder::Xzy => [0, 2, 1],
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

const I3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn axis_rotation(axis: usize, theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    match axis {
        0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        _ => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

/// 4×4 homogeneous matrix acting on physical (mm) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMatrix {
    pub m: [[f64; 4]; 4],
}

impl AffineMatrix {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { m }
    }

    pub fn from_linear_translation(l: &Mat3, t: [f64; 3]) -> Self {
        let mut m = Self::identity().m;
        for r in 0..3 {
            m[r][..3].copy_from_slice(&l[r]);
            m[r][3] = t[r];
        }
        Self { m }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::from_linear_translation(&I3, t)
    }

    /// `self · other`: `other` is applied first.
    pub fn compose(&self, other: &AffineMatrix) -> AffineMatrix {
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        AffineMatrix { m }
    }

    pub fn linear(&self) -> Mat3 {
        std::array::from_fn(|r| std::array::from_fn(|c| self.m[r][c]))
    }

    pub fn determinant(&self) -> f64 {
        let a = self.linear();
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Largest elementwise deviation from `other`.
    pub fn max_abs_diff(&self, other: &AffineMatrix) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn apply_point(m: &AffineMatrix, pt: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|r| m.m[r][0] * pt[0] + m.m[r][1] * pt[1] + m.m[r][2] * pt[2] + m.m[r][3])
}

/// Linear part of a non-translation family.
fn linear_part(p: &AffineParams, order: RotationOrder) -> Mat3 {
    match p.kind {
        TransformKind::Translation => I3,
        TransformKind::Rotation => order
            .axes()
            .iter()
            .fold(I3, |acc, &axis| mat3_mul(&acc, &axis_rotation(axis, rotation_angle(p.p[axis])))),
        TransformKind::Scale => {
            let f = p.p.map(scale_factor);
            [[f[0], 0.0, 0.0], [0.0, f[1], 0.0], [0.0, 0.0, f[2]]]
        }
        TransformKind::Skew => [[1.0, p.p[0], p.p[1]], [0.0, 1.0, p.p[2]], [0.0, 0.0, 1.0]],
    }
}

/// Realize parameters as a matrix about `center`, with Z·Y·X rotation order.
pub fn params_to_matrix(p: &AffineParams, center: [f64; 3]) -> AffineMatrix {
    params_to_matrix_ordered(p, center, RotationOrder::default())
}

pub fn params_to_matrix_ordered(p: &AffineParams, center: [f64; 3], order: RotationOrder) -> AffineMatrix {
    if p.kind == TransformKind::Translation {
        return AffineMatrix::translation(p.p);
    }
    let l = linear_part(p, order);
    // L(x - c) + c
    let lc: [f64; 3] = std::array::from_fn(|r| (0..3).map(|k| l[r][k] * center[k]).sum());
    let t: [f64; 3] = std::array::from_fn(|r| center[r] - lc[r]);
    AffineMatrix::from_linear_translation(&l, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn worked_mapping_example() {
        let p = cube_index_to_params([26, 27, 29], 51, TransformKind::Translation).unwrap();
        assert_eq!(p.p, [6.0, 12.0, 24.0]);
        let p = cube_index_to_params([25, 25, 25], 51, TransformKind::Translation).unwrap();
        assert_eq!(p.p, [0.0, 0.0, 0.0]);
        let p = cube_index_to_params([0, 0, 0], 51, TransformKind::Translation).unwrap();
        assert_eq!(p.p, [-150.0, -150.0, -150.0]);
        let p = cube_index_to_params([50, 0, 25], 51, TransformKind::Rotation).unwrap();
        assert_eq!(p.p, [1.0, -1.0, 0.0]);
    }

    #[test]
    fn mapping_rejects_bad_input() {
        assert!(matches!(
            cube_index_to_params([51, 0, 0], 51, TransformKind::Translation),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(cube_index_to_params([0, 0, 0], 50, TransformKind::Translation).is_err());
    }

    #[test]
    fn rotation_identity_and_half_turn() {
        let c = [10.0, 20.0, 30.0];
        let m = params_to_matrix(&AffineParams::identity(TransformKind::Rotation), c);
        assert!(m.max_abs_diff(&AffineMatrix::identity()) <= 1e-12);

        let m = params_to_matrix(&AffineParams::new(TransformKind::Rotation, [1.0, 0.0, 0.0]).unwrap(), c);
        let out = apply_point(&m, [c[0], c[1] + 1.0, c[2]]);
        let want = [c[0], c[1] - 1.0, c[2]];
        for a in 0..3 {
            assert!((out[a] - want[a]).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn scale_extremes() {
        let m = params_to_matrix(&AffineParams::new(TransformKind::Scale, [1.0; 3]).unwrap(), [0.0; 3]);
        assert_eq!([m.m[0][0], m.m[1][1], m.m[2][2]], [2.0, 2.0, 2.0]);
        let m = params_to_matrix(&AffineParams::new(TransformKind::Scale, [-1.0; 3]).unwrap(), [0.0; 3]);
        assert_eq!([m.m[0][0], m.m[1][1], m.m[2][2]], [0.5, 0.5, 0.5]);
    }

    #[test]
    fn apply_point_examples() {
        assert_eq!(apply_point(&AffineMatrix::identity(), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        let t = params_to_matrix(&AffineParams::translation([6.0, 12.0, 24.0]), [5.0; 3]);
        assert_eq!(apply_point(&t, [0.0; 3]), [6.0, 12.0, 24.0]);
        // 90° about z: c = sin(45°)
        let c = (PI / 4.0).sin();
        let r = params_to_matrix(&AffineParams::new(TransformKind::Rotation, [0.0, 0.0, c]).unwrap(), [0.0; 3]);
        let out = apply_point(&r, [1.0, 0.0, 0.0]);
        assert!(out[0].abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12 && out[2].abs() < 1e-12);
    }

    #[test]
    fn skew_matrix_layout() {
        let m = params_to_matrix(&AffineParams::new(TransformKind::Skew, [0.1, 0.2, 0.3]).unwrap(), [0.0; 3]);
        assert_eq!(m.linear(), [[1.0, 0.1, 0.2], [0.0, 1.0, 0.3], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn center_index_is_identity_for_all_kinds() {
        for r in [3, 11, 51] {
            for kind in TransformKind::ALL {
                let c = (r - 1) / 2;
                let p = cube_index_to_params([c, c, c], r, kind).unwrap();
                let m = params_to_matrix(&p, [12.5, -3.0, 40.0]);
                assert!(m.max_abs_diff(&AffineMatrix::identity()) <= 1e-12, "{kind} R={r}");
            }
        }
    }

    fn mirror(idx: [usize; 3], r: usize) -> [usize; 3] {
        idx.map(|i| r - 1 - i)
    }

    proptest! {
        #[test]
        fn translation_mirror_indices_invert(i in 0usize..51, j in 0usize..51, k in 0usize..51) {
            let center = [80.0, 90.0, 70.0];
            let p = cube_index_to_params([i, j, k], 51, TransformKind::Translation).unwrap();
            let q = cube_index_to_params(mirror([i, j, k], 51), 51, TransformKind::Translation).unwrap();
            let m = params_to_matrix(&q, center).compose(&params_to_matrix(&p, center));
            prop_assert!(m.max_abs_diff(&AffineMatrix::identity()) <= 1e-9);
        }

        // Euler compositions only invert axis by axis; a single-axis rotation
        // and its mirror index compose to the identity.
        #[test]
        fn single_axis_rotation_mirror_inverts(axis in 0usize..3, i in 0usize..51) {
            let center = [80.0, 90.0, 70.0];
            let mut idx = [25usize; 3];
            idx[axis] = i;
            let p = cube_index_to_params(idx, 51, TransformKind::Rotation).unwrap();
            let q = cube_index_to_params(mirror(idx, 51), 51, TransformKind::Rotation).unwrap();
            let m = params_to_matrix(&q, center).compose(&params_to_matrix(&p, center));
            prop_assert!(m.max_abs_diff(&AffineMatrix::identity()) <= 1e-9);
        }

        // For general Euler triples the inverse is the mirrored angles composed
        // in reverse order.
        #[test]
        fn rotation_mirror_inverts_in_reverse_order(i in 0usize..51, j in 0usize..51, k in 0usize..51) {
            let center = [80.0, 90.0, 70.0];
            let p = cube_index_to_params([i, j, k], 51, TransformKind::Rotation).unwrap();
            let q = cube_index_to_params(mirror([i, j, k], 51), 51, TransformKind::Rotation).unwrap();
            let fwd = params_to_matrix_ordered(&p, center, RotationOrder::Zyx);
            let back = params_to_matrix_ordered(&q, center, RotationOrder::Xyz);
            prop_assert!(back.compose(&fwd).max_abs_diff(&AffineMatrix::identity()) <= 1e-9);
        }

        #[test]
        fn rotations_are_proper_orthogonal(c in prop::array::uniform3(-1.0f64..=1.0)) {
            let m = params_to_matrix(&AffineParams::new(TransformKind::Rotation, c).unwrap(), [1.0, 2.0, 3.0]);
            let l = m.linear();
            for a in 0..3 {
                for b in 0..3 {
                    let dot: f64 = (0..3).map(|k| l[k][a] * l[k][b]).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() <= 1e-9);
                }
            }
            prop_assert!((m.determinant() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(m.m[3], [0.0, 0.0, 0.0, 1.0]);
        }

        #[test]
        fn scale_reciprocal_and_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            prop_assert!((scale_factor(a) * scale_factor(-a) - 1.0).abs() <= 1e-12);
            if a < b {
                prop_assert!(scale_factor(a) < scale_factor(b));
            }
        }

        #[test]
        fn composition_is_associative(
            t in prop::array::uniform3(-50.0f64..50.0),
            c in prop::array::uniform3(-1.0f64..=1.0),
            s in prop::array::uniform3(-1.0f64..=1.0),
            pt in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let center = [3.0, -4.0, 5.0];
            let a = params_to_matrix(&AffineParams::translation(t), center);
            let b = params_to_matrix(&AffineParams::new(TransformKind::Rotation, c).unwrap(), center);
            let d = params_to_matrix(&AffineParams::new(TransformKind::Skew, s).unwrap(), center);
            let left = a.compose(&b).compose(&d);
            let right = a.compose(&b.compose(&d));
            prop_assert!(left.max_abs_diff(&right) <= 1e-9);
            let via = apply_point(&a, apply_point(&b, apply_point(&d, pt)));
            let direct = apply_point(&left, pt);
            for k in 0..3 {
                prop_assert!((via[k] - direct[k]).abs() <= 1e-9);
            }
        }
    }
}
