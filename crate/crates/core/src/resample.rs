//! Sampling of the moving volume at transformed fixed-grid positions.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::AffineMatrix;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpKind {
    Nearest,
    Trilinear,
    Lanczos,
    FastLanczos,
}

/// Interpolation method; `radius` is the Lanczos support `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interpolator {
    pub kind: InterpKind,
    pub radius: usize,
}

pub const DEFAULT_LANCZOS_RADIUS: usize = 3;

impl Interpolator {
    pub const NEAREST: Interpolator = Interpolator::new(InterpKind::Nearest);
    pub const TRILINEAR: Interpolator = Interpolator::new(InterpKind::Trilinear);
    pub const LANCZOS: Interpolator = Interpolator::new(InterpKind::Lanczos);
    pub const FAST_LANCZOS: Interpolator = Interpolator::new(InterpKind::FastLanczos);

    pub const fn new(kind: InterpKind) -> Self {
        Self {
            kind,
            radius: DEFAULT_LANCZOS_RADIUS,
        }
    }
}

impl Default for Interpolator {
    fn default() -> Self {
        Self::NEAREST
    }
}

impl fmt::Display for Interpolator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            InterpKind::Nearest => "nearest",
            InterpKind::Trilinear => "trilinear",
            InterpKind::Lanczos => "lanczos",
            InterpKind::FastLanczos => "fastlanczos",
        };
        let lanczos = matches!(self.kind, InterpKind::Lanczos | InterpKind::FastLanczos);
        if lanczos && self.radius != DEFAULT_LANCZOS_RADIUS {
            write!(f, "{name}:{}", self.radius)
        } else {
            f.write_str(name)
        }
    }
}

impl FromStr for Interpolator {
    type Err = Error;

    /// `nearest`, `trilinear`, `lanczos`, `fastlanczos`; Lanczos variants take
    /// an optional `:a` radius suffix.
    fn from_str(s: &str) -> Result<Self> {
        let (name, radius) = match s.split_once(':') {
            Some((n, r)) => {
                let r: usize = r
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad Lanczos radius in `{s}`")))?;
                if r == 0 || r > 8 {
                    return Err(Error::InvalidArgument("Lanczos radius must be in [1, 8]".into()));
                }
                (n, r)
            }
            None => (s, DEFAULT_LANCZOS_RADIUS),
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "nearest" => InterpKind::Nearest,
            "trilinear" | "linear" => InterpKind::Trilinear,
            "lanczos" => InterpKind::Lanczos,
            "fastlanczos" => InterpKind::FastLanczos,
            _ => return Err(Error::InvalidArgument(format!("unknown interpolator `{s}`"))),
        };
        if radius != DEFAULT_LANCZOS_RADIUS && !matches!(kind, InterpKind::Lanczos | InterpKind::FastLanczos) {
            return Err(Error::InvalidArgument(format!("radius only applies to Lanczos, got `{s}`")));
        }
        Ok(Self { kind, radius })
    }
}

impl Serialize for Interpolator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Interpolator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What to do with fixed voxels whose mapped point leaves the moving volume.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutsidePolicy {
    /// Drop the pair.
    #[default]
    Exclude,
    /// Pair the fixed voxel with a moving intensity of zero.
    ZeroFill,
}

const SIN_TABLE_SIZE: usize = 4096;

fn sin_table() -> &'static [f64; SIN_TABLE_SIZE + 1] {
    static TABLE: OnceLock<Box<[f64; SIN_TABLE_SIZE + 1]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Box::new([0.0; SIN_TABLE_SIZE + 1]);
        for (i, v) in t.iter_mut().enumerate() {
            *v = (std::f64::consts::TAU * i as f64 / SIN_TABLE_SIZE as f64).sin();
        }
        t
    })
}

/// Table-driven sine: 4096 samples over one period, linearly interpolated.
pub fn fast_sin(x: f64) -> f64 {
    let table = sin_table();
    let turns = x / std::f64::consts::TAU;
    let pos = (turns - turns.floor()) * SIN_TABLE_SIZE as f64;
    let i = (pos as usize).min(SIN_TABLE_SIZE - 1);
    let f = pos - i as f64;
    table[i] + f * (table[i + 1] - table[i])
}

fn lanczos_with(x: f64, a: f64, sin: impl Fn(f64) -> f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= a {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    a * sin(px) * sin(px / a) / (px * px)
}

/// Lanczos kernel `sinc(x)·sinc(x/a)` on `|x| < a`.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    lanczos_with(x, a as f64, f64::sin)
}

pub fn fast_lanczos_kernel(x: f64, a: usize) -> f64 {
    lanczos_with(x, a as f64, fast_sin)
}

#[inline]
fn inside(c: &[f64; 3], dims: &[usize; 3]) -> bool {
    (0..3).all(|a| c[a] >= -0.5 && c[a] <= dims[a] as f64 - 0.5)
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn sample_nearest(v: &Volume, c: &[f64; 3]) -> f32 {
    let d = v.dims();
    let idx: [usize; 3] = std::array::from_fn(|a| clamp_index(c[a].round() as isize, d[a]));
    v.get(idx[0], idx[1], idx[2])
}

fn sample_trilinear(v: &Volume, c: &[f64; 3]) -> f32 {
    let d = v.dims();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut f = [0.0f64; 3];
    for a in 0..3 {
        let cc = c[a].clamp(0.0, d[a] as f64 - 1.0);
        let fl = cc.floor();
        lo[a] = fl as usize;
        hi[a] = (lo[a] + 1).min(d[a] - 1);
        f[a] = cc - fl;
    }
    let mut acc = 0.0f64;
    for (dz, wz) in [(lo[2], 1.0 - f[2]), (hi[2], f[2])] {
        if wz == 0.0 {
            continue;
        }
        for (dy, wy) in [(lo[1], 1.0 - f[1]), (hi[1], f[1])] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(lo[0], 1.0 - f[0]), (hi[0], f[0])] {
                if wx == 0.0 {
                    continue;
                }
                acc += wz * wy * wx * v.get(dx, dy, dz) as f64;
            }
        }
    }
    acc as f32
}

fn sample_lanczos(v: &Volume, c: &[f64; 3], a: usize, fast: bool) -> f32 {
    let d = v.dims();
    let a = a.clamp(1, 8);
    let taps = 2 * a;
    let mut idx = [[0usize; 16]; 3];
    let mut w = [[0.0f64; 16]; 3];
    for ax in 0..3 {
        let base = c[ax].floor() as isize - a as isize + 1;
        let mut sum = 0.0;
        for t in 0..taps {
            let i = base + t as isize;
            let x = c[ax] - i as f64;
            let k = if fast {
                fast_lanczos_kernel(x, a)
            } else {
                lanczos_kernel(x, a)
            };
            idx[ax][t] = clamp_index(i, d[ax]);
            w[ax][t] = k;
            sum += k;
        }
        for wt in w[ax][..taps].iter_mut() {
            *wt /= sum;
        }
    }
    let mut acc = 0.0f64;
    for tz in 0..taps {
        let wz = w[2][tz];
        if wz == 0.0 {
            continue;
        }
        for ty in 0..taps {
            let wzy = wz * w[1][ty];
            if wzy == 0.0 {
                continue;
            }
            let row = v.linear_index(0, idx[1][ty], idx[2][tz]);
            for tx in 0..taps {
                acc += wzy * w[0][tx] * v.data()[row + idx[0][tx]] as f64;
            }
        }
    }
    acc as f32
}

#[inline]
fn sample_voxel(v: &Volume, c: &[f64; 3], interp: Interpolator) -> f32 {
    match interp.kind {
        InterpKind::Nearest => sample_nearest(v, c),
        InterpKind::Trilinear => sample_trilinear(v, c),
        InterpKind::Lanczos => sample_lanczos(v, c, interp.radius, false),
        InterpKind::FastLanczos => sample_lanczos(v, c, interp.radius, true),
    }
}

/// Interpolated intensity at a physical point, or `None` outside the volume.
///
/// The volume covers voxel coordinates `[-0.5, dim - 0.5]` on each axis;
/// interpolation near the border replicates edge voxels.
pub fn sample(v: &Volume, pt: [f64; 3], interp: Interpolator) -> Option<f32> {
    let c = v.physical_to_voxel(pt);
    inside(&c, &v.dims()).then(|| sample_voxel(v, &c, interp))
}

/// Affine map from fixed voxel indices to moving continuous voxel coordinates.
fn index_map(fixed: &Volume, moving: &Volume, m: &AffineMatrix) -> [[f64; 4]; 3] {
    let fs = fixed.spacing();
    let fo = fixed.origin();
    let ms = moving.spacing();
    let mo = moving.origin();
    std::array::from_fn(|r| {
        let mut row = [0.0; 4];
        for c in 0..3 {
            row[c] = m.m[r][c] * fs[c] / ms[r];
        }
        let off: f64 = (0..3).map(|c| m.m[r][c] * fo[c]).sum::<f64>() + m.m[r][3];
        row[3] = (off - mo[r]) / ms[r];
        row
    })
}

/// Visit every fixed voxel, z-plane by z-plane in parallel, mapping each
/// retained `(fixed, moving)` intensity pair through `per_pair`. Output is
/// grouped per plane in plane order.
pub(crate) fn map_pairs<T, F>(
    fixed: &Volume,
    moving: &Volume,
    m: &AffineMatrix,
    interp: Interpolator,
    policy: OutsidePolicy,
    per_pair: F,
) -> Vec<Vec<T>>
where
    T: Send,
    F: Fn(f32, f32) -> T + Sync,
{
    let a = index_map(fixed, moving, m);
    let [nx, ny, nz] = fixed.dims();
    let mdims = moving.dims();
    let fdata = fixed.data();
    (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                let base: [f64; 3] =
                    std::array::from_fn(|r| a[r][3] + a[r][1] * j as f64 + a[r][2] * k as f64);
                let row = fixed.linear_index(0, j, k);
                for i in 0..nx {
                    let c: [f64; 3] = std::array::from_fn(|r| base[r] + a[r][0] * i as f64);
                    let fv = fdata[row + i];
                    if inside(&c, &mdims) {
                        out.push(per_pair(fv, sample_voxel(moving, &c, interp)));
                    } else if policy == OutsidePolicy::ZeroFill {
                        out.push(per_pair(fv, 0.0));
                    }
                }
            }
            out
        })
        .collect()
}

/// `(fixed, moving)` intensity pairs for every fixed voxel whose mapped point
/// lands inside the moving volume. An empty result is reported as
/// [`Error::EmptyOverlap`].
pub fn transformed_pairs(
    fixed: &Volume,
    moving: &Volume,
    m: &AffineMatrix,
    interp: Interpolator,
) -> Result<Vec<(f32, f32)>> {
    transformed_pairs_with(fixed, moving, m, interp, OutsidePolicy::Exclude)
}

pub fn transformed_pairs_with(
    fixed: &Volume,
    moving: &Volume,
    m: &AffineMatrix,
    interp: Interpolator,
    policy: OutsidePolicy,
) -> Result<Vec<(f32, f32)>> {
    let pairs: Vec<(f32, f32)> = map_pairs(fixed, moving, m, interp, policy, |f, mv| (f, mv))
        .into_iter()
        .flatten()
        .collect();
    if pairs.is_empty() || (policy == OutsidePolicy::ZeroFill && overlap_count(fixed, moving, m) == 0) {
        return Err(Error::EmptyOverlap);
    }
    Ok(pairs)
}

/// Number of fixed voxels that map inside the moving volume.
pub fn overlap_count(fixed: &Volume, moving: &Volume, m: &AffineMatrix) -> usize {
    map_pairs(fixed, moving, m, Interpolator::NEAREST, OutsidePolicy::Exclude, |_, _| ())
        .iter()
        .map(Vec::len)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{params_to_matrix, AffineParams};
    use crate::volume::DType;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(dims: [usize; 3], spacing: f64) -> Volume {
        let n = dims.iter().product();
        let data = (0..n).map(|i| (i % 997) as f32).collect();
        Volume::new(dims, [spacing; 3], [0.0; 3], DType::F32, data).unwrap()
    }

    #[test]
    fn nearest_exact_at_grid() {
        let v = ramp([8, 9, 10], 1.5);
        let pt = v.voxel_to_physical([3.0, 4.0, 5.0]);
        assert_eq!(sample(&v, pt, Interpolator::NEAREST), Some(v.get(3, 4, 5)));
    }

    #[test]
    fn all_interpolators_exact_at_grid() {
        let v = ramp([9, 9, 9], 1.0);
        for (interp, tol) in [
            (Interpolator::NEAREST, 0.0f64),
            (Interpolator::TRILINEAR, 1e-9),
            (Interpolator::LANCZOS, 1e-9),
            (Interpolator::FAST_LANCZOS, 1e-3),
        ] {
            for (i, j, k) in [(0, 0, 0), (4, 5, 6), (8, 8, 8), (1, 7, 3)] {
                let got = sample(&v, [i as f64, j as f64, k as f64], interp).unwrap();
                let want = v.get(i, j, k);
                assert!(((got - want) as f64).abs() <= tol.max(want as f64 * 1e-7), "{interp} {got} {want}");
            }
        }
    }

    #[test]
    fn trilinear_midpoint() {
        let v = Volume::new([2, 1, 1], [1.0; 3], [0.0; 3], DType::F32, vec![0.0, 100.0]).unwrap();
        assert_eq!(sample(&v, [0.5, 0.0, 0.0], Interpolator::TRILINEAR), Some(50.0));
    }

    #[test]
    fn lanczos_partition_of_unity() {
        let v = Volume::filled([10, 10, 10], [1.0; 3], 1234.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let pt = [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)];
            for interp in [Interpolator::LANCZOS, Interpolator::FAST_LANCZOS] {
                let got = sample(&v, pt, interp).unwrap() as f64;
                assert!((got - 1234.5).abs() <= 1e-6 * 1234.5, "{interp} {got}");
            }
        }
    }

    #[test]
    fn kernel_zeros() {
        assert_eq!(lanczos_kernel(0.0, 3), 1.0);
        assert_eq!(fast_lanczos_kernel(0.0, 3), 1.0);
        for k in [-2.0, -1.0, 1.0, 2.0] {
            assert!(lanczos_kernel(k, 3).abs() <= 1e-9);
            assert!(fast_lanczos_kernel(k, 3).abs() <= 1e-3);
        }
        assert_eq!(lanczos_kernel(3.0, 3), 0.0);
    }

    #[test]
    fn fast_sin_accuracy() {
        for i in 0..10_000 {
            let x = -20.0 + 40.0 * i as f64 / 10_000.0;
            assert!((fast_sin(x) - x.sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn outside_is_none() {
        let v = ramp([4, 4, 4], 1.0);
        assert_eq!(sample(&v, [-0.6, 1.0, 1.0], Interpolator::TRILINEAR), None);
        assert_eq!(sample(&v, [3.6, 1.0, 1.0], Interpolator::NEAREST), None);
        assert!(sample(&v, [3.5, 1.0, 1.0], Interpolator::NEAREST).is_some());
    }

    #[test]
    fn identity_pairs_are_equal() {
        let v = ramp([6, 5, 4], 1.0);
        let pairs = transformed_pairs(&v, &v, &AffineMatrix::identity(), Interpolator::NEAREST).unwrap();
        assert_eq!(pairs.len(), v.len());
        assert!(pairs.iter().all(|(a, b)| a == b));
    }

    #[test]
    fn disjoint_translation_is_empty_overlap() {
        let v = ramp([8, 8, 8], 1.0);
        let m = AffineMatrix::translation([100.0, 0.0, 0.0]);
        assert!(matches!(
            transformed_pairs(&v, &v, &m, Interpolator::NEAREST),
            Err(Error::EmptyOverlap)
        ));
    }

    #[test]
    fn zero_fill_keeps_every_voxel() {
        let v = ramp([8, 8, 8], 1.0);
        let m = AffineMatrix::translation([3.0, 0.0, 0.0]);
        let pairs = transformed_pairs_with(&v, &v, &m, Interpolator::NEAREST, OutsidePolicy::ZeroFill).unwrap();
        assert_eq!(pairs.len(), v.len());
    }

    #[test]
    fn slab_overlap_count() {
        // 6 mm shift along x on a 1 mm grid leaves (64 - 6) columns.
        let v = ramp([64, 64, 64], 1.0);
        let m = params_to_matrix(&AffineParams::translation([6.0, 0.0, 0.0]), v.center());
        let pairs = transformed_pairs(&v, &v, &m, Interpolator::NEAREST).unwrap();
        assert_eq!(pairs.len(), 58 * 64 * 64);
    }

    #[test]
    fn pair_count_monotone_in_translation() {
        let v = ramp([12, 10, 8], 2.0);
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut last = usize::MAX;
                for step in 0..40 {
                    let mut t = [0.0; 3];
                    t[axis] = sign * step as f64 * 0.7;
                    let n = overlap_count(&v, &v, &AffineMatrix::translation(t));
                    assert!(n <= last);
                    last = n;
                }
            }
        }
    }

    #[test]
    fn fast_lanczos_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [16, 16, 16];
        let data: Vec<f32> = (0..4096).map(|_| rng.random_range(0.0..65535.0f32).round()).collect();
        let v = Volume::new(dims, [1.0; 3], [0.0; 3], DType::U16, data).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let pt = [rng.random_range(0.0..15.0), rng.random_range(0.0..15.0), rng.random_range(0.0..15.0)];
            let a = sample(&v, pt, Interpolator::LANCZOS).unwrap() as f64;
            let b = sample(&v, pt, Interpolator::FAST_LANCZOS).unwrap() as f64;
            worst = worst.max((a - b).abs());
        }
        assert!(worst <= 0.005 * 65535.0, "worst deviation {worst}");
    }

    #[test]
    fn interpolator_parsing() {
        assert_eq!("fastlanczos".parse::<Interpolator>().unwrap(), Interpolator::FAST_LANCZOS);
        let l4: Interpolator = "lanczos:4".parse().unwrap();
        assert_eq!(l4.radius, 4);
        assert_eq!(l4.to_string(), "lanczos:4");
        assert!("cubic".parse::<Interpolator>().is_err());
        assert!("nearest:2".parse::<Interpolator>().is_err());
    }
}
