//! Deterministic multimodal phantoms: nested ellipsoidal "tissues" with one
//! intensity table per modality.
//!
//! Both modalities share the same geometry (a pure function of size, seed and
//! structure count). The background is exactly zero, as in skull-stripped
//! scans, and carries no noise. T1-like contrast increases with nesting depth;
//! T2-like contrast assigns the same tissue levels in a zigzag order, so the
//! two are not monotonically related once there are two or more tissues.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{DType, Volume};

/// Stored intensity of the brightest level.
const INTENSITY_SCALE: f64 = 4000.0;
const LEVEL_LO: f64 = 0.1;
const LEVEL_HI: f64 = 0.9;
pub const MIN_PHANTOM_SIZE: usize = 8;
pub const DEFAULT_NOISE: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "t1like", alias = "T1like")]
    T1Like,
    #[serde(rename = "t2like", alias = "T2like")]
    T2Like,
}

impl Modality {
    fn salt(self) -> u64 {
        match self {
            Modality::T1Like => 0x5431,
            Modality::T2Like => 0x5432,
        }
    }
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    pub modality: Modality,
    pub structure_count: usize,
    /// Half-width of the uniform noise, as a fraction of the dynamic range.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl PhantomSpec {
    pub fn new(size: [usize; 3], spacing: [f64; 3], seed: u64, modality: Modality, structure_count: usize) -> Self {
        Self {
            size,
            spacing,
            seed,
            modality,
            structure_count,
            noise: DEFAULT_NOISE,
        }
    }

    pub fn with_modality(&self, modality: Modality) -> Self {
        Self {
            modality,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| s < MIN_PHANTOM_SIZE) {
            return Err(Error::InvalidArgument(format!(
                "phantom size must be at least {MIN_PHANTOM_SIZE} per axis, got {:?}",
                self.size
            )));
        }
        if self.structure_count == 0 {
            return Err(Error::InvalidArgument("structure_count must be positive".into()));
        }
        if !(0.0..=0.02).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!(
                "noise must lie in [0, 0.02] of the dynamic range, got {}",
                self.noise
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {:?}", self.spacing)));
        }
        Ok(())
    }
}

/// Ellipsoid in normalized grid coordinates (each axis spans `[-0.5, 0.5]`).
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    /// Rows are the ellipsoid's axes.
    axes: [[f64; 3]; 3],
}

impl Ellipsoid {
    fn contains(&self, u: &[f64; 3]) -> bool {
        let d = [u[0] - self.center[0], u[1] - self.center[1], u[2] - self.center[2]];
        let mut s = 0.0;
        for a in 0..3 {
            let proj = self.axes[a][0] * d[0] + self.axes[a][1] * d[1] + self.axes[a][2] * d[2];
            s += (proj / self.radii[a]).powi(2);
        }
        s <= 1.0
    }
}

fn random_rotation(r: &mut impl Rng) -> [[f64; 3]; 3] {
    // Unit quaternion from three uniforms (Shoemake).
    let (u1, u2, u3): (f64, f64, f64) = (r.random(), r.random(), r.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn geometry(spec: &PhantomSpec) -> Vec<Ellipsoid> {
    let mut r = rng::stream(spec.seed, 0x6765_6f6d);
    let mut out: Vec<Ellipsoid> = Vec::with_capacity(spec.structure_count);
    for level in 0..spec.structure_count {
        let e = match out.last() {
            None => Ellipsoid {
                center: std::array::from_fn(|_| r.random_range(-0.04..0.04)),
                radii: std::array::from_fn(|_| r.random_range(0.30..0.42)),
                axes: random_rotation(&mut r),
            },
            Some(parent) => {
                let shrink = r.random_range(0.55..0.75);
                let radii: [f64; 3] = std::array::from_fn(|a| parent.radii[a] * shrink * r.random_range(0.85..1.15));
                let slack = parent.radii.iter().cloned().fold(f64::INFINITY, f64::min) * (1.0 - shrink) * 0.6;
                let center = std::array::from_fn(|a| parent.center[a] + r.random_range(-slack..slack));
                Ellipsoid {
                    center,
                    radii,
                    axes: random_rotation(&mut r),
                }
            }
        };
        debug_assert!(level == out.len());
        out.push(e);
    }
    out
}

/// Depth of the containment chain at a point: 0 is background.
fn label_at(ellipsoids: &[Ellipsoid], u: &[f64; 3]) -> u16 {
    ellipsoids.iter().take_while(|e| e.contains(u)).count() as u16
}

fn normalized_coord(spec: &PhantomSpec, idx: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|a| (idx[a] as f64 + 0.5) / spec.size[a] as f64 - 0.5)
}

fn label_map(spec: &PhantomSpec) -> Vec<u16> {
    let ellipsoids = geometry(spec);
    let [nx, ny, nz] = spec.size;
    (0..nz)
        .into_par_iter()
        .flat_map_iter(|k| {
            let ellipsoids = &ellipsoids;
            (0..ny).flat_map(move |j| (0..nx).map(move |i| label_at(ellipsoids, &normalized_coord(spec, [i, j, k]))))
        })
        .collect()
}

/// Noise-free level of every label for a modality. Background is 0 in both
/// modalities; tissues span `(0.1, 0.9]`.
pub fn intensity_levels(structure_count: usize, modality: Modality) -> Vec<f64> {
    let n = structure_count;
    let level = |rank: usize| LEVEL_LO + (LEVEL_HI - LEVEL_LO) * rank as f64 / n as f64;
    let tissue = (1..=n).map(|label| match modality {
        Modality::T1Like => level(label),
        // ranks n, 1, n-1, 2, ...
        Modality::T2Like => {
            let k = label - 1;
            if k % 2 == 0 {
                level(n - k / 2)
            } else {
                level(k / 2 + 1)
            }
        }
    });
    std::iter::once(0.0).chain(tissue).collect()
}

/// Region labels shared by both modalities (0 = background).
pub fn generate_labels(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let data = label_map(spec).into_iter().map(|l| l as f32).collect();
    Volume::new(spec.size, spec.spacing, [0.0; 3], DType::U16, data)
}

/// Phantom intensities, stored as `i16` in `[0, 4000]` before normalization.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let labels = label_map(spec);
    let levels = intensity_levels(spec.structure_count, spec.modality);
    let amplitude = spec.noise * (LEVEL_HI - LEVEL_LO);
    let salt = spec.modality.salt();
    let data = labels
        .par_iter()
        .enumerate()
        .map(|(idx, &l)| {
            if l == 0 {
                return 0.0;
            }
            let u = rng::unit_f64(rng::keyed(spec.seed, &[salt, idx as u64]));
            let v = levels[l as usize] + amplitude * (2.0 * u - 1.0);
            (v * INTENSITY_SCALE).round() as f32
        })
        .collect();
    Volume::new(spec.size, spec.spacing, [0.0; 3], DType::I16, data)
}
