//! Metric landscapes: the metric evaluated on every voxel of an `R³` cube of
//! transform parameters, plus probe lines and export for external viewers.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{combine, transformed_histogram, Entropies, MetricSpec};
use crate::transform::{axis_values, cube_index_to_params, params_to_matrix, TransformKind};
use crate::volume::{sidecar_paths, Volume};

pub const DEFAULT_RESOLUTION: usize = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub fixed_id: String,
    pub moving_id: String,
    /// RFC 3339 generation time.
    pub generated_at: String,
}

/// Metric values over a cube of transform parameters, x-index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCube {
    pub resolution: usize,
    pub kind: TransformKind,
    pub spec: MetricSpec,
    pub values: Vec<f64>,
    /// True where the transform left no overlap; such voxels hold the cube's
    /// lowest finite value.
    pub empty_overlap: Vec<bool>,
    pub provenance: Provenance,
}

impl MetricCube {
    /// Wrap precomputed values (mask defaults to all false).
    pub fn from_values(
        resolution: usize,
        kind: TransformKind,
        spec: MetricSpec,
        values: Vec<f64>,
        empty_overlap: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = resolution.pow(3);
        if resolution < 1 || resolution % 2 == 0 {
            return Err(Error::InvalidArgument(format!("cube resolution must be odd, got {resolution}")));
        }
        let empty_overlap = empty_overlap.unwrap_or_else(|| vec![false; n]);
        if values.len() != n || empty_overlap.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} values for resolution {resolution}, got {}",
                values.len()
            )));
        }
        Ok(Self {
            resolution,
            kind,
            spec,
            values,
            empty_overlap,
            provenance: Provenance {
                fixed_id: String::new(),
                moving_id: String::new(),
                generated_at: now(),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        let r = self.resolution;
        idx[0] + r * (idx[1] + r * idx[2])
    }

    #[inline]
    pub fn index_of(&self, linear: usize) -> [usize; 3] {
        let r = self.resolution;
        [linear % r, (linear / r) % r, linear / (r * r)]
    }

    pub fn value(&self, idx: [usize; 3]) -> f64 {
        self.values[self.linear(idx)]
    }

    pub fn center(&self) -> [usize; 3] {
        let c = (self.resolution - 1) / 2;
        [c, c, c]
    }

    /// Index of the largest value (first in linear order on ties).
    pub fn argmax(&self) -> [usize; 3] {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.index_of(best)
    }

    pub fn with_ids(mut self, fixed: impl Into<String>, moving: impl Into<String>) -> Self {
        self.provenance.fixed_id = fixed.into();
        self.provenance.moving_id = moving.into();
        self
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Evaluate one metric over the cube. Volumes must be prepared for `spec`.
pub fn generate_cube(
    fixed: &Volume,
    moving: &Volume,
    kind: TransformKind,
    spec: &MetricSpec,
    resolution: usize,
) -> Result<MetricCube> {
    Ok(generate_cubes(fixed, moving, kind, std::slice::from_ref(spec), resolution)?
        .pop()
        .expect("one spec in, one cube out"))
}

/// Evaluate several metrics over the same cube, building each joint
/// histogram once. All specs must agree on binning, interpolation and
/// outside policy, since those shape the histogram.
pub fn generate_cubes(
    fixed: &Volume,
    moving: &Volume,
    kind: TransformKind,
    specs: &[MetricSpec],
    resolution: usize,
) -> Result<Vec<MetricCube>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no metric specs given".into()))?;
    for s in specs {
        s.validate()?;
        if (s.bits, s.interp, s.outside) != (first.bits, first.interp, first.outside) {
            return Err(Error::InvalidArgument(
                "specs sharing a cube pass must agree on bits, interpolator and outside policy".into(),
            ));
        }
    }
    // validates resolution
    cube_index_to_params([0; 3], resolution, kind)?;

    let center = fixed.center();
    let r = resolution;
    let rows: Vec<Option<Vec<f64>>> = (0..r * r * r)
        .into_par_iter()
        .map(|lin| -> Result<Option<Vec<f64>>> {
            let idx = [lin % r, (lin / r) % r, lin / (r * r)];
            let params = cube_index_to_params(idx, r, kind)?;
            let m = params_to_matrix(&params, center);
            let h = match transformed_histogram(fixed, moving, &m, first) {
                Ok(h) => h,
                Err(Error::EmptyOverlap) => return Ok(None),
                Err(e) => return Err(e),
            };
            let shannon = Entropies::of(&h, None);
            specs
                .iter()
                .map(|s| {
                    if s.family.is_tsallis() {
                        combine(&Entropies::of(&h, Some(s.q)), s.family, s.q)
                    } else {
                        combine(&shannon, s.family, s.q)
                    }
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some)
        })
        .collect::<Result<_>>()?;

    let mask: Vec<bool> = rows.iter().map(Option::is_none).collect();
    if mask.iter().all(|&m| m) {
        return Err(Error::EmptyOverlap);
    }
    let generated_at = now();
    Ok(specs
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let floor = rows
                .iter()
                .flatten()
                .map(|v| v[s])
                .filter(|v| v.is_finite())
                .fold(f64::INFINITY, f64::min);
            let values = rows
                .iter()
                .map(|row| row.as_ref().map_or(floor, |v| v[s]))
                .collect();
            MetricCube {
                resolution,
                kind,
                spec: *spec,
                values,
                empty_overlap: mask.clone(),
                provenance: Provenance {
                    fixed_id: "fixed".into(),
                    moving_id: "moving".into(),
                    generated_at: generated_at.clone(),
                },
            }
        })
        .collect())
}

/// Named probe lines through the cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbePreset {
    AxisX,
    AxisY,
    AxisZ,
    /// Diagonal of the central z plane.
    PlaneDiagonal,
    /// From the minimum of all axes to their maximum.
    CubeDiagonal,
}

impl FromStr for ProbePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axis-x" => Ok(ProbePreset::AxisX),
            "axis-y" => Ok(ProbePreset::AxisY),
            "axis-z" => Ok(ProbePreset::AxisZ),
            "plane-diagonal" => Ok(ProbePreset::PlaneDiagonal),
            "cube-diagonal" => Ok(ProbePreset::CubeDiagonal),
            other => Err(Error::InvalidArgument(format!("unknown probe preset `{other}`"))),
        }
    }
}

impl ProbePreset {
    pub fn endpoints(self, resolution: usize) -> ([usize; 3], [usize; 3]) {
        let c = (resolution - 1) / 2;
        let m = resolution - 1;
        match self {
            ProbePreset::AxisX => ([0, c, c], [m, c, c]),
            ProbePreset::AxisY => ([c, 0, c], [c, m, c]),
            ProbePreset::AxisZ => ([c, c, 0], [c, c, m]),
            ProbePreset::PlaneDiagonal => ([0, 0, c], [m, m, c]),
            ProbePreset::CubeDiagonal => ([0, 0, 0], [m, m, m]),
        }
    }
}

/// One sample of a probe line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    /// Distance from `start`, in cube index units.
    pub position: f64,
    pub index: [usize; 3],
    pub value: f64,
}

/// `n` evenly spaced samples from `start` to `end`, each read from the
/// nearest cube voxel.
pub fn probe_line(cube: &MetricCube, start: [usize; 3], end: [usize; 3], n: usize) -> Result<Vec<ProbeSample>> {
    for p in [start, end] {
        if p.iter().any(|&i| i >= cube.resolution) {
            return Err(Error::IndexOutOfRange {
                index: p,
                limit: cube.resolution,
            });
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("probe needs at least one sample".into()));
    }
    let delta: [f64; 3] = std::array::from_fn(|a| end[a] as f64 - start[a] as f64);
    let length = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    Ok((0..n)
        .map(|s| {
            let t = if n == 1 { 0.0 } else { s as f64 / (n - 1) as f64 };
            let index = std::array::from_fn(|a| (start[a] as f64 + t * delta[a]).round() as usize);
            ProbeSample {
                position: t * length,
                index,
                value: cube.value(index),
            }
        })
        .collect())
}

pub fn probe_preset(cube: &MetricCube, preset: ProbePreset) -> Result<Vec<ProbeSample>> {
    let (s, e) = preset.endpoints(cube.resolution);
    probe_line(cube, s, e, cube.resolution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFormat {
    RawJson,
    Csv,
}

impl FromStr for CubeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rawjson" => Ok(CubeFormat::RawJson),
            "csv" => Ok(CubeFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown cube format `{other}`"))),
        }
    }
}

/// Sidecar of a rawjson cube; the payload is little-endian `f64`, x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub resolution: usize,
    pub kind: TransformKind,
    pub spec: MetricSpec,
    pub dtype: String,
    pub byte_order: String,
    /// Parameter value of each index, identical on all three axes.
    pub axis_values: Vec<f64>,
    /// Linear indices of empty-overlap voxels.
    pub empty_overlap: Vec<usize>,
    pub provenance: Provenance,
}

pub fn export_cube(cube: &MetricCube, path: impl AsRef<Path>, format: CubeFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        CubeFormat::RawJson => {
            let (json_path, raw_path) = sidecar_paths(path);
            let header = CubeHeader {
                resolution: cube.resolution,
                kind: cube.kind,
                spec: cube.spec,
                dtype: "f64".into(),
                byte_order: "little".into(),
                axis_values: axis_values(cube.resolution, cube.kind)?,
                empty_overlap: cube
                    .empty_overlap
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &e)| e.then_some(i))
                    .collect(),
                provenance: cube.provenance.clone(),
            };
            fs::write(&json_path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json_path, e))?;
            let bytes: Vec<u8> = cube.values.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
        }
        CubeFormat::Csv => {
            let table = axis_values(cube.resolution, cube.kind)?;
            let mut out = String::with_capacity(cube.len() * 48);
            out.push_str("i,j,k,p0,p1,p2,value,empty_overlap\n");
            for (lin, v) in cube.values.iter().enumerate() {
                let [i, j, k] = cube.index_of(lin);
                out.push_str(&format!(
                    "{i},{j},{k},{},{},{},{v:?},{}\n",
                    table[i], table[j], table[k], cube.empty_overlap[lin] as u8
                ));
            }
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
    }
}

/// Read a rawjson cube written by [`export_cube`].
pub fn import_cube(path: impl AsRef<Path>) -> Result<MetricCube> {
    let (json_path, raw_path) = sidecar_paths(path.as_ref());
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: CubeHeader = serde_json::from_str(&text).map_err(|e| Error::InvalidHeader {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    if header.dtype != "f64" || header.byte_order != "little" {
        return Err(Error::UnsupportedDatatype(format!("{} {}", header.dtype, header.byte_order)));
    }
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.resolution.pow(3);
    if bytes.len() != n * 8 {
        return Err(Error::SizeMismatch {
            expected: n * 8,
            actual: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut mask = vec![false; n];
    for &i in &header.empty_overlap {
        *mask.get_mut(i).ok_or_else(|| Error::InvalidHeader {
            path: json_path.clone(),
            reason: format!("empty-overlap index {i} out of range"),
        })? = true;
    }
    let mut cube = MetricCube::from_values(header.resolution, header.kind, header.spec, values, Some(mask))?;
    cube.provenance = header.provenance;
    Ok(cube)
}

/// Values and overlap flags from a CSV export, in file order.
pub fn read_cube_csv(path: impl AsRef<Path>) -> Result<(Vec<[usize; 3]>, Vec<f64>, Vec<bool>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::InvalidHeader {
        path: path.to_path_buf(),
        reason: format!("malformed row {line}"),
    };
    let mut idx = Vec::new();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(n));
        }
        let p = |s: &str| s.parse::<usize>().map_err(|_| bad(n));
        idx.push([p(f[0])?, p(f[1])?, p(f[2])?]);
        values.push(f[6].parse::<f64>().map_err(|_| bad(n))?);
        mask.push(f[7] == "1");
    }
    Ok((idx, values, mask))
}
