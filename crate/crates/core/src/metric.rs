//! Joint histograms, Shannon/Tsallis entropies and the mutual-information
//! family.
//!
//! All logarithms are natural. Tsallis entropy uses the standard sign,
//! `H_q = (1 - Σ p^q) / (q - 1)`, which tends to Shannon entropy as `q → 1`
//! and obeys pseudo-additivity for independent systems:
//! `H_q(A,B) = H_q(A) + H_q(B) + (1 - q) H_q(A) H_q(B)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{map_pairs, Interpolator, OutsidePolicy};
use crate::transform::{params_to_matrix, AffineMatrix, AffineParams};
use crate::volume::{to_u16, Volume};

/// Denominators closer to zero than this make Yamano/Sparavigna singular.
pub const SINGULAR_EPS: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricFamily {
    Shannon,
    TsallisNonadditive,
    TsallisAdditive,
    Yamano,
    Sparavigna,
}

impl MetricFamily {
    pub const ALL: [MetricFamily; 5] = [
        MetricFamily::Shannon,
        MetricFamily::TsallisNonadditive,
        MetricFamily::TsallisAdditive,
        MetricFamily::Yamano,
        MetricFamily::Sparavigna,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricFamily::Shannon => "shannon",
            MetricFamily::TsallisNonadditive => "tsallis-nonadditive",
            MetricFamily::TsallisAdditive => "tsallis-additive",
            MetricFamily::Yamano => "yamano",
            MetricFamily::Sparavigna => "sparavigna",
        }
    }

    pub fn is_tsallis(self) -> bool {
        self != MetricFamily::Shannon
    }
}

impl fmt::Display for MetricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric family `{s}`")))
    }
}

/// Metric family, entropic index, binning and interpolation for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub family: MetricFamily,
    /// Entropic index; ignored for Shannon.
    pub q: f64,
    /// Significant bits kept per image, `None` for the full 16 bits.
    pub bits: Option<u8>,
    pub interp: Interpolator,
    #[serde(default)]
    pub outside: OutsidePolicy,
}

impl MetricSpec {
    pub fn new(family: MetricFamily, q: f64, bits: Option<u8>, interp: Interpolator) -> Result<Self> {
        let spec = Self {
            family,
            q,
            bits,
            interp,
            outside: OutsidePolicy::Exclude,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn shannon() -> Self {
        Self {
            family: MetricFamily::Shannon,
            q: 1.0,
            bits: None,
            interp: Interpolator::NEAREST,
            outside: OutsidePolicy::Exclude,
        }
    }

    pub fn tsallis(family: MetricFamily, q: f64) -> Result<Self> {
        Self::new(family, q, None, Interpolator::NEAREST)
    }

    pub fn with_bits(mut self, bits: Option<u8>) -> Result<Self> {
        self.bits = bits;
        self.validate()?;
        Ok(self)
    }

    pub fn with_interp(mut self, interp: Interpolator) -> Self {
        self.interp = interp;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.bits {
            if !(1..=16).contains(&b) {
                return Err(Error::InvalidArgument(format!("binning bits must be in [1, 16], got {b}")));
            }
        }
        if self.family.is_tsallis() {
            if !(self.q > 0.0) || !self.q.is_finite() {
                return Err(Error::InvalidArgument(format!("entropic index must be positive, got {}", self.q)));
            }
            if self.q == 1.0 {
                return Err(Error::InvalidArgument(
                    "q = 1 is Shannon entropy; use the shannon family".into(),
                ));
            }
        }
        Ok(())
    }

    /// Bits used for histogram indexing.
    pub fn histogram_bits(&self) -> u8 {
        self.bits.unwrap_or(16)
    }
}

/// One nonzero histogram cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub i: u32,
    pub j: u32,
    pub count: u64,
}

/// Integer joint histogram of (fixed, moving) bin indices.
///
/// Only nonzero cells are stored (sorted by `(i, j)`), so full 16-bit
/// histograms stay proportional to the number of samples. Marginals are dense.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    bins_fixed: usize,
    bins_moving: usize,
    cells: Vec<Cell>,
    fixed_marginal: Vec<u64>,
    moving_marginal: Vec<u64>,
    total: u64,
}

/// Packs a `(fixed_bin, moving_bin)` pair; both must be below 2^16.
#[inline]
fn pack(i: u32, j: u32) -> u32 {
    (i << 16) | j
}

impl JointHistogram {
    fn from_cells(bins_fixed: usize, bins_moving: usize, cells: Vec<Cell>) -> Result<Self> {
        let mut fixed_marginal = vec![0u64; bins_fixed];
        let mut moving_marginal = vec![0u64; bins_moving];
        let mut total = 0u64;
        for c in &cells {
            fixed_marginal[c.i as usize] += c.count;
            moving_marginal[c.j as usize] += c.count;
            total += c.count;
        }
        if total == 0 {
            return Err(Error::EmptyOverlap);
        }
        Ok(Self {
            bins_fixed,
            bins_moving,
            cells,
            fixed_marginal,
            moving_marginal,
            total,
        })
    }

    /// Build from packed keys (see `pack`).
    fn from_keys(bins_fixed: usize, bins_moving: usize, mut keys: Vec<u32>) -> Result<Self> {
        let cells = if bins_fixed * bins_moving <= 1 << 18 {
            let mut dense = vec![0u64; bins_fixed * bins_moving];
            for &k in &keys {
                dense[(k >> 16) as usize * bins_moving + (k & 0xFFFF) as usize] += 1;
            }
            dense_to_cells(bins_moving, &dense)
        } else {
            keys.sort_unstable();
            let mut cells: Vec<Cell> = Vec::new();
            for k in keys {
                let (i, j) = (k >> 16, k & 0xFFFF);
                match cells.last_mut() {
                    Some(c) if c.i == i && c.j == j => c.count += 1,
                    _ => cells.push(Cell { i, j, count: 1 }),
                }
            }
            cells
        };
        Self::from_cells(bins_fixed, bins_moving, cells)
    }

    /// Row-major dense counts, `counts[i * cols + j]`.
    pub fn from_dense_counts(rows: usize, cols: usize, counts: &[u64]) -> Result<Self> {
        if rows == 0 || cols == 0 || counts.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {rows}x{cols} counts, got {}",
                counts.len()
            )));
        }
        Self::from_cells(rows, cols, dense_to_cells(cols, counts))
    }

    pub fn bins_fixed(&self) -> usize {
        self.bins_fixed
    }

    pub fn bins_moving(&self) -> usize {
        self.bins_moving
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.cells
            .binary_search_by(|c| (c.i as usize, c.j as usize).cmp(&(i, j)))
            .map(|k| self.cells[k].count)
            .unwrap_or(0)
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.total as f64
    }

    pub fn fixed_marginal_counts(&self) -> &[u64] {
        &self.fixed_marginal
    }

    pub fn moving_marginal_counts(&self) -> &[u64] {
        &self.moving_marginal
    }

    pub fn fixed_marginal(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.fixed_marginal.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn moving_marginal(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.moving_marginal.iter().map(|&c| c as f64 / n).collect()
    }

    /// Swap the roles of fixed and moving.
    pub fn transpose(&self) -> Self {
        let mut cells: Vec<Cell> = self
            .cells
            .iter()
            .map(|c| Cell {
                i: c.j,
                j: c.i,
                count: c.count,
            })
            .collect();
        cells.sort_unstable_by_key(|c| (c.i, c.j));
        Self {
            bins_fixed: self.bins_moving,
            bins_moving: self.bins_fixed,
            cells,
            fixed_marginal: self.moving_marginal.clone(),
            moving_marginal: self.fixed_marginal.clone(),
            total: self.total,
        }
    }

    /// Merge another histogram of the same shape by adding counts.
    pub fn merge(&self, other: &JointHistogram) -> Result<Self> {
        if self.bins_fixed != other.bins_fixed || self.bins_moving != other.bins_moving {
            return Err(Error::InvalidArgument("histogram shapes differ".into()));
        }
        let mut cells = Vec::with_capacity(self.cells.len() + other.cells.len());
        let (mut a, mut b) = (self.cells.iter().peekable(), other.cells.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => match (x.i, x.j).cmp(&(y.i, y.j)) {
                    std::cmp::Ordering::Less => cells.push(*a.next().unwrap()),
                    std::cmp::Ordering::Greater => cells.push(*b.next().unwrap()),
                    std::cmp::Ordering::Equal => {
                        let (x, y) = (a.next().unwrap(), b.next().unwrap());
                        cells.push(Cell {
                            count: x.count + y.count,
                            ..*x
                        });
                    }
                },
                (Some(_), None) => cells.push(*a.next().unwrap()),
                (None, Some(_)) => cells.push(*b.next().unwrap()),
                (None, None) => break,
            }
        }
        Self::from_cells(self.bins_fixed, self.bins_moving, cells)
    }
}

fn dense_to_cells(cols: usize, dense: &[u64]) -> Vec<Cell> {
    dense
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &count)| Cell {
            i: (k / cols) as u32,
            j: (k % cols) as u32,
            count,
        })
        .collect()
}

#[inline]
fn bin_index(v: f32, shift: u32) -> u32 {
    (to_u16(v) as u32) >> shift
}

/// Histogram of intensity pairs, indexed by `value >> (16 - bits)` per side.
/// Intensities are rounded into the 16-bit range first.
pub fn joint_histogram<I>(pairs: I, bits: u8) -> Result<JointHistogram>
where
    I: IntoIterator<Item = (f32, f32)>,
{
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidArgument(format!("binning bits must be in [1, 16], got {bits}")));
    }
    let shift = 16 - bits as u32;
    let keys: Vec<u32> = pairs
        .into_iter()
        .map(|(f, m)| pack(bin_index(f, shift), bin_index(m, shift)))
        .collect();
    let bins = 1usize << bits;
    JointHistogram::from_keys(bins, bins, keys)
}

/// Joint histogram of `fixed` against `moving` resampled through `m`.
pub fn transformed_histogram(
    fixed: &Volume,
    moving: &Volume,
    m: &AffineMatrix,
    spec: &MetricSpec,
) -> Result<JointHistogram> {
    let bits = spec.histogram_bits();
    let shift = 16 - bits as u32;
    let planes = map_pairs(fixed, moving, m, spec.interp, spec.outside, |f, mv| {
        pack(bin_index(f, shift), bin_index(mv, shift))
    });
    let keys: Vec<u32> = planes.into_iter().flatten().collect();
    if keys.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    if spec.outside == OutsidePolicy::ZeroFill && crate::resample::overlap_count(fixed, moving, m) == 0 {
        return Err(Error::EmptyOverlap);
    }
    let bins = 1usize << bits;
    JointHistogram::from_keys(bins, bins, keys)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(sum));
    }
    Ok(())
}

/// `-Σ p ln p` in nats; zero entries contribute nothing.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(shannon_sum(p.iter().copied()))
}

/// `(1 - Σ p^q) / (q - 1)`; `q = 1` is rejected.
pub fn tsallis_entropy(p: &[f64], q: f64) -> Result<f64> {
    check_distribution(p)?;
    if q == 1.0 || !(q > 0.0) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Tsallis entropy needs q > 0 and q != 1, got {q}"
        )));
    }
    Ok(tsallis_sum(p.iter().copied(), q))
}

fn shannon_sum(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn tsallis_sum(p: impl Iterator<Item = f64>, q: f64) -> f64 {
    let s: f64 = p.filter(|&x| x > 0.0).map(|x| x.powf(q)).sum();
    (1.0 - s) / (q - 1.0)
}

/// Marginal and joint entropies of a histogram under one entropy flavour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropies {
    pub fixed: f64,
    pub moving: f64,
    pub joint: f64,
}

impl Entropies {
    /// Shannon when `q` is `None`, Tsallis otherwise.
    pub fn of(h: &JointHistogram, q: Option<f64>) -> Self {
        let n = h.total as f64;
        let probs = |counts: &[u64]| counts.iter().map(move |&c| c as f64 / n).collect::<Vec<_>>();
        let pf = probs(&h.fixed_marginal);
        let pm = probs(&h.moving_marginal);
        let pj = h.cells.iter().map(|c| c.count as f64 / n);
        match q {
            None => Self {
                fixed: shannon_sum(pf.into_iter()),
                moving: shannon_sum(pm.into_iter()),
                joint: shannon_sum(pj),
            },
            Some(q) => Self {
                fixed: tsallis_sum(pf.into_iter(), q),
                moving: tsallis_sum(pm.into_iter(), q),
                joint: tsallis_sum(pj, q),
            },
        }
    }
}

/// Combine precomputed entropies according to the family.
///
/// `fixed` plays the role of `X` in the Yamano denominator.
pub fn combine(e: &Entropies, family: MetricFamily, q: f64) -> Result<f64> {
    let (hx, hy, hxy) = (e.fixed, e.moving, e.joint);
    let shannon_like = hx + hy - hxy;
    match family {
        MetricFamily::Shannon | MetricFamily::TsallisNonadditive => Ok(shannon_like),
        MetricFamily::TsallisAdditive => Ok(shannon_like + (1.0 - q) * hx * hy),
        MetricFamily::Yamano | MetricFamily::Sparavigna => {
            let numerator = shannon_like + (q - 1.0) * hx * hy;
            let denominator = if family == MetricFamily::Yamano {
                1.0 + (q - 1.0) * hx
            } else {
                1.0 + (1.0 - q) * hx.max(hy)
            };
            if denominator.abs() < SINGULAR_EPS {
                return Err(Error::SingularMetric(denominator));
            }
            Ok(numerator / denominator)
        }
    }
}

/// Mutual information of a joint histogram under `spec`.
pub fn mutual_information(h: &JointHistogram, spec: &MetricSpec) -> Result<f64> {
    spec.validate()?;
    let q = spec.family.is_tsallis().then_some(spec.q);
    combine(&Entropies::of(h, q), spec.family, spec.q)
}

/// Metric value for `moving` transformed by `params` against `fixed`.
///
/// Both volumes must already be prepared (normalized, and binned when the
/// spec asks for it; see [`crate::volume::prepare`]). Linear transforms act
/// about the fixed volume's physical center.
pub fn evaluate_metric(fixed: &Volume, moving: &Volume, params: &AffineParams, spec: &MetricSpec) -> Result<f64> {
    spec.validate()?;
    let m = params_to_matrix(params, fixed.center());
    let h = transformed_histogram(fixed, moving, &m, spec)?;
    mutual_information(&h, spec)
}
