//! Capture-range estimation by flood fill over a metric cube.
//!
//! Starting from the center voxel (the identity transform), a voxel joins the
//! captured set when one of its neighbours is already captured and strictly
//! better, so a unit step from it toward the set improves the metric. The
//! result only approximates a constant-step gradient method; a real optimizer
//! with line search may behave differently.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::MetricCube;
use crate::metric::{MetricFamily, MetricSpec};
use crate::rng;
use crate::transform::TransformKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    #[default]
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidArgument(format!("connectivity must be 6 or 26, got {other}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
                    let keep = match self {
                        Connectivity::Six => nonzero == 1,
                        Connectivity::TwentySix => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize" => Ok(Direction::Maximize),
            "minimize" => Ok(Direction::Minimize),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

/// What a candidate voxel is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthRule {
    /// The adjacent captured voxel.
    #[default]
    Adjacent,
    /// The seed value, regardless of which captured neighbour is adjacent.
    SeedComparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureResult {
    pub resolution: usize,
    pub captured: Vec<bool>,
    pub rate: f64,
    pub seed_index: [usize; 3],
    pub connectivity: Connectivity,
    pub direction: Direction,
    pub rule: GrowthRule,
}

impl CaptureResult {
    pub fn count(&self) -> usize {
        self.captured.iter().filter(|&&c| c).count()
    }
}

/// Flood fill from the center with the adjacent-voxel rule.
pub fn simulate_capture(cube: &MetricCube, connectivity: Connectivity, direction: Direction) -> CaptureResult {
    simulate_capture_with(cube, connectivity, direction, GrowthRule::Adjacent, None)
}

/// Flood fill with an explicit growth rule. With `shuffle_seed`, the worklist
/// is processed in a seeded random order instead of breadth first; the
/// resulting set is the same closure either way.
pub fn simulate_capture_with(
    cube: &MetricCube,
    connectivity: Connectivity,
    direction: Direction,
    rule: GrowthRule,
    shuffle_seed: Option<u64>,
) -> CaptureResult {
    let r = cube.resolution;
    let n = cube.len();
    let seed = cube.center();
    let seed_lin = cube.linear(seed);
    let better = |a: f64, b: f64| match direction {
        Direction::Maximize => a > b,
        Direction::Minimize => a < b,
    };
    let offsets = connectivity.offsets();
    let mut captured = vec![false; n];
    let mut queue = VecDeque::new();
    let mut rand = shuffle_seed.map(|s| rng::stream(s, 0x6361_7074));
    if !cube.empty_overlap[seed_lin] {
        captured[seed_lin] = true;
        queue.push_back(seed_lin);
    }
    let seed_value = cube.values[seed_lin];

    while let Some(m) = match rand.as_mut() {
        Some(g) if !queue.is_empty() => {
            let i = g.random_range(0..queue.len());
            queue.swap_remove_back(i)
        }
        _ => queue.pop_front(),
    } {
        let [x, y, z] = cube.index_of(m);
        let mut order = offsets.clone();
        if let Some(g) = rand.as_mut() {
            order.shuffle(g);
        }
        for d in order {
            let nb = [x as isize + d[0], y as isize + d[1], z as isize + d[2]];
            if nb.iter().any(|&c| c < 0 || c >= r as isize) {
                continue;
            }
            let lin = cube.linear(nb.map(|c| c as usize));
            if captured[lin] || cube.empty_overlap[lin] {
                continue;
            }
            let reference = match rule {
                GrowthRule::Adjacent => cube.values[m],
                GrowthRule::SeedComparison => seed_value,
            };
            if better(reference, cube.values[lin]) {
                captured[lin] = true;
                queue.push_back(lin);
            }
        }
    }

    let count = captured.iter().filter(|&&c| c).count();
    CaptureResult {
        resolution: r,
        rate: count as f64 / n as f64,
        captured,
        seed_index: seed,
        connectivity,
        direction,
        rule,
    }
}

/// Serializable outcome of one capture run, as written by the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSummary {
    pub spec: MetricSpec,
    pub kind: TransformKind,
    pub resolution: usize,
    pub connectivity: Connectivity,
    pub direction: Direction,
    pub rule: GrowthRule,
    pub seed_index: [usize; 3],
    pub captured: usize,
    pub total: usize,
    pub rate: f64,
}

impl CaptureSummary {
    pub fn new(cube: &MetricCube, result: &CaptureResult) -> Self {
        Self {
            spec: cube.spec,
            kind: cube.kind,
            resolution: result.resolution,
            connectivity: result.connectivity,
            direction: result.direction,
            rule: result.rule,
            seed_index: result.seed_index,
            captured: result.count(),
            total: result.captured.len(),
            rate: result.rate,
        }
    }
}

/// Percentage with two decimals, e.g. `99.99%`.
pub fn format_rate(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}

/// Row label used in report tables.
pub fn family_label(f: MetricFamily) -> &'static str {
    match f {
        MetricFamily::Shannon => "Shannon",
        MetricFamily::TsallisNonadditive => "Tsallis",
        MetricFamily::TsallisAdditive => "Tsallis Additive",
        MetricFamily::Yamano => "Yamano",
        MetricFamily::Sparavigna => "Sparavigna",
    }
}

fn binning_label(bits: Option<u8>) -> String {
    match bits {
        Some(b) => format!("{b} bits"),
        None => "No".into(),
    }
}

/// One row of the capture table: a metric and its rate per transform family.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRow {
    pub family: MetricFamily,
    pub q: f64,
    pub bits: Option<u8>,
    pub rates: BTreeMap<TransformKind, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureTable {
    /// Kinds that have at least one rate, in canonical order.
    pub kinds: Vec<TransformKind>,
    pub rows: Vec<CaptureRow>,
}

impl CaptureTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["Metric".to_string(), "Q".into(), "Binning".into()];
        h.extend(self.kinds.iter().map(|k| k.name().to_string()));
        h
    }

    fn cells(&self, row: &CaptureRow) -> Vec<String> {
        let q = if row.family.is_tsallis() { row.q } else { 1.0 };
        let mut c = vec![family_label(row.family).to_string(), format!("{q:.1}"), binning_label(row.bits)];
        c.extend(
            self.kinds
                .iter()
                .map(|k| row.rates.get(k).map_or_else(|| "-".into(), |r| format_rate(*r))),
        );
        c
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| {} |\n", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", self.cells(row).join(" | "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",") + "\n";
        for row in &self.rows {
            out.push_str(&self.cells(row).join(","));
            out.push('\n');
        }
        out
    }
}

/// Arrange capture results into one row per metric (family, q, binning) and
/// one column per transform family.
pub fn capture_report(results: &[(MetricSpec, TransformKind, f64)]) -> Result<CaptureTable> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("capture report needs at least one result".into()));
    }
    let mut rows: Vec<CaptureRow> = Vec::new();
    for (spec, kind, rate) in results {
        let q = if spec.family.is_tsallis() { spec.q } else { 1.0 };
        let row = match rows
            .iter_mut()
            .position(|r| r.family == spec.family && r.q == q && r.bits == spec.bits)
        {
            Some(i) => &mut rows[i],
            None => {
                rows.push(CaptureRow {
                    family: spec.family,
                    q,
                    bits: spec.bits,
                    rates: BTreeMap::new(),
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.rates.insert(*kind, *rate);
    }
    let kinds = TransformKind::ALL
        .into_iter()
        .filter(|k| rows.iter().any(|r| r.rates.contains_key(k)))
        .collect();
    Ok(CaptureTable { kinds, rows })
}
