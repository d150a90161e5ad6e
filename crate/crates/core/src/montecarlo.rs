//! Randomized-start translation registration essays.
//!
//! Every trial draws its start translation and, for randomized scenarios, its
//! subjects from keyed generators, so a record depends only on the master seed
//! and its trial index. The gold standard is the identity: subjects are
//! assumed pre-aligned, which is exact for phantoms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::MetricSpec;
use crate::optimizer::{register, OptimizerConfig};
use crate::rng;
use crate::transform::AffineParams;
use crate::volume::{prepare, Volume};

const START_SALT: u64 = 0x7374_6172;
const SUBJECT_SALT: u64 = 0x7375_626a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// T1 against itself, one subject.
    T1,
    /// T1 fixed, T2 moving, one subject.
    T2,
    /// T1 against T1 of independently drawn subjects.
    RandomizedT1,
    /// T1 fixed, T2 moving, independently drawn subjects.
    RandomizedT2,
}

impl Scenario {
    pub fn is_randomized(self) -> bool {
        matches!(self, Scenario::RandomizedT1 | Scenario::RandomizedT2)
    }

    fn moving_is_t2(self) -> bool {
        matches!(self, Scenario::T2 | Scenario::RandomizedT2)
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::T1 => "T1",
            Scenario::T2 => "T2",
            Scenario::RandomizedT1 => "Randomized T1",
            Scenario::RandomizedT2 => "Randomized T2",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Scenario::T1),
            "t2" => Ok(Scenario::T2),
            "randomized-t1" => Ok(Scenario::RandomizedT1),
            "randomized-t2" => Ok(Scenario::RandomizedT2),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

/// A subject's two modalities, assumed aligned with each other.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub t1: Volume,
    pub t2: Volume,
}

fn default_trials() -> usize {
    1000
}

fn default_sigma() -> f64 {
    50.0
}

fn default_thresholds() -> Vec<f64> {
    vec![1.0, 3.0, 5.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub scenario: Scenario,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Standard deviation of each start translation component, mm.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub master_seed: u64,
    pub spec: MetricSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Subject ids; single-subject scenarios use the first.
    pub subject_pool: Vec<String>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

impl TrialConfig {
    pub fn new(scenario: Scenario, master_seed: u64, spec: MetricSpec, subject_pool: Vec<String>) -> Self {
        Self {
            scenario,
            trials: default_trials(),
            sigma: default_sigma(),
            master_seed,
            spec,
            optimizer: OptimizerConfig::default(),
            subject_pool,
            thresholds: default_thresholds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.subject_pool.is_empty() {
            return Err(Error::InvalidArgument("subject pool is empty".into()));
        }
        self.spec.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub start_params: [f64; 3],
    pub end_params: [f64; 3],
    pub start_distance: f64,
    pub end_distance: f64,
    pub fixed_id: String,
    pub moving_id: String,
    pub wall_time: f64,
    pub success_5mm: bool,
    pub failure_reason: Option<String>,
    pub iterations: usize,
    pub converged: bool,
    pub final_metric: Option<f64>,
    /// Accepted metric values in order, when the optimizer recorded them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<f64>>,
}

impl TrialRecord {
    /// Equality ignoring wall time, which is the only nondeterministic field.
    pub fn same_outcome(&self, other: &TrialRecord) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        a == *other
    }
}

fn norm(p: [f64; 3]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Start translation of a trial: one `N(0, sigma²)` deviate per axis from a
/// generator keyed by `(master_seed, trial_index, axis)`. Not clipped.
pub fn draw_start(trial_index: u64, master_seed: u64, sigma: f64) -> [f64; 3] {
    std::array::from_fn(|axis| {
        let mut g = rng::stream(rng::keyed(master_seed, &[START_SALT, trial_index, axis as u64]), 0);
        let z: f64 = g.sample(StandardNormal);
        sigma * z
    })
}

/// Fixed and moving subject indices for a trial.
fn draw_subjects(cfg: &TrialConfig, trial_index: u64) -> (usize, usize) {
    if !cfg.scenario.is_randomized() {
        return (0, 0);
    }
    let n = cfg.subject_pool.len() as u64;
    let pick = |side: u64| (rng::keyed(cfg.master_seed, &[SUBJECT_SALT, trial_index, side]) % n) as usize;
    (pick(0), pick(1))
}

/// Run every trial of an essay. Per-trial failures are recorded, not raised.
pub fn run_essay(cfg: &TrialConfig, subjects: &[Subject]) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let by_id: BTreeMap<&str, &Subject> = subjects.iter().map(|s| (s.id.as_str(), s)).collect();
    let pool: Vec<&Subject> = cfg
        .subject_pool
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("subject `{id}` not provided")))
        })
        .collect::<Result<_>>()?;
    // Prepare each needed volume once.
    let used = if cfg.scenario.is_randomized() { pool.len() } else { 1 };
    let prepared: Vec<(Volume, Volume)> = pool[..used]
        .par_iter()
        .map(|s| {
            let moving = if cfg.scenario.moving_is_t2() { &s.t2 } else { &s.t1 };
            Ok((prepare(&s.t1, cfg.spec.bits)?, prepare(moving, cfg.spec.bits)?))
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, &pool, &prepared, i))
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| r.trial_index);
    Ok(records)
}

fn run_trial(cfg: &TrialConfig, pool: &[&Subject], prepared: &[(Volume, Volume)], i: usize) -> Result<TrialRecord> {
    let start = draw_start(i as u64, cfg.master_seed, cfg.sigma);
    let (fi, mi) = draw_subjects(cfg, i as u64);
    let fixed = &prepared[fi].0;
    let moving = &prepared[mi].1;
    let result = register(fixed, moving, &AffineParams::translation(start), &cfg.spec, &cfg.optimizer)?;
    let end = result.final_params.p;
    let end_distance = norm(end);
    Ok(TrialRecord {
        trial_index: i,
        start_params: start,
        end_params: end,
        start_distance: norm(start),
        end_distance,
        fixed_id: pool[fi].id.clone(),
        moving_id: pool[mi].id.clone(),
        wall_time: result.wall_time,
        success_5mm: end_distance <= 5.0,
        failure_reason: result.failure_reason,
        iterations: result.iterations,
        converged: result.converged,
        final_metric: result.final_metric,
        trajectory: result.trajectory.map(|t| t.into_iter().map(|p| p.metric).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRate {
    pub threshold_mm: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssaySummary {
    pub trials: usize,
    pub mean_end_distance: f64,
    /// Sample standard deviation (n - 1 denominator); zero for one trial.
    pub std_end_distance: f64,
    pub within: Vec<ThresholdRate>,
    pub failures: usize,
}

/// Mean, deviation and success percentages of an essay's end distances.
pub fn summarize(records: &[TrialRecord], thresholds: &[f64]) -> Result<EssaySummary> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to summarize".into()));
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.end_distance).sum::<f64>() / n;
    let std = if records.len() > 1 {
        (records.iter().map(|r| (r.end_distance - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let within = thresholds
        .iter()
        .map(|&t| ThresholdRate {
            threshold_mm: t,
            percent: 100.0 * records.iter().filter(|r| r.end_distance <= t).count() as f64 / n,
        })
        .collect();
    Ok(EssaySummary {
        trials: records.len(),
        mean_end_distance: mean,
        std_end_distance: std,
        within,
        failures: records.iter().filter(|r| r.failure_reason.is_some()).count(),
    })
}

/// Write `start_distance,end_distance` per trial to `csv_path` and the
/// summary next to it as `<stem>.summary.json`.
pub fn export_plots_data(records: &[TrialRecord], thresholds: &[f64], csv_path: impl AsRef<Path>) -> Result<EssaySummary> {
    let csv_path = csv_path.as_ref();
    let summary = summarize(records, thresholds)?;
    let mut out = String::from("trial_index,start_distance,end_distance,success_5mm\n");
    for r in records {
        out.push_str(&format!(
            "{},{:?},{:?},{}\n",
            r.trial_index, r.start_distance, r.end_distance, r.success_5mm
        ));
    }
    fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))?;
    let json_path = summary_path(csv_path);
    fs::write(&json_path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&json_path, e))?;
    Ok(summary)
}

pub fn summary_path(csv_path: &Path) -> std::path::PathBuf {
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    csv_path.with_file_name(format!("{stem}.summary.json"))
}
