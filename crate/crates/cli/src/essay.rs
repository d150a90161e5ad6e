//! Essay configuration files: a trial configuration plus the subjects it
//! draws from, either phantoms or volume files.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmi_core::metric::MetricSpec;
use gmi_core::montecarlo::{EssaySummary, Scenario, Subject, TrialConfig};
use gmi_core::optimizer::OptimizerConfig;
use gmi_core::phantom::{generate_phantom, Modality, PhantomSpec, DEFAULT_NOISE};
use gmi_core::volume::{load_volume, VolumeFormat};
use serde::{Deserialize, Serialize};

use crate::{require_input, volume_inputs};

fn default_structures() -> usize {
    4
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSource {
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    #[serde(default = "default_structures")]
    pub structure_count: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubjectSource {
    Phantom { id: String, phantom: PhantomSource },
    Files { id: String, t1: PathBuf, t2: PathBuf },
}

impl SubjectSource {
    pub fn id(&self) -> &str {
        match self {
            SubjectSource::Phantom { id, .. } | SubjectSource::Files { id, .. } => id,
        }
    }
}

/// On-disk form; everything but the subjects and the metric has a default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssayFile {
    pub scenario: Option<Scenario>,
    pub trials: Option<usize>,
    pub sigma: Option<f64>,
    pub master_seed: Option<u64>,
    pub spec: Option<MetricSpec>,
    pub optimizer: Option<OptimizerConfig>,
    pub thresholds: Option<Vec<f64>>,
    /// Defaults to every listed subject, in order.
    pub subject_pool: Option<Vec<String>>,
    pub subjects: Vec<SubjectSource>,
}

/// Fully resolved essay, as recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedEssay {
    pub trial: TrialConfig,
    pub subjects: Vec<SubjectSource>,
}

impl EssayFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid essay config {}", path.display()))
    }

    /// Fill defaults and make file paths relative to `base`.
    pub fn resolve(self, base: &Path) -> ResolvedEssay {
        let pool = self
            .subject_pool
            .unwrap_or_else(|| self.subjects.iter().map(|s| s.id().to_string()).collect());
        let mut trial = TrialConfig::new(
            self.scenario.unwrap_or(Scenario::T1),
            self.master_seed.unwrap_or(0),
            self.spec.unwrap_or_else(MetricSpec::shannon),
            pool,
        );
        if let Some(t) = self.trials {
            trial.trials = t;
        }
        if let Some(s) = self.sigma {
            trial.sigma = s;
        }
        if let Some(o) = self.optimizer {
            trial.optimizer = o;
        }
        if let Some(t) = self.thresholds {
            trial.thresholds = t;
        }
        let subjects = self
            .subjects
            .into_iter()
            .map(|s| match s {
                SubjectSource::Files { id, t1, t2 } => SubjectSource::Files {
                    id,
                    t1: base.join(t1),
                    t2: base.join(t2),
                },
                other => other,
            })
            .collect();
        ResolvedEssay { trial, subjects }
    }
}

impl ResolvedEssay {
    pub fn input_files(&self) -> Vec<PathBuf> {
        self.subjects
            .iter()
            .flat_map(|s| match s {
                SubjectSource::Files { t1, t2, .. } => [volume_inputs(t1), volume_inputs(t2)].concat(),
                SubjectSource::Phantom { .. } => Vec::new(),
            })
            .collect()
    }

    /// Build or load the subjects referenced by the pool.
    pub fn subjects(&self) -> Result<Vec<Subject>> {
        self.subjects
            .iter()
            .filter(|s| self.trial.subject_pool.iter().any(|id| id == s.id()))
            .map(|s| match s {
                SubjectSource::Phantom { id, phantom } => {
                    let mut spec = PhantomSpec::new(
                        phantom.size,
                        phantom.spacing,
                        phantom.seed,
                        Modality::T1Like,
                        phantom.structure_count,
                    );
                    spec.noise = phantom.noise;
                    Ok(Subject {
                        id: id.clone(),
                        t1: generate_phantom(&spec)?,
                        t2: generate_phantom(&spec.with_modality(Modality::T2Like))?,
                    })
                }
                SubjectSource::Files { id, t1, t2 } => {
                    let load = |p: &Path| -> Result<_> {
                        require_input(p)?;
                        load_volume(p, VolumeFormat::from_path(p)).with_context(|| format!("subject `{id}`"))
                    };
                    Ok(Subject {
                        id: id.clone(),
                        t1: load(t1)?,
                        t2: load(t2)?,
                    })
                }
            })
            .collect()
    }
}

/// The `summary.json` of an essay: the statistics plus what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssayReport {
    pub method: String,
    pub scenario: Scenario,
    pub spec: MetricSpec,
    #[serde(flatten)]
    pub summary: EssaySummary,
}
