use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmi_core::capture::{capture_report, CaptureSummary};

use crate::essay::EssayReport;
use crate::CliError;

pub enum Artifact {
    Capture(CaptureSummary),
    Essay(EssayReport),
}

impl Artifact {
    fn kind(&self) -> &'static str {
        match self {
            Artifact::Capture(_) => "capture summary",
            Artifact::Essay(_) => "Monte Carlo summary",
        }
    }
}

pub fn read_artifact(path: &Path) -> Result<Artifact> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let has = |k: &str| value.get(k).is_some();
    if has("connectivity") && has("rate") {
        Ok(Artifact::Capture(serde_json::from_value(value).with_context(|| {
            format!("{} is not a valid capture summary", path.display())
        })?))
    } else if has("within") && has("scenario") {
        Ok(Artifact::Essay(serde_json::from_value(value).with_context(|| {
            format!("{} is not a valid Monte Carlo summary", path.display())
        })?))
    } else {
        Err(CliError::Usage(format!("{} is not a capture or Monte Carlo summary", path.display())).into())
    }
}

pub struct Tables {
    pub markdown: String,
    pub csv: String,
}

pub fn build(inputs: &[PathBuf]) -> Result<Tables> {
    let artifacts: Vec<(PathBuf, Artifact)> = inputs
        .iter()
        .map(|p| Ok((p.clone(), read_artifact(p)?)))
        .collect::<Result<_>>()?;
    let (first_path, first) = artifacts
        .first()
        .ok_or_else(|| CliError::Usage("report needs at least one input".into()))?;
    if let Some((p, a)) = artifacts.iter().find(|(_, a)| a.kind() != first.kind()) {
        return Err(CliError::Usage(format!(
            "incompatible inputs: {} is a {} but {} is a {}",
            first_path.display(),
            first.kind(),
            p.display(),
            a.kind()
        ))
        .into());
    }
    match first {
        Artifact::Capture(_) => {
            let rows: Vec<_> = artifacts
                .iter()
                .map(|(_, a)| match a {
                    Artifact::Capture(c) => (c.spec, c.kind, c.rate),
                    Artifact::Essay(_) => unreachable!("kinds checked above"),
                })
                .collect();
            let table = capture_report(&rows)?;
            Ok(Tables {
                markdown: table.to_markdown(),
                csv: table.to_csv(),
            })
        }
        Artifact::Essay(_) => {
            let essays: Vec<&EssayReport> = artifacts
                .iter()
                .map(|(_, a)| match a {
                    Artifact::Essay(e) => e,
                    Artifact::Capture(_) => unreachable!("kinds checked above"),
                })
                .collect();
            essay_table(&essays)
        }
    }
}

fn essay_table(essays: &[&EssayReport]) -> Result<Tables> {
    let thresholds: Vec<f64> = essays[0].summary.within.iter().map(|w| w.threshold_mm).collect();
    for e in essays {
        let t: Vec<f64> = e.summary.within.iter().map(|w| w.threshold_mm).collect();
        if t != thresholds {
            return Err(CliError::Usage(format!(
                "incompatible inputs: thresholds {thresholds:?} and {t:?} differ"
            ))
            .into());
        }
    }
    let mut header = vec!["Method".to_string(), "Scenario".into(), "Mean".into(), "Deviation".into()];
    header.extend(thresholds.iter().map(|t| format!("{t}mm")));
    let rows: Vec<Vec<String>> = essays
        .iter()
        .map(|e| {
            let mut r = vec![
                e.method.clone(),
                e.scenario.label().to_string(),
                format!("{:.2}", e.summary.mean_end_distance),
                format!("{:.2}", e.summary.std_end_distance),
            ];
            r.extend(e.summary.within.iter().map(|w| format!("{:.2}", w.percent)));
            r
        })
        .collect();

    let mut markdown = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    let mut csv = header.join(",") + "\n";
    for r in &rows {
        let _ = writeln!(markdown, "| {} |", r.join(" | "));
        let _ = writeln!(csv, "{}", r.join(","));
    }
    Ok(Tables { markdown, csv })
}
