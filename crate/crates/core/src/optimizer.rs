//! Regular-step gradient ascent over translation parameters.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{evaluate_metric, MetricSpec};
use crate::transform::{AffineParams, TransformKind};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// First step length, mm.
    pub initial_step: f64,
    /// Step multiplier on a rejected step or a gradient reversal.
    pub relaxation: f64,
    /// Converged once the step falls below this, mm.
    pub min_step: f64,
    /// Central-difference probe offset, mm.
    pub fd_delta: f64,
    pub record_trajectory: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            initial_step: 4.0,
            relaxation: 0.5,
            min_step: 0.05,
            fd_delta: 1.0,
            record_trajectory: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(self.relaxation > 0.0 && self.relaxation < 1.0) {
            return bad(format!("relaxation must lie in (0, 1), got {}", self.relaxation));
        }
        if !(self.min_step > 0.0 && self.min_step < self.initial_step) {
            return bad(format!(
                "need 0 < min_step < initial_step, got {} and {}",
                self.min_step, self.initial_step
            ));
        }
        if !(self.fd_delta > 0.0) {
            return bad(format!("fd_delta must be positive, got {}", self.fd_delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub params: [f64; 3],
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub final_params: AffineParams,
    /// `None` when the metric could not be evaluated at the start.
    pub final_metric: Option<f64>,
    /// Candidate steps tried.
    pub iterations: usize,
    /// Accepted points, starting with the initial one.
    pub trajectory: Option<Vec<TrajectoryPoint>>,
    pub converged: bool,
    pub failure_reason: Option<String>,
    /// Seconds.
    pub wall_time: f64,
}

/// Central-difference gradient of `objective` at `p`.
pub fn finite_diff_gradient<F>(objective: F, p: &AffineParams, delta: f64) -> Result<[f64; 3]>
where
    F: Fn(&AffineParams) -> Result<f64> + Sync,
{
    let probes: Vec<f64> = (0..6)
        .into_par_iter()
        .map(|i| {
            let mut q = *p;
            q.p[i / 2] += if i % 2 == 0 { delta } else { -delta };
            objective(&q)
        })
        .collect::<Result<_>>()?;
    Ok(std::array::from_fn(|a| (probes[2 * a] - probes[2 * a + 1]) / (2.0 * delta)))
}

/// Maximize `objective` from `init` with regular-step gradient ascent.
///
/// Each iteration steps `step` mm along the unit gradient. A step is kept if
/// the objective does not decrease, so plateaus are crossed; otherwise, or when the gradient
/// direction turns by more than 90°, the step is multiplied by the relaxation
/// factor. Objective errors at a candidate count as a rejection; errors at the
/// start or inside a gradient probe end the run unconverged.
pub fn maximize<F>(objective: F, init: &AffineParams, cfg: &OptimizerConfig) -> Result<RegistrationResult>
where
    F: Fn(&AffineParams) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let started = Instant::now();
    let mut result = RegistrationResult {
        final_params: *init,
        final_metric: None,
        iterations: 0,
        trajectory: cfg.record_trajectory.then(Vec::new),
        converged: false,
        failure_reason: None,
        wall_time: 0.0,
    };
    let finish = |mut r: RegistrationResult| {
        r.wall_time = started.elapsed().as_secs_f64();
        Ok(r)
    };

    let mut p = *init;
    let mut f = match objective(&p) {
        Ok(v) => v,
        Err(e) => {
            result.failure_reason = Some(e.to_string());
            return finish(result);
        }
    };
    result.final_metric = Some(f);
    if let Some(t) = result.trajectory.as_mut() {
        t.push(TrajectoryPoint { params: p.p, metric: f });
    }

    let mut step = cfg.initial_step;
    let mut previous_dir: Option<[f64; 3]> = None;
    let mut gradient: Option<[f64; 3]> = None;
    while result.iterations < cfg.max_iterations {
        let g = match gradient {
            Some(g) => g,
            None => match finite_diff_gradient(&objective, &p, cfg.fd_delta) {
                Ok(g) => *gradient.insert(g),
                Err(e) => {
                    result.failure_reason = Some(format!("gradient: {e}"));
                    break;
                }
            },
        };
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            result.converged = norm == 0.0;
            if !result.converged {
                result.failure_reason = Some("non-finite gradient".into());
            }
            break;
        }
        let dir = g.map(|x| x / norm);
        if let Some(prev) = previous_dir.take() {
            if prev.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                step *= cfg.relaxation;
            }
        }
        if step < cfg.min_step {
            result.converged = true;
            break;
        }

        let mut candidate = p;
        for a in 0..3 {
            candidate.p[a] += step * dir[a];
        }
        result.iterations += 1;
        match objective(&candidate) {
            Ok(fc) if fc >= f => {
                p = candidate;
                f = fc;
                gradient = None;
                previous_dir = Some(dir);
                if let Some(t) = result.trajectory.as_mut() {
                    t.push(TrajectoryPoint { params: p.p, metric: f });
                }
            }
            _ => {
                step *= cfg.relaxation;
                if step < cfg.min_step {
                    result.converged = true;
                    break;
                }
            }
        }
    }
    result.final_params = p;
    result.final_metric = Some(f);
    finish(result)
}

/// Register `moving` to `fixed` over translations. Volumes must be prepared
/// for `spec`.
pub fn register(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineParams,
    spec: &MetricSpec,
    cfg: &OptimizerConfig,
) -> Result<RegistrationResult> {
    if init.kind != TransformKind::Translation {
        return Err(Error::InvalidArgument(format!(
            "the optimizer only handles translation, got {}",
            init.kind
        )));
    }
    spec.validate()?;
    maximize(|p| evaluate_metric(fixed, moving, p, spec), init, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(p: [f64; 3]) -> AffineParams {
        AffineParams::translation(p)
    }

    #[test]
    fn gradient_quadratic_and_linear() {
        let quad = |p: &AffineParams| Ok(-p.p.iter().map(|x| x * x).sum::<f64>());
        assert_eq!(finite_diff_gradient(quad, &t([3.0, 0.0, 0.0]), 1.0).unwrap(), [-6.0, 0.0, 0.0]);
        let lin = |p: &AffineParams| Ok(2.0 * p.p[0] + 3.0 * p.p[1] - p.p[2]);
        let g = finite_diff_gradient(lin, &t([0.5, -7.0, 11.0]), 1.0).unwrap();
        for (a, b) in g.iter().zip([2.0, 3.0, -1.0]) {
            assert!((a - b).abs() <= 1e-12);
        }
        let flat = |_: &AffineParams| Ok(4.2);
        assert_eq!(finite_diff_gradient(flat, &t([1.0; 3]), 0.5).unwrap(), [0.0; 3]);
    }

    #[test]
    fn gradient_propagates_errors() {
        let f = |p: &AffineParams| if p.p[1] > 0.5 { Err(Error::EmptyOverlap) } else { Ok(0.0) };
        assert!(matches!(finite_diff_gradient(f, &t([0.0; 3]), 1.0), Err(Error::EmptyOverlap)));
    }

    #[test]
    fn ascends_a_bowl() {
        let bowl = |p: &AffineParams| Ok(-((p.p[0] - 3.0).powi(2) + (p.p[1] + 7.0).powi(2) + p.p[2].powi(2)));
        let cfg = OptimizerConfig {
            record_trajectory: true,
            ..Default::default()
        };
        let r = maximize(bowl, &t([30.0, 20.0, -10.0]), &cfg).unwrap();
        assert!(r.converged);
        let err = ((r.final_params.p[0] - 3.0).powi(2) + (r.final_params.p[1] + 7.0).powi(2) + r.final_params.p[2].powi(2)).sqrt();
        assert!(err < 0.1, "{:?}", r.final_params);
        let traj = r.trajectory.unwrap();
        assert!(traj.windows(2).all(|w| w[1].metric > w[0].metric));
        assert!(r.iterations <= cfg.max_iterations);
    }

    #[test]
    fn start_failure_is_reported() {
        let f = |_: &AffineParams| -> Result<f64> { Err(Error::EmptyOverlap) };
        let r = maximize(f, &t([400.0, 0.0, 0.0]), &OptimizerConfig::default()).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 0);
        assert!(r.final_metric.is_none());
        assert!(r.failure_reason.unwrap().contains("overlap"));
    }

    #[test]
    fn iteration_cap() {
        let ramp = |p: &AffineParams| Ok(p.p[0]);
        let cfg = OptimizerConfig {
            max_iterations: 7,
            ..Default::default()
        };
        let r = maximize(ramp, &t([0.0; 3]), &cfg).unwrap();
        assert_eq!(r.iterations, 7);
        assert!(!r.converged);
        assert!((r.final_params.p[0] - 28.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::default();
        assert!(c.validate().is_ok());
        c.relaxation = 1.0;
        assert!(c.validate().is_err());
        c = OptimizerConfig {
            min_step: 5.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let parsed: OptimizerConfig = serde_json::from_str(r#"{"initial_step": 2.0}"#).unwrap();
        assert_eq!(parsed.max_iterations, 500);
        assert_eq!(parsed.initial_step, 2.0);
    }
}
