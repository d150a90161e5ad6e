use gmi_core::landscape::MetricCube;
use gmi_core::metric::{MetricFamily, MetricSpec};
use gmi_core::montecarlo::{draw_start, run_essay, Scenario, Subject, TrialConfig};
use gmi_core::optimizer::{finite_diff_gradient, register, OptimizerConfig};
use gmi_core::phantom::{generate_phantom, Modality, PhantomSpec};
use gmi_core::transform::{AffineParams, TransformKind};
use gmi_core::volume::{prepare, Volume};

fn phantom(size: usize, spacing: f64, seed: u64, modality: Modality) -> Volume {
    generate_phantom(&PhantomSpec::new([size; 3], [spacing; 3], seed, modality, 4)).unwrap()
}

fn subject(id: &str, size: usize, spacing: f64, seed: u64) -> Subject {
    Subject {
        id: id.into(),
        t1: phantom(size, spacing, seed, Modality::T1Like),
        t2: phantom(size, spacing, seed, Modality::T2Like),
    }
}

fn norm(p: [f64; 3]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn start_at_optimum_stays() {
    let v = prepare(&phantom(48, 1.5, 42, Modality::T1Like), None).unwrap();
    let spec = MetricSpec::shannon();
    let r = register(&v, &v, &AffineParams::identity(TransformKind::Translation), &spec, &OptimizerConfig::default()).unwrap();
    assert!(r.converged);
    assert!(norm(r.final_params.p) <= 1.5, "{:?}", r.final_params);
}

#[test]
fn recovers_thirty_millimetres() {
    let v = prepare(&phantom(64, 1.5, 42, Modality::T1Like), None).unwrap();
    let cfg = OptimizerConfig {
        record_trajectory: true,
        ..Default::default()
    };
    let init = AffineParams::translation([30.0, 0.0, 0.0]);
    let r = register(&v, &v, &init, &MetricSpec::shannon(), &cfg).unwrap();
    assert!(norm(r.final_params.p) <= 1.0, "{:?}", r.final_params);
    let traj = r.trajectory.as_ref().unwrap();
    assert!(traj.windows(2).all(|w| w[1].metric >= w[0].metric));
    assert_eq!(traj.last().unwrap().params, r.final_params.p);

    let again = register(&v, &v, &init, &MetricSpec::shannon(), &cfg).unwrap();
    assert_eq!(again.trajectory, r.trajectory);
}

#[test]
fn start_outside_overlap_fails_cleanly() {
    let v = prepare(&phantom(64, 1.0, 42, Modality::T1Like), None).unwrap();
    let init = AffineParams::translation([400.0, 0.0, 0.0]);
    let r = register(&v, &v, &init, &MetricSpec::shannon(), &OptimizerConfig::default()).unwrap();
    assert!(!r.converged);
    assert!(r.failure_reason.as_deref().unwrap().contains("overlap"));
    assert_eq!(r.final_params, init);
}

#[test]
fn rejects_non_translation() {
    let v = prepare(&phantom(16, 1.0, 1, Modality::T1Like), None).unwrap();
    let init = AffineParams::identity(TransformKind::Rotation);
    assert!(register(&v, &v, &init, &MetricSpec::shannon(), &OptimizerConfig::default()).is_err());
}

/// Trilinear interpolation of a cube over its index space.
fn trilinear(cube: &MetricCube, x: [f64; 3]) -> (f64, [f64; 3]) {
    let i0 = x.map(|c| (c.floor() as usize).min(cube.resolution - 2));
    let t: [f64; 3] = std::array::from_fn(|a| x[a] - i0[a] as f64);
    let mut value = 0.0;
    let mut grad = [0.0; 3];
    for corner in 0..8 {
        let bit = |a: usize| (corner >> a) & 1;
        let v = cube.value(std::array::from_fn(|a| i0[a] + bit(a)));
        let w: [f64; 3] = std::array::from_fn(|a| if bit(a) == 1 { t[a] } else { 1.0 - t[a] });
        value += v * w[0] * w[1] * w[2];
        for a in 0..3 {
            let dw = if bit(a) == 1 { 1.0 } else { -1.0 };
            let others: f64 = (0..3).filter(|&b| b != a).map(|b| w[b]).product();
            grad[a] += v * dw * others;
        }
    }
    (value, grad)
}

#[test]
fn gradient_matches_trilinear_surface() {
    use rand::{Rng, SeedableRng};
    let r = 7;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let values = (0..r * r * r).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cube = MetricCube::from_values(r, TransformKind::Translation, MetricSpec::shannon(), values, None).unwrap();
    for _ in 0..200 {
        // Keep probes inside one cell along each axis, where the surface is
        // linear per axis and central differences are exact.
        let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(0..r - 1) as f64 + rng.random_range(0.2..0.8));
        let delta = 0.1;
        let f = |p: &AffineParams| Ok(trilinear(&cube, p.p).0);
        let fd = finite_diff_gradient(f, &AffineParams::translation(x), delta).unwrap();
        let (_, analytic) = trilinear(&cube, x);
        for a in 0..3 {
            assert!((fd[a] - analytic[a]).abs() <= 1e-6, "{fd:?} vs {analytic:?}");
        }
    }
}

#[test]
fn start_draw_statistics() {
    let n = 10_000;
    let draws: Vec<[f64; 3]> = (0..n).map(|i| draw_start(i, 77, 50.0)).collect();
    for axis in 0..3 {
        let inside = draws.iter().filter(|d| d[axis].abs() <= 150.0).count() as f64 / n as f64;
        assert!((0.995..=0.999).contains(&inside), "axis {axis}: {inside}");
        let mean = draws.iter().map(|d| d[axis]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 2.0, "axis {axis}: {mean}");
    }
    assert!(draws.iter().any(|d| d.iter().any(|x| x.abs() > 150.0)), "draws are not clipped");
}

#[test]
fn two_trial_essay_improves() {
    let s = subject("a", 48, 1.5, 42);
    let mut cfg = TrialConfig::new(Scenario::T1, 11, MetricSpec::shannon(), vec!["a".into()]);
    cfg.trials = 2;
    cfg.sigma = 20.0;
    let records = run_essay(&cfg, &[s]).unwrap();
    assert_eq!(records.len(), 2);
    for r in &records {
        assert!(r.end_distance < r.start_distance, "{r:?}");
        assert_eq!(r.success_5mm, r.end_distance <= 5.0);
        assert_eq!((r.fixed_id.as_str(), r.moving_id.as_str()), ("a", "a"));
    }
}

#[test]
fn randomized_pool_and_failures() {
    let pool: Vec<Subject> = (0..3).map(|i| subject(&format!("s{i}"), 16, 2.0, 100 + i)).collect();
    let ids: Vec<String> = pool.iter().map(|s| s.id.clone()).collect();
    let spec = MetricSpec::tsallis(MetricFamily::TsallisNonadditive, 1.3).unwrap();
    let mut cfg = TrialConfig::new(Scenario::RandomizedT2, 5, spec, ids.clone());
    cfg.trials = 24;
    // Wide starts on a 32 mm field: many trials begin without overlap.
    cfg.sigma = 60.0;
    cfg.optimizer.max_iterations = 20;
    let records = run_essay(&cfg, &pool).unwrap();
    assert_eq!(records.len(), 24);
    assert!(records.iter().enumerate().all(|(i, r)| r.trial_index == i));
    assert!(records.iter().all(|r| ids.contains(&r.fixed_id) && ids.contains(&r.moving_id)));
    assert!(records.iter().any(|r| r.fixed_id != r.moving_id));
    let failed: Vec<_> = records.iter().filter(|r| r.failure_reason.is_some()).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|r| !r.success_5mm && r.end_params == r.start_params));
    assert!(records.iter().any(|r| r.failure_reason.is_none()));

    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_essay(&cfg, &pool).unwrap());
    assert!(records.iter().zip(&serial).all(|(a, b)| a.same_outcome(b)));
}

#[test]
fn unknown_subject_is_rejected() {
    let s = subject("a", 16, 2.0, 1);
    let cfg = TrialConfig::new(Scenario::T2, 1, MetricSpec::shannon(), vec!["b".into()]);
    assert!(run_essay(&cfg, &[s]).is_err());
}
