//! `gmi-reg`: metric landscapes, capture simulation, registration and Monte
//! Carlo essays from the command line.

mod essay;
mod manifest;
mod report;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmi_core::capture::{family_label, simulate_capture_with, CaptureSummary, Connectivity, Direction, GrowthRule};
use gmi_core::landscape::{export_cube, generate_cube, import_cube, probe_line, CubeFormat, ProbePreset};
use gmi_core::metric::{MetricFamily, MetricSpec};
use gmi_core::montecarlo::{export_plots_data, run_essay, Scenario};
use gmi_core::optimizer::{register, OptimizerConfig};
use gmi_core::phantom::{generate_labels, generate_phantom, Modality, PhantomSpec, DEFAULT_NOISE};
use gmi_core::resample::{InterpKind, Interpolator, OutsidePolicy};
use gmi_core::transform::{AffineParams, TransformKind};
use gmi_core::volume::{load_volume, prepare, save_volume, sidecar_paths, DType, Volume, VolumeFormat};
use serde::Serialize;
use serde_json::json;

use crate::essay::{EssayFile, EssayReport};
use crate::manifest::{digest_file, now, RunManifest};

/// Failures with their own diagnostic and exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Conflict(String),
    MissingInput(PathBuf),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Conflict(m) => write!(f, "conflicting options: {m}"),
            CliError::MissingInput(p) => write!(f, "missing input: {} does not exist", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Conflict(_) => 2,
            CliError::MissingInput(_) => 3,
        }
    }
}

/// Files backing a volume or cube path: the sidecar pair for rawjson, the file
/// itself otherwise.
pub fn volume_inputs(path: &Path) -> Vec<PathBuf> {
    match VolumeFormat::from_path(path) {
        VolumeFormat::RawJson => {
            let (json, raw) = sidecar_paths(path);
            vec![json, raw]
        }
        VolumeFormat::Nifti1 => vec![path.to_path_buf()],
    }
}

pub fn require_input(path: &Path) -> Result<()> {
    for p in volume_inputs(path) {
        if !p.is_file() {
            return Err(CliError::MissingInput(p).into());
        }
    }
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "gmi-reg", version, about = "Generalized mutual information landscapes and registration")]
struct Cli {
    /// Worker threads; defaults to the machine's parallelism. Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write T1-like and T2-like phantom volumes and their label map.
    Phantom(PhantomArgs),
    /// Evaluate a metric over a cube of transform parameters.
    Landscape(LandscapeArgs),
    /// Sample a metric cube along a line.
    Probe(ProbeArgs),
    /// Simulate the capture region of a metric cube.
    Capture(CaptureArgs),
    /// Register two volumes over translation by gradient ascent.
    Register(RegisterArgs),
    /// Run a randomized-start registration essay.
    Montecarlo(MontecarloArgs),
    /// Merge capture or Monte Carlo summaries into one table.
    Report(ReportArgs),
}

fn parse_triplet(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [v] => Ok([v; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(format!("expected one or three comma-separated numbers, got `{s}`")),
    }
}

fn parse_index(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected three comma-separated indices, got `{s}`"))
}

fn parse_outside(s: &str) -> Result<OutsidePolicy, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected `exclude` or `zero-fill`, got `{s}`"))
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    let n: u8 = s.parse().map_err(|_| format!("expected 6 or 26, got `{s}`"))?;
    Connectivity::try_from(n).map_err(|e| e.to_string())
}

fn parse_rule(s: &str) -> Result<GrowthRule, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected `adjacent` or `seed-comparison`, got `{s}`"))
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Modalities {
    T1like,
    T2like,
    Both,
}

impl Modalities {
    fn list(self) -> Vec<Modality> {
        match self {
            Modalities::T1like => vec![Modality::T1Like],
            Modalities::T2like => vec![Modality::T2Like],
            Modalities::Both => vec![Modality::T1Like, Modality::T2Like],
        }
    }
}

/// Metric selection; unset fields fall back to a base spec.
#[derive(Args, Debug, Clone, Serialize)]
struct MetricArgs {
    /// shannon, tsallis-nonadditive, tsallis-additive, yamano or sparavigna
    #[arg(long)]
    metric: Option<MetricFamily>,
    /// Entropic index; required by the Tsallis families, rejected by shannon
    #[arg(long)]
    q: Option<f64>,
    /// Keep only the top BITS bits of each normalized intensity
    #[arg(long)]
    bits: Option<u8>,
    /// nearest, trilinear, lanczos[:a] or fastlanczos[:a]
    #[arg(long)]
    interp: Option<Interpolator>,
    /// Out-of-bounds samples: exclude or zero-fill
    #[arg(long, value_parser = parse_outside)]
    outside: Option<OutsidePolicy>,
}

impl MetricArgs {
    fn resolve(&self, base: MetricSpec) -> Result<MetricSpec> {
        let family = self.metric.unwrap_or(base.family);
        let q = if family.is_tsallis() {
            let inherited = base.family.is_tsallis().then_some(base.q);
            self.q.or(inherited).ok_or_else(|| CliError::Usage(format!("--q is required for --metric {family}")))?
        } else {
            if self.q.is_some() {
                return Err(CliError::Conflict("--q does not apply to --metric shannon".into()).into());
            }
            1.0
        };
        let spec = MetricSpec {
            family,
            q,
            bits: self.bits.or(base.bits),
            interp: self.interp.unwrap_or(base.interp),
            outside: self.outside.unwrap_or(base.outside),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Serialize)]
struct PhantomArgs {
    /// Voxels per axis, one value or x,y,z
    #[arg(long, default_value = "64", value_parser = parse_triplet)]
    size: [f64; 3],
    /// Voxel spacing in mm, one value or x,y,z
    #[arg(long, default_value = "1.5", value_parser = parse_triplet)]
    spacing: [f64; 3],
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of nested structures
    #[arg(long, default_value_t = 4)]
    structures: usize,
    /// Half-width of the uniform noise as a fraction of the dynamic range
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = Modalities::Both)]
    modality: Modalities,
    /// Output directory; receives t1.raw, t2.raw and labels.raw with sidecars
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct LandscapeArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    /// translation, rotation, scale or skew
    #[arg(long, default_value = "translation")]
    kind: TransformKind,
    #[command(flatten)]
    metric: MetricArgs,
    /// Samples per axis (odd)
    #[arg(long, default_value_t = gmi_core::landscape::DEFAULT_RESOLUTION)]
    resolution: usize,
    /// rawjson or csv
    #[arg(long, default_value = "rawjson")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ProbeArgs {
    #[arg(long)]
    cube: PathBuf,
    /// axis-x, axis-y, axis-z, plane-diagonal or cube-diagonal
    #[arg(long, conflicts_with_all = ["from", "to"], required_unless_present = "from")]
    preset: Option<String>,
    /// Start index i,j,k
    #[arg(long, value_parser = parse_index, requires = "to")]
    from: Option<[usize; 3]>,
    /// End index i,j,k
    #[arg(long, value_parser = parse_index, requires = "from")]
    to: Option<[usize; 3]>,
    /// Samples along the line; defaults to the cube resolution
    #[arg(long)]
    samples: Option<usize>,
    /// CSV output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CaptureArgs {
    #[arg(long)]
    cube: PathBuf,
    /// 6 or 26
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    connectivity: Connectivity,
    /// maximize or minimize
    #[arg(long, default_value = "maximize")]
    direction: Direction,
    /// adjacent or seed-comparison
    #[arg(long, default_value = "adjacent", value_parser = parse_rule)]
    rule: GrowthRule,
    /// Summary JSON
    #[arg(long)]
    out: PathBuf,
    /// Also write the captured mask as a u16 rawjson volume
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct OptimizerArgs {
    #[arg(long)]
    max_iterations: Option<usize>,
    /// First step length in mm
    #[arg(long)]
    initial_step: Option<f64>,
    /// Step multiplier after a rejected step
    #[arg(long)]
    relaxation: Option<f64>,
    /// Stop once the step drops below this many mm
    #[arg(long)]
    min_step: Option<f64>,
    /// Central-difference offset in mm
    #[arg(long)]
    fd_delta: Option<f64>,
}

impl OptimizerArgs {
    fn apply(&self, mut c: OptimizerConfig) -> OptimizerConfig {
        if let Some(v) = self.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = self.initial_step {
            c.initial_step = v;
        }
        if let Some(v) = self.relaxation {
            c.relaxation = v;
        }
        if let Some(v) = self.min_step {
            c.min_step = v;
        }
        if let Some(v) = self.fd_delta {
            c.fd_delta = v;
        }
        c
    }
}

#[derive(Args, Debug, Serialize)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[command(flatten)]
    metric: MetricArgs,
    /// Initial translation in mm, x,y,z
    #[arg(long, default_value = "0,0,0", value_parser = parse_triplet, allow_hyphen_values = true)]
    init: [f64; 3],
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Record the accepted points in the result
    #[arg(long)]
    trace: bool,
    /// Result JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MontecarloArgs {
    /// Essay configuration JSON; flags override its values
    #[arg(long)]
    config: PathBuf,
    /// Records as JSON lines; summary.json, plot.csv and the manifest go next to it
    #[arg(long, default_value = "records.jsonl")]
    out: PathBuf,
    /// t1, t2, randomized-t1 or randomized-t2
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    trials: Option<usize>,
    /// Standard deviation of each start component in mm
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Keep each trial's accepted metric values in its record
    #[arg(long)]
    record_trajectory: bool,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    /// Capture summaries or Monte Carlo summary.json files, not mixed
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Markdown output
    #[arg(long, default_value = "report.md")]
    out: PathBuf,
    /// Also write the table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// What a command hands back for its manifest.
struct Run {
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn load_input(path: &Path) -> Result<Volume> {
    require_input(path)?;
    Ok(load_volume(path, VolumeFormat::from_path(path))?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn phantom(a: &PhantomArgs) -> Result<Run> {
    let size = a.size.map(|s| s as usize);
    if a.size.iter().any(|&s| s.fract() != 0.0 || s < 1.0) {
        return Err(CliError::Usage(format!("--size must be positive integers, got {:?}", a.size)).into());
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let mut spec = PhantomSpec::new(size, a.spacing, a.seed, Modality::T1Like, a.structures);
    spec.noise = a.noise;
    let mut outputs = Vec::new();
    for m in a.modality.list() {
        let name = match m {
            Modality::T1Like => "t1.raw",
            Modality::T2Like => "t2.raw",
        };
        let path = a.out_dir.join(name);
        save_volume(&generate_phantom(&spec.with_modality(m))?, &path)?;
        outputs.push(path);
    }
    let labels = a.out_dir.join("labels.raw");
    save_volume(&generate_labels(&spec)?, &labels)?;
    outputs.push(labels);
    Ok(Run {
        config: json!({ "spec": spec, "modalities": a.modality.list(), "out_dir": a.out_dir }),
        inputs: Vec::new(),
        outputs,
    })
}

fn landscape(a: &LandscapeArgs) -> Result<Run> {
    let spec = a.metric.resolve(MetricSpec::shannon())?;
    let format: CubeFormat = a.format.parse()?;
    let fixed = prepare(&load_input(&a.fixed)?, spec.bits)?;
    let moving = prepare(&load_input(&a.moving)?, spec.bits)?;
    let cube = generate_cube(&fixed, &moving, a.kind, &spec, a.resolution)?.with_ids(stem(&a.fixed), stem(&a.moving));
    create_parent(&a.out)?;
    export_cube(&cube, &a.out, format)?;
    let empty = cube.empty_overlap.iter().filter(|&&e| e).count();
    println!(
        "{} cube {}^3 written to {} (argmax {:?}, {} empty-overlap voxels)",
        a.kind,
        a.resolution,
        a.out.display(),
        cube.argmax(),
        empty
    );
    let outputs = match format {
        CubeFormat::RawJson => volume_inputs(&a.out),
        CubeFormat::Csv => vec![a.out.clone()],
    };
    Ok(Run {
        config: json!({
            "fixed": a.fixed, "moving": a.moving, "kind": a.kind, "spec": spec,
            "resolution": a.resolution, "format": a.format, "out": a.out,
        }),
        inputs: [volume_inputs(&a.fixed), volume_inputs(&a.moving)].concat(),
        outputs,
    })
}

fn probe(a: &ProbeArgs) -> Result<Run> {
    require_input(&a.cube)?;
    let cube = import_cube(&a.cube)?;
    let (start, end) = match (&a.preset, a.from, a.to) {
        (Some(p), _, _) => p.parse::<ProbePreset>()?.endpoints(cube.resolution),
        (None, Some(f), Some(t)) => (f, t),
        _ => return Err(CliError::Usage("give --preset or both --from and --to".into()).into()),
    };
    let samples = a.samples.unwrap_or(cube.resolution);
    let line = probe_line(&cube, start, end, samples)?;
    let mut out = String::from("position,i,j,k,value\n");
    for s in &line {
        let [i, j, k] = s.index;
        out.push_str(&format!("{:?},{i},{j},{k},{:?}\n", s.position, s.value));
    }
    create_parent(&a.out)?;
    fs::write(&a.out, out).with_context(|| format!("cannot write {}", a.out.display()))?;
    Ok(Run {
        config: json!({ "cube": a.cube, "from": start, "to": end, "samples": samples, "out": a.out }),
        inputs: volume_inputs(&a.cube),
        outputs: vec![a.out.clone()],
    })
}

fn capture(a: &CaptureArgs) -> Result<Run> {
    require_input(&a.cube)?;
    let cube = import_cube(&a.cube)?;
    let result = simulate_capture_with(&cube, a.connectivity, a.direction, a.rule, None);
    let summary = CaptureSummary::new(&cube, &result);
    create_parent(&a.out)?;
    write_json(&a.out, &summary)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(mask_path) = &a.mask_out {
        let r = cube.resolution;
        let data = result.captured.iter().map(|&c| c as u8 as f32).collect();
        let mask = Volume::new([r; 3], [1.0; 3], [0.0; 3], DType::U16, data)?;
        create_parent(mask_path)?;
        save_volume(&mask, mask_path)?;
        outputs.extend(volume_inputs(mask_path));
    }
    println!(
        "captured {} of {} ({})",
        summary.captured,
        summary.total,
        gmi_core::capture::format_rate(summary.rate)
    );
    Ok(Run {
        config: json!({
            "cube": a.cube, "connectivity": a.connectivity, "direction": a.direction,
            "rule": a.rule, "out": a.out, "mask_out": a.mask_out,
        }),
        inputs: volume_inputs(&a.cube),
        outputs,
    })
}

fn register_cmd(a: &RegisterArgs) -> Result<Run> {
    let spec = a.metric.resolve(MetricSpec::shannon())?;
    let cfg = OptimizerConfig {
        record_trajectory: a.trace,
        ..a.optimizer.apply(OptimizerConfig::default())
    };
    cfg.validate()?;
    let fixed = prepare(&load_input(&a.fixed)?, spec.bits)?;
    let moving = prepare(&load_input(&a.moving)?, spec.bits)?;
    let result = register(&fixed, &moving, &AffineParams::translation(a.init), &spec, &cfg)?;
    create_parent(&a.out)?;
    write_json(&a.out, &result)?;
    match &result.failure_reason {
        Some(r) => println!("registration failed: {r}"),
        None => println!(
            "final translation {:?} after {} iterations (converged: {})",
            result.final_params.p, result.iterations, result.converged
        ),
    }
    Ok(Run {
        config: json!({
            "fixed": a.fixed, "moving": a.moving, "spec": spec, "init": a.init,
            "optimizer": cfg, "out": a.out,
        }),
        inputs: [volume_inputs(&a.fixed), volume_inputs(&a.moving)].concat(),
        outputs: vec![a.out.clone()],
    })
}

fn method_label(spec: &MetricSpec) -> String {
    let interp = match spec.interp.kind {
        InterpKind::Nearest => "Nearest",
        InterpKind::Trilinear => "Trilinear",
        InterpKind::Lanczos => "Lanczos",
        InterpKind::FastLanczos => "FastLanczos",
    };
    let mut label = format!("{} {interp}", family_label(spec.family));
    if spec.family.is_tsallis() {
        label.push_str(&format!(" ({})", spec.q));
    }
    if let Some(b) = spec.bits {
        label.push_str(&format!(" {b} bits"));
    }
    label
}

fn montecarlo(a: &MontecarloArgs) -> Result<Run> {
    if !a.config.is_file() {
        return Err(CliError::MissingInput(a.config.clone()).into());
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let mut essay = EssayFile::load(&a.config)?.resolve(base);
    let t = &mut essay.trial;
    if let Some(s) = a.scenario {
        t.scenario = s;
    }
    if let Some(n) = a.trials {
        t.trials = n;
    }
    if let Some(s) = a.sigma {
        t.sigma = s;
    }
    if let Some(s) = a.seed {
        t.master_seed = s;
    }
    t.spec = a.metric.resolve(t.spec)?;
    t.optimizer = a.optimizer.apply(t.optimizer);
    t.optimizer.record_trajectory |= a.record_trajectory;
    t.validate()?;

    let subjects = essay.subjects()?;
    let records = run_essay(&essay.trial, &subjects)?;

    create_parent(&a.out)?;
    let mut lines = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut lines, r)?;
        lines.push(b'\n');
    }
    fs::write(&a.out, lines).with_context(|| format!("cannot write {}", a.out.display()))?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let plot = dir.join("plot.csv");
    let summary = export_plots_data(&records, &essay.trial.thresholds, &plot)?;
    let report = EssayReport {
        method: method_label(&essay.trial.spec),
        scenario: essay.trial.scenario,
        spec: essay.trial.spec,
        summary,
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &report)?;

    let within: Vec<String> = report
        .summary
        .within
        .iter()
        .map(|w| format!("{:.2}% within {}mm", w.percent, w.threshold_mm))
        .collect();
    println!(
        "{} {}: mean {:.2} mm, deviation {:.2} mm, {}, {} failures",
        report.method,
        report.scenario.label(),
        report.summary.mean_end_distance,
        report.summary.std_end_distance,
        within.join(", "),
        report.summary.failures
    );
    let mut inputs = vec![a.config.clone()];
    inputs.extend(essay.input_files());
    Ok(Run {
        config: serde_json::to_value(&essay)?,
        inputs,
        outputs: vec![
            a.out.clone(),
            summary_path,
            plot.clone(),
            gmi_core::montecarlo::summary_path(&plot),
        ],
    })
}

fn report_cmd(a: &ReportArgs) -> Result<Run> {
    for p in &a.inputs {
        if !p.is_file() {
            return Err(CliError::MissingInput(p.clone()).into());
        }
    }
    let tables = report::build(&a.inputs)?;
    create_parent(&a.out)?;
    fs::write(&a.out, &tables.markdown).with_context(|| format!("cannot write {}", a.out.display()))?;
    let mut outputs = vec![a.out.clone()];
    if let Some(csv) = &a.csv {
        create_parent(csv)?;
        fs::write(csv, &tables.csv).with_context(|| format!("cannot write {}", csv.display()))?;
        outputs.push(csv.clone());
    }
    print!("{}", tables.markdown);
    Ok(Run {
        config: json!({ "inputs": a.inputs, "out": a.out, "csv": a.csv }),
        inputs: a.inputs.clone(),
        outputs,
    })
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j as usize)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    let started_at = now();
    let (name, run) = match &cli.command {
        Command::Phantom(a) => ("phantom", phantom(a)?),
        Command::Landscape(a) => ("landscape", landscape(a)?),
        Command::Probe(a) => ("probe", probe(a)?),
        Command::Capture(a) => ("capture", capture(a)?),
        Command::Register(a) => ("register", register_cmd(a)?),
        Command::Montecarlo(a) => ("montecarlo", montecarlo(a)?),
        Command::Report(a) => ("report", report_cmd(a)?),
    };
    let manifest = RunManifest {
        command: name.into(),
        argv,
        config: run.config,
        inputs: run.inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
        outputs: run.outputs,
        version: env!("CARGO_PKG_VERSION").into(),
        jobs: rayon::current_num_threads(),
        started_at,
        finished_at: now(),
    };
    manifest.write()?;
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // First paragraph of clap's message, folded onto one line.
            let rendered = e.to_string();
            let first: Vec<&str> = rendered
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            let first = first.join(" ");
            let first = first.strip_prefix("error: ").unwrap_or(&first);
            let label = match e.kind() {
                clap::error::ErrorKind::ArgumentConflict => "conflicting options",
                _ => "usage error",
            };
            eprintln!("gmi-reg: {label}: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("gmi-reg: {e:#}");
            ExitCode::from(e.downcast_ref::<CliError>().map_or(1, CliError::exit_code))
        }
    }
}
