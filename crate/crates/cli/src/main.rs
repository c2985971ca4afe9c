use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use modal_sbl::damage::{build_report, f_grid, VariancePairing};
use modal_sbl::harness::{
    example1_harness, write_calibration_table, write_trace_table, HarnessConfig, SensorLayout,
    Sensors,
};
use modal_sbl::io::{self, ModelFile};
use modal_sbl::synthetic::{
    apply_damage, shear_building_model, simulate_modal_data, NoiseSpec, ShearBuildingSpec,
};
use modal_sbl::{
    run_calibration, run_monitoring, AlgorithmConfig, HyperVariant, InferenceResult, Mode,
    ShapeNormalization, StiffnessParams,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "modal-sbl",
    version,
    about = "Stiffness calibration and damage detection from modal data"
)]
struct Cli {
    /// JSON file with optional `simulate`, `calibration`, `monitoring`, `report` and `harness` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a noisy multi-segment modal dataset.
    Simulate(SimulateArgs),
    /// Calibrate stiffness parameters on undamaged data.
    Calibrate(CalibrateArgs),
    /// Sparse stiffness-change inference anchored at a calibration.
    Monitor(MonitorArgs),
    /// Stiffness ratios, damage probabilities and alarms.
    Report(ReportArgs),
    /// Calibration tables over modes, segments, sensors and initial values.
    Harness,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Built-in building (`shear10`).
    #[arg(long, conflicts_with = "model")]
    building: Option<String>,
    /// Model JSON instead of a built-in building.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    segments: Option<usize>,
    /// c.o.v. applied to both frequencies and mode shapes.
    #[arg(long)]
    noise: Option<f64>,
    /// `full`, `partial` or comma-separated 0-based DOFs.
    #[arg(long)]
    sensors: Option<String>,
    /// Comma-separated `story:loss` pairs, 1-based stories.
    #[arg(long)]
    damage: Option<String>,
}

#[derive(Args, Debug)]
struct InferenceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated `name=value`; names beta, eta, rho, phi, lambda.
    #[arg(long)]
    fix_hypers: Option<String>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    common: InferenceArgs,
    /// Initial θ: comma-separated values, a single value for all, or `random` (U[2,3] from the seed).
    #[arg(long, default_value = "1")]
    theta_init: String,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum VariantArg {
    Variance,
    Precision,
}

#[derive(Args, Debug)]
struct MonitorArgs {
    #[command(flatten)]
    common: InferenceArgs,
    /// `calibration.json` from a previous `calibrate`.
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long, value_enum)]
    hyper_variant: Option<VariantArg>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Hold λ at this value instead of learning it.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PairingArg {
    AsPrinted,
    Conventional,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    monitoring: PathBuf,
    #[arg(long)]
    fmax: Option<f64>,
    #[arg(long)]
    fstep: Option<f64>,
    #[arg(long, value_enum)]
    variance_pairing: Option<PairingArg>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    simulate: SimulateSection,
    calibration: Option<AlgorithmConfig>,
    monitoring: Option<AlgorithmConfig>,
    report: ReportSection,
    harness: Option<HarnessConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateSection {
    building: ShearBuildingSpec,
    modes: usize,
    segments: usize,
    sensors: Sensors,
    noise: NoiseSpec,
    /// 1-based story → loss.
    damage: BTreeMap<usize, f64>,
    normalization: ShapeNormalization,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            building: ShearBuildingSpec::ten_story(),
            modes: 4,
            segments: 3,
            sensors: Sensors::Named(SensorLayout::Full),
            noise: NoiseSpec::default(),
            damage: BTreeMap::new(),
            normalization: ShapeNormalization::PerMode,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct ReportSection {
    fmax: f64,
    fstep: f64,
    variance_pairing: VariancePairing,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            fmax: 0.25,
            fstep: 0.0025,
            variance_pairing: VariancePairing::AsPrinted,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    tool_version: String,
    config_sha256: String,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started_at: String,
    finished_at: String,
    convergence: Option<ConvergenceSummary>,
}

#[derive(Debug, Serialize)]
struct ConvergenceSummary {
    converged: bool,
    iterations: usize,
    pruned: Vec<usize>,
    hessian_condition: Option<f64>,
    covariance_error: Option<String>,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error: anyhow::Error = e.into();
        let code = match error.downcast_ref::<modal_sbl::Error>() {
            Some(modal_sbl::Error::Numerical(_)) | Some(modal_sbl::Error::Domain(_)) => {
                EXIT_NUMERICAL
            }
            _ => EXIT_INPUT,
        };
        Failure { code, error }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `SOURCE_DATE_EPOCH` pins the timestamps for reproducible manifests.
fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok());
    let t = match fixed.and_then(|secs| chrono::DateTime::from_timestamp(secs, 0)) {
        Some(t) => t,
        None => chrono::Utc::now(),
    };
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

struct Run {
    command: &'static str,
    out_dir: PathBuf,
    seed: Option<u64>,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started_at: String,
}

impl Run {
    fn new(command: &'static str, cli: &Cli, config_sha256: String) -> anyhow::Result<Self> {
        fs::create_dir_all(&cli.out_dir)
            .with_context(|| format!("creating {}", cli.out_dir.display()))?;
        Ok(Self {
            command,
            out_dir: cli.out_dir.clone(),
            seed: cli.seed,
            config_sha256,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_at: timestamp(),
        })
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        tracing::info!(file = %path.display(), "wrote");
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> modal_sbl::Result<()>,
    ) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn finish(self, convergence: Option<ConvergenceSummary>) -> anyhow::Result<()> {
        let manifest = Manifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.config_sha256,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: timestamp(),
            convergence,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.out_dir.join(format!("manifest-{}.json", self.command));
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<(FileConfig, String)> {
    match &cli.config {
        None => Ok((FileConfig::default(), sha256_hex(b"{}"))),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let cfg: FileConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            Ok((cfg, sha256_hex(text.as_bytes())))
        }
    }
}

fn parse_list(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("not a number: {v:?}"))
        })
        .collect()
}

fn parse_sensors(text: &str) -> anyhow::Result<Sensors> {
    Ok(match text {
        "full" => Sensors::Named(SensorLayout::Full),
        "partial" => Sensors::Named(SensorLayout::Partial),
        ids => Sensors::Dofs(
            ids.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .with_context(|| format!("not a DOF index: {v:?}"))
                })
                .collect::<anyhow::Result<_>>()?,
        ),
    })
}

fn parse_damage(text: &str) -> anyhow::Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for pair in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (story, loss) = pair
            .split_once(':')
            .ok_or_else(|| anyhow!("damage entries are story:loss, got {pair:?}"))?;
        out.insert(story.trim().parse()?, loss.trim().parse()?);
    }
    Ok(out)
}

fn apply_fix_hypers(cfg: &mut AlgorithmConfig, text: &str) -> anyhow::Result<()> {
    for pair in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("fixed hyper-parameters are name=value, got {pair:?}"))?;
        let v: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("not a number: {value:?}"))?;
        let f = &mut cfg.fix_hypers;
        match name.trim() {
            "beta" => f.beta = Some(v),
            "eta" => f.eta = Some(v),
            "rho" => f.rho = Some(v),
            "phi" => f.phi = Some(v),
            "lambda" => f.lambda = Some(v),
            other => bail!("unknown hyper-parameter {other:?}"),
        }
    }
    Ok(())
}

fn convergence(result: &InferenceResult) -> ConvergenceSummary {
    ConvergenceSummary {
        converged: result.converged,
        iterations: result.iterations,
        pruned: result
            .pruning_log
            .iter()
            .map(|p| p.substructure + 1)
            .collect(),
        hessian_condition: result.diagnostics.hessian_condition,
        covariance_error: result.diagnostics.covariance_error.clone(),
    }
}

fn write_result(run: &mut Run, stem: &str, result: &InferenceResult) -> anyhow::Result<()> {
    run.write_json(&format!("{stem}.json"), result)?;
    run.write_with("theta.csv", |w| io::write_theta_csv(result, w))?;
    run.write_with("theta_cov.csv", |w| {
        io::write_theta_covariance_csv(result, w)
    })?;
    run.write_with("precisions.csv", |w| io::write_precisions_csv(result, w))?;
    run.write_with("modal.csv", |w| io::write_modal_csv(result, w))?;
    run.write_with("trace.csv", |w| io::write_trace_csv(result, w))?;
    if let Some(jc) = &result.full_cov {
        run.write_with("joint_cov.csv", |w| {
            io::write_matrix_csv(&jc.layout.names(), &jc.covariance, w)
        })?;
    }
    if result.mode == Mode::Monitoring {
        run.write_with("pruning.csv", |w| io::write_pruning_csv(result, w))?;
    }
    Ok(())
}

fn cmd_simulate(
    cli: &Cli,
    args: &SimulateArgs,
    file: &FileConfig,
    hash: String,
) -> Result<u8, Failure> {
    let mut run = Run::new("simulate", cli, hash)?;
    let mut sec = file.simulate.clone();
    if let Some(m) = args.modes {
        sec.modes = m;
    }
    if let Some(q) = args.segments {
        sec.segments = q;
    }
    if let Some(c) = args.noise {
        sec.noise.freq_cov = c;
        sec.noise.shape_cov = c;
    }
    if let Some(seed) = cli.seed {
        sec.noise.seed = seed;
    }
    if let Some(s) = &args.sensors {
        sec.sensors = parse_sensors(s)?;
    }
    if let Some(d) = &args.damage {
        sec.damage = parse_damage(d)?;
    }
    if sec.segments < 3 {
        return Err(anyhow!(
            "--segments {}: at least three data segments are required (q ≥ 3)",
            sec.segments
        )
        .into());
    }
    let model = match (&args.model, args.building.as_deref()) {
        (Some(path), _) => {
            run.input(path)?;
            io::load_model(path)?
        }
        (None, None | Some("shear10")) => shear_building_model(&sec.building)?,
        (None, Some(other)) => {
            return Err(anyhow!("unknown building {other:?}; use shear10 or --model").into())
        }
    };
    let n = model.substructures();
    let mut damage = BTreeMap::new();
    for (&story, &loss) in &sec.damage {
        if story == 0 || story > n {
            return Err(anyhow!("damaged story {story} outside 1..={n}").into());
        }
        damage.insert(story - 1, loss);
    }
    let theta = apply_damage(&StiffnessParams::uniform(n, 1.0), &damage)?;
    let dofs = sec.sensors.dofs(model.dofs())?;
    let ds = simulate_modal_data(
        &model,
        &theta,
        sec.modes,
        sec.segments,
        &dofs,
        &sec.noise,
        sec.normalization,
    )?;
    run.write_json("dataset.json", &ds.to_file())?;
    run.write_json("model.json", &ModelFile::from_model(&model))?;
    run.write_json("theta_true.json", &theta)?;
    run.finish(None)?;
    Ok(0)
}

fn inference_config(
    base: Option<&AlgorithmConfig>,
    mode: Mode,
    common: &InferenceArgs,
) -> anyhow::Result<AlgorithmConfig> {
    let mut cfg = base.cloned().unwrap_or_else(|| match mode {
        Mode::Calibration => AlgorithmConfig::calibration(),
        Mode::Monitoring => AlgorithmConfig::monitoring(),
    });
    if cfg.mode != mode {
        bail!("config section for {mode:?} declares mode {:?}", cfg.mode);
    }
    if let Some(text) = &common.fix_hypers {
        apply_fix_hypers(&mut cfg, text)?;
    }
    if let Some(k) = common.max_iterations {
        cfg.max_iterations = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn theta_init(text: &str, n: usize, seed: u64) -> anyhow::Result<StiffnessParams> {
    if text == "random" {
        return Ok(modal_sbl::harness::random_theta_init(n, (2.0, 3.0), seed)?);
    }
    let v = parse_list(text)?;
    Ok(match v.len() {
        1 => StiffnessParams::uniform(n, v[0]),
        k if k == n => StiffnessParams::from_slice(&v)?,
        k => bail!("--theta-init has {k} values, model has {n} substructures"),
    })
}

fn exit_for(result: &InferenceResult) -> u8 {
    if result.converged {
        0
    } else {
        tracing::warn!(
            iterations = result.iterations,
            "maximum iterations reached without convergence"
        );
        EXIT_NOT_CONVERGED
    }
}

fn cmd_calibrate(
    cli: &Cli,
    args: &CalibrateArgs,
    file: &FileConfig,
    hash: String,
) -> Result<u8, Failure> {
    let mut run = Run::new("calibrate", cli, hash)?;
    let cfg = inference_config(file.calibration.as_ref(), Mode::Calibration, &args.common)?;
    run.input(&args.common.model)?;
    run.input(&args.common.dataset)?;
    let model = io::load_model(&args.common.model)?;
    let ds = io::load_dataset(&args.common.dataset, cfg.normalization)?;
    let init = theta_init(
        &args.theta_init,
        model.substructures(),
        cli.seed.unwrap_or(0),
    )?;
    let result = run_calibration(&ds, &model, &init, &cfg)?;
    write_result(&mut run, "calibration", &result)?;
    run.finish(Some(convergence(&result)))?;
    Ok(exit_for(&result))
}

fn cmd_monitor(
    cli: &Cli,
    args: &MonitorArgs,
    file: &FileConfig,
    hash: String,
) -> Result<u8, Failure> {
    let mut run = Run::new("monitor", cli, hash)?;
    let mut cfg = inference_config(file.monitoring.as_ref(), Mode::Monitoring, &args.common)?;
    match (args.hyper_variant, args.kappa) {
        (Some(VariantArg::Precision), k) => {
            cfg.hyper_variant = HyperVariant::PrecisionExponential {
                kappa: k.unwrap_or(0.0),
            }
        }
        (Some(VariantArg::Variance), None) => cfg.hyper_variant = HyperVariant::VarianceExponential,
        (Some(VariantArg::Variance), Some(_)) => {
            return Err(anyhow!("--kappa applies to --hyper-variant precision").into())
        }
        (None, Some(k)) => cfg.hyper_variant = HyperVariant::PrecisionExponential { kappa: k },
        (None, None) => {}
    }
    if let Some(l) = args.lambda {
        cfg.fix_hypers.lambda = Some(l);
    }
    cfg.validate()?;
    run.input(&args.common.model)?;
    run.input(&args.common.dataset)?;
    run.input(&args.calibration)?;
    let model = io::load_model(&args.common.model)?;
    let ds = io::load_dataset(&args.common.dataset, cfg.normalization)?;
    let calib: InferenceResult = io::read_json(&args.calibration)?;
    if calib.theta().len() != model.substructures() {
        return Err(anyhow!(
            "calibration has {} substructures, model has {}",
            calib.theta().len(),
            model.substructures()
        )
        .into());
    }
    let anchor = StiffnessParams::new(calib.theta().clone())?;
    let result = run_monitoring(&ds, &model, &anchor, &cfg)?;
    write_result(&mut run, "monitoring", &result)?;
    run.finish(Some(convergence(&result)))?;
    Ok(exit_for(&result))
}

fn cmd_report(
    cli: &Cli,
    args: &ReportArgs,
    file: &FileConfig,
    hash: String,
) -> Result<u8, Failure> {
    let mut run = Run::new("report", cli, hash)?;
    let mut sec = file.report.clone();
    if let Some(v) = args.fmax {
        sec.fmax = v;
    }
    if let Some(v) = args.fstep {
        sec.fstep = v;
    }
    if let Some(p) = args.variance_pairing {
        sec.variance_pairing = match p {
            PairingArg::AsPrinted => VariancePairing::AsPrinted,
            PairingArg::Conventional => VariancePairing::Conventional,
        };
    }
    run.input(&args.calibration)?;
    run.input(&args.monitoring)?;
    let calib: InferenceResult = io::read_json(&args.calibration)?;
    let monitor: InferenceResult = io::read_json(&args.monitoring)?;
    if calib.mode != Mode::Calibration || monitor.mode != Mode::Monitoring {
        return Err(anyhow!("report needs a calibration result and a monitoring result").into());
    }
    let grid = f_grid(sec.fmax, sec.fstep)?;
    let report = build_report(&calib, &monitor, &grid, sec.variance_pairing)?;
    run.write_with("ratios.csv", |w| report.write_ratios_csv(w))?;
    run.write_with("damage_probability.csv", |w| report.write_curves_csv(w))?;
    run.write_json("alarms.json", &report.summary())?;
    run.write_json("report.json", &report)?;
    run.finish(None)?;
    Ok(0)
}

fn cmd_harness(cli: &Cli, file: &FileConfig, hash: String) -> Result<u8, Failure> {
    let mut run = Run::new("harness", cli, hash)?;
    let mut cfg = file.harness.clone().unwrap_or_default();
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    let rows = example1_harness(&cfg)?;
    run.write_with("calibration_table.csv", |w| {
        write_calibration_table(&rows, w)
    })?;
    run.write_with("theta_traces.csv", |w| write_trace_table(&rows, w))?;
    run.finish(None)?;
    Ok(if rows.iter().all(|r| r.converged) {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    let (file, hash) = load_config(cli)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a, &file, hash),
        Command::Calibrate(a) => cmd_calibrate(cli, a, &file, hash),
        Command::Monitor(a) => cmd_monitor(cli, a, &file, hash),
        Command::Report(a) => cmd_report(cli, a, &file, hash),
        Command::Harness => cmd_harness(cli, &file, hash),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
