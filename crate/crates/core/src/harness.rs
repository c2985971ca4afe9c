//! Benchmark runs on the ten-story shear building: calibration tables over modes,
//! segments, sensor layouts and initial values, and calibrate-then-monitor damage cases.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmConfig, FixedHypers};
use crate::damage::{build_report, DamageReport, VariancePairing};
use crate::error::{Error, Result};
use crate::inference::{run_calibration, run_monitoring, InferenceResult};
use crate::model::{StiffnessParams, StructuralModel};
use crate::synthetic::{
    apply_damage, shear_building_model, simulate_modal_data, NoiseSpec, ShearBuildingSpec,
    PARTIAL_SENSORS_10,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sensors {
    Named(SensorLayout),
    Dofs(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorLayout {
    Full,
    /// Floors 1, 4, 5, 7 and 10; needs at least ten DOFs.
    Partial,
}

impl Sensors {
    pub fn dofs(&self, d: usize) -> Result<Vec<usize>> {
        match self {
            Sensors::Named(SensorLayout::Full) => Ok((0..d).collect()),
            Sensors::Named(SensorLayout::Partial) if d >= 10 => Ok(PARTIAL_SENSORS_10.to_vec()),
            Sensors::Named(SensorLayout::Partial) => Err(Error::Config(format!(
                "the partial layout needs ten DOFs, model has {d}"
            ))),
            Sensors::Dofs(v) => Ok(v.clone()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Sensors::Named(SensorLayout::Full) => "full".into(),
            Sensors::Named(SensorLayout::Partial) => "partial".into(),
            Sensors::Dofs(v) => v
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

/// Multipliers applied one hyper-parameter at a time to its default initial value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSweeps {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Default for InitSweeps {
    fn default() -> Self {
        let f = vec![0.1, 1.0, 10.0, 100.0];
        Self {
            beta: f.clone(),
            eta: f.clone(),
            rho: f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub building: ShearBuildingSpec,
    pub modes: Vec<usize>,
    pub segments: Vec<usize>,
    pub sensors: Vec<Sensors>,
    pub noise: NoiseSpec,
    /// Initial-value sweeps run only at the first entry of `segments`.
    pub sweeps: InitSweeps,
    /// Bounds of the uniform draw for the initial `θ`.
    pub theta_init_range: (f64, f64),
    pub algorithm: AlgorithmConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            building: ShearBuildingSpec::ten_story(),
            modes: vec![3, 4, 5],
            segments: vec![3, 5, 10, 50, 100],
            sensors: vec![
                Sensors::Named(SensorLayout::Full),
                Sensors::Named(SensorLayout::Partial),
            ],
            noise: NoiseSpec::default(),
            sweeps: InitSweeps::default(),
            theta_init_range: (2.0, 3.0),
            algorithm: AlgorithmConfig::calibration(),
        }
    }
}

/// Initial `θ` drawn uniformly from `range` with a generator separate from the noise.
pub fn random_theta_init(n: usize, range: (f64, f64), seed: u64) -> Result<StiffnessParams> {
    if !(range.0 > 0.0 && range.1 > range.0) {
        return Err(Error::Config(format!(
            "theta init range {range:?} must be positive and increasing"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    StiffnessParams::new(DVector::from_fn(n, |_, _| {
        rng.random_range(range.0..range.1)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub sensors: String,
    pub m: usize,
    pub q: usize,
    /// `none` for the default start, otherwise the swept hyper-parameter.
    pub swept: String,
    pub factor: f64,
    pub iterations: usize,
    pub converged: bool,
    pub theta: Vec<f64>,
    pub cov_theta: Vec<f64>,
    pub beta: f64,
    pub cov_beta: f64,
    pub eta: f64,
    pub cov_eta: f64,
    /// `ρi Σr ω̂⁴ri / q`.
    pub phi: Vec<f64>,
    pub cov_phi: Vec<f64>,
    pub theta_trace: Vec<Vec<f64>>,
}

struct Job {
    sensors: Sensors,
    m: usize,
    q: usize,
    swept: &'static str,
    factor: f64,
}

/// Every calibration run of the harness, in a fixed order regardless of threading.
pub fn example1_harness(cfg: &HarnessConfig) -> Result<Vec<CalibrationRow>> {
    let model = shear_building_model(&cfg.building)?;
    let n = model.substructures();
    let truth = StiffnessParams::uniform(n, 1.0);
    let init = random_theta_init(n, cfg.theta_init_range, cfg.noise.seed)?;
    let first_q = *cfg
        .segments
        .first()
        .ok_or_else(|| Error::Config("no segment counts given".into()))?;

    let mut jobs = Vec::new();
    for sensors in &cfg.sensors {
        for &m in &cfg.modes {
            for &q in &cfg.segments {
                jobs.push(Job {
                    sensors: sensors.clone(),
                    m,
                    q,
                    swept: "none",
                    factor: 1.0,
                });
                if q != first_q {
                    continue;
                }
                for (name, factors, fixed) in [
                    (
                        "beta",
                        &cfg.sweeps.beta,
                        cfg.algorithm.fix_hypers.beta.is_some(),
                    ),
                    (
                        "eta",
                        &cfg.sweeps.eta,
                        cfg.algorithm.fix_hypers.eta.is_some(),
                    ),
                    ("rho", &cfg.sweeps.rho, cfg.algorithm.fix_hypers.rho_fixed()),
                ] {
                    if fixed {
                        continue;
                    }
                    for &factor in factors.iter() {
                        jobs.push(Job {
                            sensors: sensors.clone(),
                            m,
                            q,
                            swept: name,
                            factor,
                        });
                    }
                }
            }
        }
    }

    jobs.par_iter()
        .map(|job| run_job(&model, &truth, &init, cfg, job))
        .collect()
}

fn run_job(
    model: &StructuralModel,
    truth: &StiffnessParams,
    init: &StiffnessParams,
    cfg: &HarnessConfig,
    job: &Job,
) -> Result<CalibrationRow> {
    let dofs = job.sensors.dofs(model.dofs())?;
    let mut alg = cfg.algorithm.clone();
    let ds = simulate_modal_data(
        model,
        truth,
        job.m,
        job.q,
        &dofs,
        &cfg.noise,
        alg.normalization,
    )?;
    match job.swept {
        "beta" => alg.init_scale.beta = job.factor,
        "eta" => alg.init_scale.eta = job.factor,
        "rho" => alg.init_scale.rho = job.factor,
        _ => {}
    }
    let res = run_calibration(&ds, model, init, &alg)?;
    let st = &res.state_map;
    let q = job.q as f64;
    let phi = st
        .rho
        .iter()
        .zip(ds.sum_omega4().iter())
        .map(|(r, w4)| r * w4 / q)
        .collect();
    Ok(CalibrationRow {
        sensors: job.sensors.label(),
        m: job.m,
        q: job.q,
        swept: job.swept.to_string(),
        factor: job.factor,
        iterations: res.iterations,
        converged: res.converged,
        theta: res.theta().iter().copied().collect(),
        cov_theta: res.cov_theta.iter().copied().collect(),
        beta: st.beta,
        cov_beta: res.precision_cov.beta,
        eta: st.eta,
        cov_eta: res.precision_cov.eta,
        phi,
        cov_phi: res.precision_cov.rho.clone(),
        theta_trace: res
            .theta_trace
            .iter()
            .map(|t| t.iter().copied().collect())
            .collect(),
    })
}

/// Table CSV: one row per run, `θ` and its c.o.v. in percent, precisions and theirs.
pub fn write_calibration_table<W: std::io::Write>(rows: &[CalibrationRow], w: W) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.theta.len());
    let m_max = rows.iter().map(|r| r.m).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "sensors",
        "m",
        "q",
        "swept",
        "factor",
        "iterations",
        "converged",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=n).map(|j| format!("theta_{j}")));
    header.extend((1..=n).map(|j| format!("cov_theta_{j}_pct")));
    header.extend(["beta", "cov_beta_pct", "eta", "cov_eta_pct"].map(String::from));
    header.extend((1..=m_max).map(|i| format!("phi_{i}")));
    header.extend((1..=m_max).map(|i| format!("cov_phi_{i}_pct")));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.sensors.clone(),
            r.m.to_string(),
            r.q.to_string(),
            r.swept.clone(),
            r.factor.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
        ];
        rec.extend(r.theta.iter().map(|v| v.to_string()));
        rec.extend(r.cov_theta.iter().map(|v| (100.0 * v).to_string()));
        rec.extend([r.beta, 100.0 * r.cov_beta, r.eta, 100.0 * r.cov_eta].map(|v| v.to_string()));
        let pad = |v: &[f64], scale: f64| {
            (0..m_max)
                .map(|i| v.get(i).map_or(String::new(), |x| (scale * x).to_string()))
                .collect::<Vec<_>>()
        };
        rec.extend(pad(&r.phi, 1.0));
        rec.extend(pad(&r.cov_phi, 100.0));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Iteration histories of `θ`: `sensors,m,q,swept,factor,sweep,theta_1..`.
pub fn write_trace_table<W: std::io::Write>(rows: &[CalibrationRow], w: W) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.theta.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["sensors", "m", "q", "swept", "factor", "sweep"]
        .map(String::from)
        .to_vec();
    header.extend((1..=n).map(|j| format!("theta_{j}")));
    out.write_record(&header)?;
    for r in rows {
        for (k, t) in r.theta_trace.iter().enumerate() {
            let mut rec = vec![
                r.sensors.clone(),
                r.m.to_string(),
                r.q.to_string(),
                r.swept.clone(),
                r.factor.to_string(),
            ];
            rec.push((k + 1).to_string());
            rec.extend(t.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One calibrate-then-monitor experiment on synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DamageCase {
    pub building: ShearBuildingSpec,
    /// 0-based substructure → fractional stiffness loss.
    pub damage: BTreeMap<usize, f64>,
    pub modes: usize,
    pub calibration_segments: usize,
    pub monitoring_segments: usize,
    pub sensors: Sensors,
    /// The monitoring data use `seed + 1`, the calibration data `seed`.
    pub noise: NoiseSpec,
    pub calibration: AlgorithmConfig,
    pub monitoring: AlgorithmConfig,
    pub variance_pairing: VariancePairing,
    pub f_grid: Vec<f64>,
}

impl Default for DamageCase {
    fn default() -> Self {
        Self {
            building: ShearBuildingSpec::ten_story(),
            damage: BTreeMap::new(),
            modes: 4,
            calibration_segments: 10,
            monitoring_segments: 10,
            sensors: Sensors::Named(SensorLayout::Full),
            noise: NoiseSpec::default(),
            calibration: AlgorithmConfig::calibration(),
            monitoring: AlgorithmConfig::monitoring(),
            variance_pairing: VariancePairing::AsPrinted,
            f_grid: crate::damage::default_f_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageOutcome {
    pub calibration: InferenceResult,
    pub monitoring: InferenceResult,
    pub report: DamageReport,
}

/// Calibration starts at the true `θ`; monitoring is anchored at the calibrated MAP.
pub fn run_damage_case(case: &DamageCase) -> Result<DamageOutcome> {
    let model = shear_building_model(&case.building)?;
    let truth = StiffnessParams::uniform(model.substructures(), 1.0);
    let damaged = apply_damage(&truth, &case.damage)?;
    let dofs = case.sensors.dofs(model.dofs())?;
    let ds_u = simulate_modal_data(
        &model,
        &truth,
        case.modes,
        case.calibration_segments,
        &dofs,
        &case.noise,
        case.calibration.normalization,
    )?;
    let ds_d = simulate_modal_data(
        &model,
        &damaged,
        case.modes,
        case.monitoring_segments,
        &dofs,
        &case.noise.with_seed(case.noise.seed.wrapping_add(1)),
        case.monitoring.normalization,
    )?;
    let calibration = run_calibration(&ds_u, &model, &truth, &case.calibration)?;
    let anchor = StiffnessParams::new(calibration.theta().clone())?;
    let monitoring = run_monitoring(&ds_d, &model, &anchor, &case.monitoring)?;
    let report = build_report(
        &calibration,
        &monitoring,
        &case.f_grid,
        case.variance_pairing,
    )?;
    Ok(DamageOutcome {
        calibration,
        monitoring,
        report,
    })
}

/// Fixed `η = 1e5` and `φ = 1e4` with only `β` learned.
pub fn fixed_precisions() -> FixedHypers {
    FixedHypers {
        eta: Some(1e5),
        phi: Some(1e4),
        ..FixedHypers::default()
    }
}
