//! Calibration and monitoring drivers: coordinate descent to the MAP point followed by
//! the Laplace covariances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmConfig, HyperVariant, Mode};
use crate::dataset::ModalDataset;
use crate::error::{Error, Result};
use crate::model::{StiffnessParams, StructuralModel};
use crate::objective::objective;
use crate::state::{initialize, InferenceState};
use crate::uncertainty::{
    conditional_cov, joint_covariance, theta_cov, theta_covariance, JointCovariance, PrecisionCov,
};
use crate::updates::{sweep, update_alpha, update_alpha_precision_variant, update_lambda_zeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub substructure: usize,
    pub sweep: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `η` reached `eta_max`: the data fit the mode shapes exactly.
    pub noise_free_shapes: bool,
    /// Some `ρi` reached `rho_max`.
    pub noise_free_frequencies: bool,
    /// Every component was pruned before the ARD variances settled.
    pub all_pruned: bool,
    pub hessian_condition: Option<f64>,
    pub hessian_min_eigenvalue: Option<f64>,
    pub covariance_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub mode: Mode,
    pub state_map: InferenceState,
    /// The `θ̂u` the run was anchored to.
    pub anchor: DVector<f64>,
    pub theta_cov: DMatrix<f64>,
    /// c.o.v. of each `θj`; exactly 0 for pruned components.
    pub cov_theta: DVector<f64>,
    pub precision_cov: PrecisionCov,
    pub full_cov: Option<JointCovariance>,
    pub objective_trace: Vec<f64>,
    pub theta_trace: Vec<DVector<f64>>,
    pub beta_trace: Vec<f64>,
    pub alpha_trace: Vec<DVector<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub pruning_log: Vec<PruneEvent>,
    pub diagnostics: Diagnostics,
    /// Force unit the model was rescaled by; `β` is in its inverse square.
    pub force_unit: f64,
}

/// Algorithm 1: ARD variances pinned large, anchored at `theta_init`.
pub fn run_calibration(
    dataset: &ModalDataset,
    model: &StructuralModel,
    theta_init: &StiffnessParams,
    config: &AlgorithmConfig,
) -> Result<InferenceResult> {
    if config.mode != Mode::Calibration {
        return Err(Error::Config(
            "run_calibration needs mode = calibration".into(),
        ));
    }
    run(dataset, model, theta_init, config)
}

/// Algorithm 2: sparse ARD updates anchored at the calibrated `θ̂u`.
pub fn run_monitoring(
    dataset: &ModalDataset,
    model: &StructuralModel,
    theta_u_hat: &StiffnessParams,
    config: &AlgorithmConfig,
) -> Result<InferenceResult> {
    if config.mode != Mode::Monitoring {
        return Err(Error::Config(
            "run_monitoring needs mode = monitoring".into(),
        ));
    }
    run(dataset, model, theta_u_hat, config)
}

fn run(
    dataset: &ModalDataset,
    model_si: &StructuralModel,
    theta0: &StiffnessParams,
    config: &AlgorithmConfig,
) -> Result<InferenceResult> {
    let model = model_si.rescaled(config.force_unit);
    let model = &model;
    let mut state = initialize(dataset, model, theta0, config)?;
    let anchor = theta0.as_vector().clone();
    let monitoring = config.mode == Mode::Monitoring;
    let n = state.substructures();

    let mut diagnostics = Diagnostics::default();
    let mut objective_trace = Vec::new();
    let mut theta_trace = Vec::new();
    let mut beta_trace = Vec::new();
    let mut alpha_trace = Vec::new();
    let mut pruning_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let theta_prev = state.theta.clone();
        let alpha_prev = state.alpha.clone();
        let precisions_prev = log_precisions(&state);
        let (eta_c, rho_c) = sweep(&mut state, dataset, model, &anchor, config)?;
        diagnostics.noise_free_shapes |= eta_c;
        diagnostics.noise_free_frequencies |= rho_c;

        if monitoring {
            let sigma = theta_covariance(&state, model)?;
            let sdiag = sigma.diagonal();
            state.alpha = match config.hyper_variant {
                HyperVariant::VarianceExponential => update_alpha(&state, &anchor, &sdiag),
                HyperVariant::PrecisionExponential { kappa } => {
                    update_alpha_precision_variant(&state, &anchor, &sdiag, kappa)
                }
            };
            if config.fix_hypers.lambda.is_none() {
                let (lambda, zeta) = update_lambda_zeta(&state);
                state.lambda = lambda;
                state.zeta = zeta;
            }
            if iterations >= config.min_sweeps_before_pruning {
                for j in 0..n {
                    if !state.fixed_set.contains(&j) && state.alpha[j] < config.alpha_min {
                        pruning_log.push(PruneEvent {
                            substructure: j,
                            sweep: iterations,
                            alpha: state.alpha[j],
                        });
                        state.fixed_set.insert(j);
                        state.alpha[j] = 0.0;
                        state.theta[j] = anchor[j];
                    }
                }
            }
        }

        objective_trace.push(objective(&state, dataset, model, &anchor)?);
        theta_trace.push(state.theta.clone());
        beta_trace.push(state.beta);
        alpha_trace.push(state.alpha.clone());

        let settled = (&log_precisions(&state) - &precisions_prev).amax() < config.tol_theta
            && (&state.theta - &theta_prev).amax() < config.tol_theta;
        let done = settled
            && if monitoring {
                let free = state.free_indices();
                if free.is_empty() {
                    diagnostics.all_pruned = true;
                    true
                } else {
                    iterations >= config.min_sweeps_before_pruning
                        && free.iter().all(|&j| {
                            alpha_prev[j] > 0.0
                                && (state.alpha[j].ln() - alpha_prev[j].ln()).abs()
                                    < config.tol_log_alpha
                        })
                }
            } else {
                true
            };
        if done {
            converged = true;
            break;
        }
    }

    let theta_cov_m = theta_covariance(&state, model)?;
    let cov_theta = theta_cov(&state.theta, &theta_cov_m);
    let full_cov = if config.full_covariance {
        match joint_covariance(&state, dataset, model, &anchor) {
            Ok(jc) => {
                diagnostics.hessian_condition = Some(jc.condition);
                diagnostics.hessian_min_eigenvalue = Some(jc.min_eigenvalue);
                Some(jc)
            }
            Err(e) => {
                diagnostics.covariance_error = Some(e.to_string());
                None
            }
        }
    } else {
        None
    };
    let precision_cov = conditional_cov(&state, dataset, model);

    Ok(InferenceResult {
        mode: config.mode,
        state_map: state,
        anchor,
        theta_cov: theta_cov_m,
        cov_theta,
        precision_cov,
        full_cov,
        objective_trace,
        theta_trace,
        beta_trace,
        alpha_trace,
        iterations,
        converged,
        pruning_log,
        diagnostics,
        force_unit: config.force_unit,
    })
}

/// `ln β`, `ln η` and `ln ρi`, used to detect that the precisions have settled.
fn log_precisions(state: &InferenceState) -> DVector<f64> {
    let mut v = DVector::zeros(2 + state.rho.len());
    v[0] = state.beta.ln();
    v[1] = state.eta.ln();
    for (i, r) in state.rho.iter().enumerate() {
        v[2 + i] = r.ln();
    }
    v
}

impl InferenceResult {
    pub fn theta(&self) -> &DVector<f64> {
        &self.state_map.theta
    }

    /// Marginal standard deviations `√(Σθ)jj`.
    pub fn theta_std(&self) -> DVector<f64> {
        self.theta_cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}
