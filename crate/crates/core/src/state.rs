use std::collections::BTreeSet;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmConfig, InitStrategy, Mode};
use crate::dataset::ModalDataset;
use crate::error::{Error, Result};
use crate::model::{StiffnessParams, StructuralModel, SystemModalState};

/// Every uncertain quantity of one inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceState {
    pub theta: DVector<f64>,
    pub omega2: DVector<f64>,
    pub phi: DVector<f64>,
    pub beta: f64,
    pub eta: f64,
    pub nu: f64,
    pub rho: DVector<f64>,
    pub tau: DVector<f64>,
    pub alpha: DVector<f64>,
    pub lambda: f64,
    pub zeta: f64,
    pub a0: f64,
    pub b0: f64,
    /// Substructures pinned to their anchor value.
    pub fixed_set: BTreeSet<usize>,
}

impl InferenceState {
    pub fn dofs(&self) -> usize {
        self.phi.len() / self.omega2.len()
    }

    pub fn modes(&self) -> usize {
        self.omega2.len()
    }

    pub fn substructures(&self) -> usize {
        self.theta.len()
    }

    /// Indices of components that are still estimated: not pruned and with `α > 0`.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.theta.len())
            .filter(|j| !self.fixed_set.contains(j) && self.alpha[*j] > 0.0)
            .collect()
    }

    pub fn modal_state(&self) -> SystemModalState {
        SystemModalState {
            omega2: self.omega2.clone(),
            phi: self.phi.clone(),
        }
    }

    /// Domain check shared by the objective and the Hessian.
    pub fn check_precisions(&self) -> Result<()> {
        let bad =
            |name: &str, v: f64| Err(Error::Domain(format!("{name} must be positive, got {v}")));
        for (name, v) in [("beta", self.beta), ("eta", self.eta), ("nu", self.nu)] {
            if !(v > 0.0) {
                return bad(name, v);
            }
        }
        for (i, (&r, &t)) in self.rho.iter().zip(self.tau.iter()).enumerate() {
            if !(r > 0.0) {
                return bad(&format!("rho_{}", i + 1), r);
            }
            if !(t > 0.0) {
                return bad(&format!("tau_{}", i + 1), t);
            }
        }
        Ok(())
    }
}

/// Default initial values; every hyper-parameter scaled by `config.init_scale` and
/// overridden by `config.fix_hypers`.
pub fn initialize(
    dataset: &ModalDataset,
    model: &StructuralModel,
    theta_init: &StiffnessParams,
    config: &AlgorithmConfig,
) -> Result<InferenceState> {
    config.validate()?;
    let (q, m, s) = (dataset.segments(), dataset.modes(), dataset.sensors());
    let (d, n) = (model.dofs(), model.substructures());
    if q < 3 {
        return Err(Error::Data(format!(
            "insufficient segments: q = {q}, at least 3 are required"
        )));
    }
    if s * q * m <= 2 {
        return Err(Error::Data(format!(
            "insufficient mode-shape data: s·q·m = {} must exceed 2",
            s * q * m
        )));
    }
    if theta_init.len() != n {
        return Err(Error::Config(format!(
            "theta has {} components, model has {n} substructures",
            theta_init.len()
        )));
    }
    if m > d {
        return Err(Error::Config(format!(
            "{m} modes exceed the model's {d} DOFs"
        )));
    }
    dataset.check_against(d)?;

    let (a0, b0) = (config.a0, config.b0());
    let beta_num = (d * m) as f64 + 2.0 * (a0 - 1.0);
    if beta_num <= 0.0 {
        return Err(Error::Config(format!(
            "d·m + 2(a0 − 1) = {beta_num} must be positive"
        )));
    }
    let beta = config
        .fix_hypers
        .beta
        .unwrap_or(beta_num / (2.0 * b0) * config.init_scale.beta);
    let psi_norm2 = dataset.psi_hat().norm_squared();
    if psi_norm2 == 0.0 {
        return Err(Error::Data("all identified mode shapes are zero".into()));
    }
    let mut phi = DVector::zeros(d * m);
    for i in 0..m {
        phi.rows_mut(i * d, d)
            .copy_from(&(dataset.lifted_sum(i, d) / q as f64));
    }
    let omega2 = dataset.mean_omega2();

    let (shape_ref, freq_ref) = match config.init_strategy() {
        InitStrategy::Prior => (psi_norm2, dataset.sum_omega4()),
        InitStrategy::DataFit => (
            dataset.shape_misfit(&phi, d),
            dataset.frequency_deviation(&omega2),
        ),
    };
    let eta = config
        .fix_hypers
        .eta
        .unwrap_or(((s * q * m) as f64 - 2.0) / shape_ref * config.init_scale.eta)
        .min(config.eta_max);
    let fixed = &config.fix_hypers;
    let rho = match (fixed.rho, fixed.phi) {
        (Some(r), _) => DVector::from_element(m, r),
        (None, Some(phi)) => dataset.sum_omega4().map(|w4| phi * q as f64 / w4),
        (None, None) => {
            freq_ref.map(|v| ((q as f64 - 2.0) / v * config.init_scale.rho).min(config.rho_max))
        }
    };
    let tau = rho.map(|r| 1.0 / r);

    let alpha0 = match config.mode {
        Mode::Monitoring => (n * n) as f64,
        Mode::Calibration => config.alpha_init_large,
    };
    let lambda = config.fix_hypers.lambda.unwrap_or(1.0);
    Ok(InferenceState {
        theta: theta_init.as_vector().clone(),
        omega2,
        phi,
        beta,
        eta,
        nu: 1.0 / eta,
        rho,
        tau,
        alpha: DVector::from_element(n, alpha0),
        lambda,
        zeta: 1.0,
        a0,
        b0,
        fixed_set: BTreeSet::new(),
    })
}
