//! The negative log posterior `J(ξ, θ)` minimized by the coordinate updates.

use nalgebra::DVector;
use serde::Serialize;

use crate::dataset::ModalDataset;
use crate::error::Result;
use crate::model::StructuralModel;
use crate::state::InferenceState;

/// `J` split by the parameter group each term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    /// `(1 − a0) ln β + b0 β − (dm/2) ln β`
    pub beta_prior: f64,
    /// `(β/2) Σi ‖(K − ωi² M) Φi‖²`
    pub equation_error: f64,
    /// `−(q/2) Σ ln ρi − Σ(ln τi − τi ρi)`
    pub rho_log: f64,
    /// `½ Σi ρi Σr (ω̂²ri − ωi²)²`
    pub frequency_misfit: f64,
    /// `−(sqm/2) ln η − ln ν + ν η`
    pub eta_log: f64,
    /// `(η/2) ‖Ψ̂ − ΓΦ‖²`
    pub shape_misfit: f64,
    /// `½ Σ (θ̂j − θj)²/αj` over free components.
    pub theta_prior: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.beta_prior
            + self.equation_error
            + self.rho_log
            + self.frequency_misfit
            + self.eta_log
            + self.shape_misfit
            + self.theta_prior
    }
}

pub fn objective_terms(
    state: &InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
) -> Result<ObjectiveTerms> {
    state.check_precisions()?;
    let d = model.dofs();
    let m = state.modes() as f64;
    let (q, s) = (dataset.segments() as f64, dataset.sensors() as f64);
    let dm = d as f64 * m;

    let lnb = state.beta.ln();
    let beta_prior = (1.0 - state.a0) * lnb + state.b0 * state.beta - 0.5 * dm * lnb;
    let equation_error = 0.5
        * state.beta
        * model
            .eigen_residuals(&state.theta, &state.modal_state())?
            .norm_squared();

    let dev = dataset.frequency_deviation(&state.omega2);
    let mut rho_log = 0.0;
    let mut frequency_misfit = 0.0;
    for i in 0..state.modes() {
        let (r, t) = (state.rho[i], state.tau[i]);
        rho_log += -0.5 * q * r.ln() - (t.ln() - t * r);
        frequency_misfit += 0.5 * r * dev[i];
    }

    let eta_log = -0.5 * s * q * m * state.eta.ln() - state.nu.ln() + state.nu * state.eta;
    let shape_misfit = 0.5 * state.eta * dataset.shape_misfit(&state.phi, d);

    let theta_prior = state
        .free_indices()
        .into_iter()
        .map(|j| 0.5 * (anchor[j] - state.theta[j]).powi(2) / state.alpha[j])
        .sum();

    Ok(ObjectiveTerms {
        beta_prior,
        equation_error,
        rho_log,
        frequency_misfit,
        eta_log,
        shape_misfit,
        theta_prior,
    })
}

pub fn objective(
    state: &InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
) -> Result<f64> {
    Ok(objective_terms(state, dataset, model, anchor)?.total())
}
