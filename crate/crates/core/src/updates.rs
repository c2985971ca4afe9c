//! Closed-form coordinate minimizers of the MAP objective and the evidence-based
//! ARD updates.
//!
//! Each function returns new values and leaves the state untouched.

use nalgebra::{DMatrix, DVector};

use crate::config::AlgorithmConfig;
use crate::dataset::ModalDataset;
use crate::error::{Error, Result};
use crate::model::StructuralModel;
use crate::state::InferenceState;

/// Below this, `λ` is treated as zero in the ARD variance update.
pub const LAMBDA_ZERO: f64 = 1e-12;

/// A precision update together with its rate and whether it hit the clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarPrecision {
    pub value: f64,
    pub rate: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalPrecision {
    pub value: DVector<f64>,
    pub rate: DVector<f64>,
    pub clamped: bool,
}

/// Solves `(βF + ηΓᵀΓ) Φ = η ΓᵀΨ̂` one mode block at a time.
pub fn update_mode_shapes(
    state: &InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
) -> Result<DVector<f64>> {
    let d = model.dofs();
    let m = state.modes();
    let k = model.assemble_stiffness(&state.theta)?;
    let gtg = dataset.gamma_t_gamma_diag(d);
    let mut phi = DVector::zeros(d * m);
    for i in 0..m {
        let di = model.dynamic_stiffness(&k, state.omega2[i]);
        let mut lhs = (&di * &di) * state.beta;
        for r in 0..d {
            lhs[(r, r)] += state.eta * gtg[r];
        }
        let rhs = dataset.lifted_sum(i, d) * state.eta;
        let chol = lhs
            .cholesky()
            .ok_or_else(|| match (0..d).find(|r| gtg[*r] == 0.0) {
                Some(dof) if state.beta == 0.0 => Error::Numerical(format!(
                    "mode-shape system is singular: DOF {dof} is unobserved and beta is zero"
                )),
                _ => Error::Numerical(format!(
                    "mode-shape system for mode {} is not positive definite",
                    i + 1
                )),
            })?;
        phi.rows_mut(i * d, d).copy_from(&chol.solve(&rhs));
    }
    Ok(phi)
}

/// `η = (sqm − 2)/‖Ψ̂ − ΓΦ‖²`, `ν = 1/η`.
pub fn update_eta(state: &InferenceState, dataset: &ModalDataset, eta_max: f64) -> ScalarPrecision {
    let n_data = (dataset.sensors() * dataset.segments() * dataset.modes()) as f64;
    let misfit = dataset.shape_misfit(&state.phi, state.dofs());
    let raw = (n_data - 2.0) / misfit;
    let clamped = !(raw.is_finite() && raw <= eta_max);
    let value = if clamped { eta_max } else { raw };
    ScalarPrecision {
        value,
        rate: 1.0 / value,
        clamped,
    }
}

/// Minimizer in `ω²`; the system matrix is diagonal, one equation per mode.
pub fn update_frequencies(
    state: &InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
) -> Result<DVector<f64>> {
    let d = model.dofs();
    let q = dataset.segments() as f64;
    let k = model.assemble_stiffness(&state.theta)?;
    let mut omega2 = DVector::zeros(state.modes());
    for i in 0..state.modes() {
        let phi_i = state.phi.rows(i * d, d);
        let mphi = model.mass() * phi_i;
        let kphi = &k * phi_i;
        let data_sum: f64 = (0..dataset.segments())
            .map(|r| dataset.omega_hat2_at(r, i))
            .sum();
        let den = state.beta * mphi.norm_squared() + q * state.rho[i];
        if !(den > 0.0) {
            return Err(Error::Numerical(format!(
                "frequency system for mode {} is not positive definite",
                i + 1
            )));
        }
        omega2[i] = (state.beta * mphi.dot(&kphi) + state.rho[i] * data_sum) / den;
    }
    Ok(omega2)
}

/// `ρi = (q − 2)/Σr(ω̂²ri − ωi²)²`, `τ = 1/ρ`.
pub fn update_rho(state: &InferenceState, dataset: &ModalDataset, rho_max: f64) -> ModalPrecision {
    let q = dataset.segments() as f64;
    let dev = dataset.frequency_deviation(&state.omega2);
    let mut clamped = false;
    let value = dev.map(|s| {
        let raw = (q - 2.0) / s;
        if raw.is_finite() && raw <= rho_max {
            raw
        } else {
            clamped = true;
            rho_max
        }
    });
    let rate = value.map(|r| 1.0 / r);
    ModalPrecision {
        value,
        rate,
        clamped,
    }
}

/// Minimizer in `θ` over the free components; the rest are set to the anchor.
///
/// Solved in the scaled form `(I + βSHᵀHS) z = βSHᵀ(b − Hθ̂)`, `θ = θ̂ + Sz`, with
/// `S = diag(√α)`, which stays well conditioned for both large and vanishing `α`.
pub fn update_theta(
    state: &InferenceState,
    model: &StructuralModel,
    anchor: &DVector<f64>,
) -> Result<DVector<f64>> {
    let h = model.build_h(&state.phi)?;
    let b = model.build_b(&state.omega2, &state.phi)?;
    solve_theta(
        state.beta,
        &state.alpha,
        &state.free_indices(),
        &h,
        &b,
        anchor,
    )
}

pub(crate) fn solve_theta(
    beta: f64,
    alpha: &DVector<f64>,
    free: &[usize],
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    anchor: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut theta = anchor.clone();
    if free.is_empty() {
        return Ok(theta);
    }
    let r = b - h * anchor;
    let hs = scaled_columns(h, alpha, free);
    let sys = identity_plus(&(hs.transpose() * &hs * beta));
    let rhs = hs.transpose() * r * beta;
    let z = sys
        .cholesky()
        .ok_or_else(|| {
            Error::Numerical("stiffness-parameter system is not positive definite".into())
        })?
        .solve(&rhs);
    for (k, &j) in free.iter().enumerate() {
        theta[j] += alpha[j].sqrt() * z[k];
    }
    Ok(theta)
}

/// Columns of `H` restricted to `free`, each scaled by `√αj`.
pub(crate) fn scaled_columns(
    h: &DMatrix<f64>,
    alpha: &DVector<f64>,
    free: &[usize],
) -> DMatrix<f64> {
    DMatrix::from_fn(h.nrows(), free.len(), |r, c| {
        h[(r, free[c])] * alpha[free[c]].sqrt()
    })
}

pub(crate) fn identity_plus(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += 1.0;
    }
    out
}

/// Sum of squared eigen-equation errors `Σi ‖(K(θ) − ωi² M) Φi‖²`.
pub fn equation_error(state: &InferenceState, model: &StructuralModel) -> Result<f64> {
    Ok(model
        .eigen_residuals(&state.theta, &state.modal_state())?
        .norm_squared())
}

/// `β = (dm + 2(a0 − 1))/(2b0 + Σi ‖(K(θ) − ωi² M) Φi‖²)`.
pub fn update_beta(state: &InferenceState, model: &StructuralModel) -> Result<f64> {
    let num = (model.dofs() * state.modes()) as f64 + 2.0 * (state.a0 - 1.0);
    if num <= 0.0 {
        return Err(Error::Config(format!(
            "d·m + 2(a0 − 1) = {num} must be positive"
        )));
    }
    Ok(num / (2.0 * state.b0 + equation_error(state, model)?))
}

fn ard_b(j: usize, theta: &DVector<f64>, anchor: &DVector<f64>, sigma_diag: &DVector<f64>) -> f64 {
    sigma_diag[j] + (anchor[j] - theta[j]).powi(2)
}

/// ARD variances under the exponential variance prior. Pinned components get 0.
///
/// Written as `2B/(1 + √(1 + 8λB))`, algebraically equal to
/// `(√(1 + 8λB) − 1)/(4λ)` but free of cancellation for small `λB`.
pub fn update_alpha(
    state: &InferenceState,
    anchor: &DVector<f64>,
    sigma_diag: &DVector<f64>,
) -> DVector<f64> {
    let lambda = state.lambda;
    let mut alpha = DVector::zeros(state.substructures());
    for j in 0..state.substructures() {
        if state.fixed_set.contains(&j) {
            continue;
        }
        let b = ard_b(j, &state.theta, anchor, sigma_diag);
        alpha[j] = if lambda < LAMBDA_ZERO {
            b
        } else {
            2.0 * b / (1.0 + (1.0 + 8.0 * lambda * b).sqrt())
        };
    }
    alpha
}

/// ARD variances under the exponential precision prior: `α = B + κ`.
pub fn update_alpha_precision_variant(
    state: &InferenceState,
    anchor: &DVector<f64>,
    sigma_diag: &DVector<f64>,
    kappa: f64,
) -> DVector<f64> {
    let mut alpha = DVector::zeros(state.substructures());
    for j in 0..state.substructures() {
        if !state.fixed_set.contains(&j) {
            alpha[j] = ard_b(j, &state.theta, anchor, sigma_diag) + kappa;
        }
    }
    alpha
}

/// One pass of `λ = n/(Σα + ζ)` followed by `ζ = 1/λ`.
pub fn update_lambda_zeta(state: &InferenceState) -> (f64, f64) {
    let n = state.substructures() as f64;
    let lambda = n / (state.alpha.sum() + state.zeta);
    (lambda, 1.0 / lambda)
}

/// Applies the `(Φ, η)`, `(ω², ρ)`, `θ`, `β` updates in order, honoring fixed hypers.
/// Returns whether `η` or `ρ` were clamped.
pub fn sweep(
    state: &mut InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
    config: &AlgorithmConfig,
) -> Result<(bool, bool)> {
    let fixed = config.fix_hypers;
    state.phi = update_mode_shapes(state, dataset, model)?;
    let mut eta_clamped = false;
    if fixed.eta.is_none() {
        let up = update_eta(state, dataset, config.eta_max);
        state.eta = up.value;
        state.nu = up.rate;
        eta_clamped = up.clamped;
    }
    state.omega2 = update_frequencies(state, dataset, model)?;
    let mut rho_clamped = false;
    if !fixed.rho_fixed() {
        let up = update_rho(state, dataset, config.rho_max);
        state.rho = up.value;
        state.tau = up.rate;
        rho_clamped = up.clamped;
    }
    state.theta = update_theta(state, model, anchor)?;
    if fixed.beta.is_none() {
        state.beta = update_beta(state, model)?;
    }
    Ok((eta_clamped, rho_clamped))
}
