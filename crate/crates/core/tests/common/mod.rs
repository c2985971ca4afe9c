#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use modal_sbl::objective::{objective_terms, ObjectiveTerms};
use modal_sbl::synthetic::{simulate_modal_data, NoiseSpec};
use modal_sbl::uncertainty::{
    joint_hessian, theta_covariance, theta_covariance_forms, JointLayout,
};
use modal_sbl::updates::{
    update_beta, update_eta, update_frequencies, update_mode_shapes, update_rho, update_theta,
};
use modal_sbl::{
    initialize, run_calibration, AlgorithmConfig, InferenceState, ModalDataset, ShapeNormalization,
    StiffnessParams, StructuralModel,
};

/// Two DOFs, two substructures (ground spring and inter-mass spring), `K0 = 0`.
pub fn two_dof_model() -> StructuralModel {
    let mass = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.5]));
    let k1 = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
    let k2 = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]);
    StructuralModel::new(mass, DMatrix::zeros(2, 2), vec![k1, k2]).unwrap()
}

/// `q = 3` noisy segments of the first mode, both DOFs observed.
pub fn two_dof_data(seed: u64) -> ModalDataset {
    let theta = StiffnessParams::from_slice(&[1.0, 1.0]).unwrap();
    let noise = NoiseSpec {
        freq_cov: 0.02,
        shape_cov: 0.02,
        ..NoiseSpec::default()
    }
    .with_seed(seed);
    simulate_modal_data(
        &two_dof_model(),
        &theta,
        1,
        3,
        &[0, 1],
        &noise,
        ShapeNormalization::PerMode,
    )
    .unwrap()
}

/// Unit-scaled, tightly converged calibration settings for the small instance.
pub fn small_config() -> AlgorithmConfig {
    AlgorithmConfig {
        force_unit: 1.0,
        tol_theta: 1e-13,
        max_iterations: 200_000,
        ..AlgorithmConfig::calibration()
    }
}

/// State values in the joint Hessian ordering.
pub fn pack(state: &InferenceState, lay: &JointLayout) -> DVector<f64> {
    let mut x = DVector::zeros(lay.size());
    x[lay.beta()] = state.beta;
    for i in 0..lay.m {
        x[lay.omega2(i)] = state.omega2[i];
        x[lay.rho(i)] = state.rho[i];
        x[lay.tau(i)] = state.tau[i];
        for k in 0..lay.d {
            x[lay.phi(i, k)] = state.phi[i * lay.d + k];
        }
    }
    x[lay.eta()] = state.eta;
    x[lay.nu()] = state.nu;
    for (c, &j) in lay.free.iter().enumerate() {
        x[lay.theta(c)] = state.theta[j];
    }
    x
}

pub fn unpack(base: &InferenceState, lay: &JointLayout, x: &DVector<f64>) -> InferenceState {
    let mut st = base.clone();
    st.beta = x[lay.beta()];
    for i in 0..lay.m {
        st.omega2[i] = x[lay.omega2(i)];
        st.rho[i] = x[lay.rho(i)];
        st.tau[i] = x[lay.tau(i)];
        for k in 0..lay.d {
            st.phi[i * lay.d + k] = x[lay.phi(i, k)];
        }
    }
    st.eta = x[lay.eta()];
    st.nu = x[lay.nu()];
    for (c, &j) in lay.free.iter().enumerate() {
        st.theta[j] = x[lay.theta(c)];
    }
    st
}

pub fn term_values(t: &ObjectiveTerms) -> [f64; 7] {
    [
        t.beta_prior,
        t.equation_error,
        t.rho_log,
        t.frequency_misfit,
        t.eta_log,
        t.shape_misfit,
        t.theta_prior,
    ]
}

/// Central-difference derivative of every objective term along coordinate `idx`.
pub fn term_partials(
    state: &InferenceState,
    lay: &JointLayout,
    ds: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
    idx: usize,
) -> [f64; 7] {
    let x = pack(state, lay);
    let h = 1e-6 * x[idx].abs().max(1e-3);
    let eval = |v: f64| {
        let mut y = x.clone();
        y[idx] = v;
        term_values(&objective_terms(&unpack(state, lay, &y), ds, model, anchor).unwrap())
    };
    let (plus, minus) = (eval(x[idx] + h), eval(x[idx] - h));
    let mut out = [0.0; 7];
    for t in 0..7 {
        out[t] = (plus[t] - minus[t]) / (2.0 * h);
    }
    out
}

/// `|∂J| / max(Σ|∂Jterm|, 1/|x|)`: zero at a stationary point, scale free otherwise.
/// The `1/|x|` floor covers coordinates such as `ν` whose only term is `νη − ln ν`.
pub fn relative_partial(partials: &[f64; 7], x: f64) -> f64 {
    let total: f64 = partials.iter().sum();
    let scale: f64 = partials
        .iter()
        .map(|p| p.abs())
        .sum::<f64>()
        .max(1.0 / x.abs());
    if scale == 0.0 {
        0.0
    } else {
        total.abs() / scale
    }
}

pub fn objective_at(
    base: &InferenceState,
    lay: &JointLayout,
    ds: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    objective_terms(&unpack(base, lay, x), ds, model, anchor)
        .unwrap()
        .total()
}

/// Central-difference Hessian of `J` in the joint ordering.
pub fn fd_hessian(
    state: &InferenceState,
    lay: &JointLayout,
    ds: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
) -> DMatrix<f64> {
    let x = pack(state, lay);
    let n = x.len();
    let step: Vec<f64> = x
        .iter()
        .map(|v| if *v == 0.0 { 1e-6 } else { 1e-4 * v.abs() })
        .collect();
    let f = |y: &DVector<f64>| objective_at(state, lay, ds, model, anchor, y);
    let mut h = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let val = if a == b {
                let mut p = x.clone();
                p[a] += step[a];
                let mut m = x.clone();
                m[a] -= step[a];
                (f(&p) - 2.0 * f(&x) + f(&m)) / (step[a] * step[a])
            } else {
                let shifted = |sa: f64, sb: f64| {
                    let mut y = x.clone();
                    y[a] += sa * step[a];
                    y[b] += sb * step[b];
                    f(&y)
                };
                (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0))
                    / (4.0 * step[a] * step[b])
            };
            h[(a, b)] = val;
            h[(b, a)] = val;
        }
    }
    h
}

/// Largest `|A − B|ab / √(|Aaa Abb|)`, the error relative to the natural scale of
/// each entry.
pub fn scaled_max_error(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let n = analytic.nrows();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let scale = (analytic[(a, a)] * analytic[(b, b)]).abs().sqrt();
            let scale = scale.max(analytic[(a, b)].abs());
            worst = worst.max((analytic[(a, b)] - reference[(a, b)]).abs() / scale);
        }
    }
    worst
}

/// Largest relative partial of `J` over the coordinates of one block.
fn block_residual(
    state: &InferenceState,
    indices: &[usize],
    ds: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
) -> f64 {
    let lay = JointLayout::new(model.dofs(), state.modes(), state.free_indices());
    let x = pack(state, &lay);
    indices
        .iter()
        .map(|&idx| relative_partial(&term_partials(state, &lay, ds, model, anchor, idx), x[idx]))
        .fold(0.0, f64::max)
}

/// Three sweeps of block updates on the small instance, checking after each update.
/// Returns the worst block residual and the block it came from.
pub fn sweep_stationarity(seed: u64, alpha: Option<f64>) -> (f64, &'static str) {
    let model = two_dof_model();
    let ds = two_dof_data(seed);
    let theta0 = StiffnessParams::from_slice(&[1.3, 0.8]).unwrap();
    let anchor = theta0.as_vector().clone();
    let mut st = initialize(&ds, &model, &theta0, &small_config()).unwrap();
    if let Some(a) = alpha {
        st.alpha.fill(a);
    }
    let lay = JointLayout::new(2, 1, st.free_indices());
    let mut worst = (0.0, "");
    let mut note = |st: &InferenceState, idx: &[usize], what: &'static str| {
        let r = block_residual(st, idx, &ds, &model, &anchor);
        if r > worst.0 {
            worst = (r, what);
        }
    };
    for _ in 0..3 {
        st.phi = update_mode_shapes(&st, &ds, &model).unwrap();
        note(&st, &[lay.phi(0, 0), lay.phi(0, 1)], "phi");
        let up = update_eta(&st, &ds, 1e12);
        st.eta = up.value;
        st.nu = up.rate;
        note(&st, &[lay.eta(), lay.nu()], "eta/nu");
        st.omega2 = update_frequencies(&st, &ds, &model).unwrap();
        note(&st, &[lay.omega2(0)], "omega2");
        let up = update_rho(&st, &ds, 1e12);
        st.rho = up.value;
        st.tau = up.rate;
        note(&st, &[lay.rho(0), lay.tau(0)], "rho/tau");
        st.theta = update_theta(&st, &model, &anchor).unwrap();
        note(&st, &[lay.theta(0), lay.theta(1)], "theta");
        st.beta = update_beta(&st, &model).unwrap();
        note(&st, &[lay.beta()], "beta");
    }
    worst
}

/// Calibrated MAP state of the small instance and the initial `θ` used as anchor.
pub fn calibrated(seed: u64) -> (InferenceState, DVector<f64>) {
    let model = two_dof_model();
    let ds = two_dof_data(seed);
    let theta0 = StiffnessParams::from_slice(&[1.3, 0.8]).unwrap();
    let res = run_calibration(&ds, &model, &theta0, &small_config()).unwrap();
    assert!(res.converged);
    (res.state_map, theta0.as_vector().clone())
}

/// Scaled error between the analytic and the central-difference joint Hessian.
pub fn hessian_error(state: &InferenceState, seed: u64, anchor: &DVector<f64>) -> f64 {
    let model = two_dof_model();
    let ds = two_dof_data(seed);
    let (h, lay) = joint_hessian(state, &ds, &model, anchor).unwrap();
    scaled_max_error(&h, &fd_hessian(state, &lay, &ds, &model, anchor))
}

/// Largest gap between the two closed forms of `Σθ` (and the scaled form used by the
/// driver) relative to the largest entry, over a range of `α`.
pub fn covariance_form_gap(seed: u64) -> f64 {
    let model = two_dof_model();
    let (mut st, _) = calibrated(seed);
    let mut worst: f64 = 0.0;
    for alpha in [1e9, 1.0, 1e-3, 1e-7] {
        st.alpha.fill(alpha);
        let h = model.build_h(&st.phi).unwrap();
        let hth = h.transpose() * &h;
        let (left, right) = theta_covariance_forms(st.beta, &st.alpha, &hth).unwrap();
        let scaled = theta_covariance(&st, &model).unwrap();
        let scale = left.amax();
        worst = worst
            .max((&left - &right).amax() / scale)
            .max((&left - &scaled).amax() / scale);
    }
    worst
}
