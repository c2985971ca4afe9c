//! Laplace approximations: joint Hessian of `J` over `[ξ, θ]`, the conditional
//! covariance of `θ`, and the Hessian over the ARD hyper-parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::ModalDataset;
use crate::error::{Error, Result};
use crate::model::StructuralModel;
use crate::state::InferenceState;
use crate::updates::{identity_plus, scaled_columns};

/// Offsets of each parameter group in the joint ordering
/// `[β, ω², ρ, τ | Φ, η, ν, θ_free]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLayout {
    pub d: usize,
    pub m: usize,
    pub free: Vec<usize>,
}

impl JointLayout {
    pub fn new(d: usize, m: usize, free: Vec<usize>) -> Self {
        Self { d, m, free }
    }

    pub fn beta(&self) -> usize {
        0
    }
    pub fn omega2(&self, i: usize) -> usize {
        1 + i
    }
    pub fn rho(&self, i: usize) -> usize {
        1 + self.m + i
    }
    pub fn tau(&self, i: usize) -> usize {
        1 + 2 * self.m + i
    }
    /// Start of the first block of the second partition.
    pub fn split(&self) -> usize {
        1 + 3 * self.m
    }
    pub fn phi(&self, i: usize, k: usize) -> usize {
        self.split() + i * self.d + k
    }
    pub fn eta(&self) -> usize {
        self.split() + self.d * self.m
    }
    pub fn nu(&self) -> usize {
        self.eta() + 1
    }
    /// Position of the `k`-th free component.
    pub fn theta(&self, k: usize) -> usize {
        self.nu() + 1 + k
    }
    pub fn size(&self) -> usize {
        self.nu() + 1 + self.free.len()
    }

    /// Human-readable name of every row, in order.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["beta".to_string()];
        out.extend((1..=self.m).map(|i| format!("omega2_{i}")));
        out.extend((1..=self.m).map(|i| format!("rho_{i}")));
        out.extend((1..=self.m).map(|i| format!("tau_{i}")));
        for i in 1..=self.m {
            out.extend((1..=self.d).map(|k| format!("phi_{i}_{k}")));
        }
        out.push("eta".into());
        out.push("nu".into());
        out.extend(self.free.iter().map(|j| format!("theta_{}", j + 1)));
        out
    }
}

fn put(h: &mut DMatrix<f64>, r: usize, c: usize, v: f64) {
    h[(r, c)] = v;
    h[(c, r)] = v;
}

/// Analytic Hessian of `J` with respect to `[β, ω², ρ, τ | Φ, η, ν, θ_free]`.
pub fn joint_hessian(
    state: &InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
    _anchor: &DVector<f64>,
) -> Result<(DMatrix<f64>, JointLayout)> {
    state.check_precisions()?;
    let d = model.dofs();
    let m = state.modes();
    let q = dataset.segments() as f64;
    let sqm = (dataset.sensors() * dataset.segments() * m) as f64;
    let lay = JointLayout::new(d, m, state.free_indices());
    let mut h = DMatrix::zeros(lay.size(), lay.size());

    let k = model.assemble_stiffness(&state.theta)?;
    let mass = model.mass();
    let beta = state.beta;
    let hmat = model.build_h(&state.phi)?;
    let resid = &hmat * &state.theta - model.build_b(&state.omega2, &state.phi)?;

    h[(0, 0)] = ((d * m) as f64 / 2.0 - 1.0 + state.a0) / (beta * beta);

    let gtg = dataset.gamma_t_gamma_diag(d);
    for i in 0..m {
        let phi_i = state.phi.rows(i * d, d).into_owned();
        let di = model.dynamic_stiffness(&k, state.omega2[i]);
        let mphi = mass * &phi_i;
        let r_i = resid.rows(i * d, d);
        let data_sum: f64 = (0..dataset.segments())
            .map(|r| dataset.omega_hat2_at(r, i))
            .sum();

        put(&mut h, lay.beta(), lay.omega2(i), -mphi.dot(&r_i));
        h[(lay.omega2(i), lay.omega2(i))] = beta * mphi.norm_squared() + q * state.rho[i];
        put(
            &mut h,
            lay.omega2(i),
            lay.rho(i),
            q * state.omega2[i] - data_sum,
        );
        h[(lay.rho(i), lay.rho(i))] = q / (2.0 * state.rho[i].powi(2));
        put(&mut h, lay.rho(i), lay.tau(i), 1.0);
        h[(lay.tau(i), lay.tau(i))] = 1.0 / state.tau[i].powi(2);

        let di2 = &di * &di;
        let d2phi = &di2 * &phi_i;
        let l1 = (mass * &di + &di * mass) * &phi_i * (-beta);
        for a in 0..d {
            put(&mut h, lay.beta(), lay.phi(i, a), d2phi[a]);
            put(&mut h, lay.omega2(i), lay.phi(i, a), l1[a]);
            for b in 0..d {
                h[(lay.phi(i, a), lay.phi(i, b))] = beta * di2[(a, b)];
            }
            h[(lay.phi(i, a), lay.phi(i, a))] += state.eta * gtg[a];
        }
        let psi_sum = dataset.lifted_sum(i, d);
        for a in 0..d {
            put(
                &mut h,
                lay.phi(i, a),
                lay.eta(),
                gtg[a] * phi_i[a] - psi_sum[a],
            );
        }

        for (c, &j) in lay.free.iter().enumerate() {
            let kj = &model.ksub()[j];
            put(
                &mut h,
                lay.omega2(i),
                lay.theta(c),
                -beta * mphi.dot(&(kj * &phi_i)),
            );
            let l3 = (kj * &di + &di * kj) * &phi_i * beta;
            for a in 0..d {
                put(&mut h, lay.phi(i, a), lay.theta(c), l3[a]);
            }
        }
    }

    h[(lay.eta(), lay.eta())] = sqm / (2.0 * state.eta.powi(2));
    put(&mut h, lay.eta(), lay.nu(), 1.0);
    h[(lay.nu(), lay.nu())] = 1.0 / state.nu.powi(2);

    let g = hmat.transpose() * &resid;
    let hth = hmat.transpose() * &hmat;
    for (c, &j) in lay.free.iter().enumerate() {
        put(&mut h, lay.beta(), lay.theta(c), g[j]);
        for (e, &l) in lay.free.iter().enumerate() {
            h[(lay.theta(c), lay.theta(e))] = beta * hth[(j, l)];
        }
        h[(lay.theta(c), lay.theta(c))] += 1.0 / state.alpha[j];
    }
    Ok((h, lay))
}

/// Inverse of the joint Hessian with its spectral condition number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCovariance {
    pub layout: JointLayout,
    pub covariance: DMatrix<f64>,
    /// Condition number of the equilibrated Hessian.
    pub condition: f64,
    /// Smallest eigenvalue of the equilibrated Hessian; negative means the point is
    /// not a local minimum.
    pub min_eigenvalue: f64,
}

impl JointCovariance {
    pub fn std_dev(&self, idx: usize) -> f64 {
        self.covariance[(idx, idx)].max(0.0).sqrt()
    }
}

/// Symmetric inverse via an eigendecomposition of the diagonally equilibrated
/// matrix `DHD`, `D = diag(|Hii|^-½)`. Returns the inverse, the condition number of
/// `DHD` and its smallest eigenvalue.
pub fn symmetric_inverse(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, f64)> {
    let scale = h
        .diagonal()
        .map(|v| if v != 0.0 { 1.0 / v.abs().sqrt() } else { 1.0 });
    let dmat = DMatrix::from_diagonal(&scale);
    let eq = &dmat * h * &dmat;
    let sym = (&eq + eq.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition of Hessian did not converge".into()))?;
    let amax = eig.eigenvalues.amax();
    let amin = eig.eigenvalues.amin();
    let cond = if amin == 0.0 {
        f64::INFINITY
    } else {
        amax / amin
    };
    if !(cond.is_finite() && cond < 1e14) {
        return Err(Error::Numerical(format!(
            "Hessian is singular (condition number {cond:.3e})"
        )));
    }
    let min_eig = eig.eigenvalues.min();
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let v = &eig.eigenvectors;
    let inner = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    let cov = &dmat * inner * &dmat;
    Ok(((&cov + cov.transpose()) * 0.5, cond, min_eig))
}

pub fn joint_covariance(
    state: &InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
    anchor: &DVector<f64>,
) -> Result<JointCovariance> {
    let (h, layout) = joint_hessian(state, dataset, model, anchor)?;
    let (covariance, condition, min_eigenvalue) = symmetric_inverse(&h)?;
    Ok(JointCovariance {
        layout,
        covariance,
        condition,
        min_eigenvalue,
    })
}

/// c.o.v. of each precision from its own Hessian diagonal entry, all other
/// parameters held at the MAP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCov {
    pub beta: f64,
    pub eta: f64,
    pub rho: Vec<f64>,
}

pub fn conditional_cov(
    state: &InferenceState,
    dataset: &ModalDataset,
    model: &StructuralModel,
) -> PrecisionCov {
    let dm = (model.dofs() * state.modes()) as f64;
    let q = dataset.segments() as f64;
    let sqm = (dataset.sensors() * dataset.segments() * state.modes()) as f64;
    // H_ββ β² = dm/2 − 1 + a0, H_ηη η² = sqm/2, H_ρρ ρ² = q/2
    PrecisionCov {
        beta: 1.0 / (dm / 2.0 - 1.0 + state.a0).sqrt(),
        eta: (2.0 / sqm).sqrt(),
        rho: vec![(2.0 / q).sqrt(); state.modes()],
    }
}

/// `Σθ = S (I + β S HᵀH S)⁻¹ S` with `S = diag(√α)` over free components; rows and
/// columns of pinned components are zero.
pub fn theta_covariance(state: &InferenceState, model: &StructuralModel) -> Result<DMatrix<f64>> {
    let h = model.build_h(&state.phi)?;
    theta_covariance_from(state.beta, &state.alpha, &state.free_indices(), &h)
}

pub(crate) fn theta_covariance_from(
    beta: f64,
    alpha: &DVector<f64>,
    free: &[usize],
    h: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = alpha.len();
    let mut sigma = DMatrix::zeros(n, n);
    if free.is_empty() {
        return Ok(sigma);
    }
    let hs = scaled_columns(h, alpha, free);
    let sys = identity_plus(&(hs.transpose() * &hs * beta));
    let inv = sys
        .cholesky()
        .ok_or_else(|| {
            Error::Numerical("stiffness-parameter system is not positive definite".into())
        })?
        .inverse();
    for (a, &j) in free.iter().enumerate() {
        for (b, &k) in free.iter().enumerate() {
            sigma[(j, k)] = alpha[j].sqrt() * inv[(a, b)] * alpha[k].sqrt();
        }
    }
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// The two textbook expressions `(βAHᵀH + I)⁻¹A` and `A(βHᵀHA + I)⁻¹`, via LU.
pub fn theta_covariance_forms(
    beta: f64,
    alpha: &DVector<f64>,
    hth: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = DMatrix::from_diagonal(alpha);
    let left = identity_plus(&(&a * hth * beta))
        .lu()
        .solve(&a)
        .ok_or_else(|| Error::Numerical("singular system in theta covariance".into()))?;
    let right_inv = identity_plus(&(hth * &a * beta))
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular system in theta covariance".into()))?;
    Ok((left, &a * right_inv))
}

/// Hessian over `δ = [α_free, λ, ζ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperHessian {
    pub matrix: DMatrix<f64>,
    /// Substructure index of each leading `α` row.
    pub free: Vec<usize>,
}

impl HyperHessian {
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(symmetric_inverse(&self.matrix)?.0)
    }
}

fn hyper_tail(matrix: &mut DMatrix<f64>, nf: usize, n: usize, lambda: f64, zeta: f64) {
    for c in 0..nf {
        put(matrix, c, nf, 1.0);
    }
    matrix[(nf, nf)] = n as f64 / (lambda * lambda);
    put(matrix, nf, nf + 1, 1.0);
    matrix[(nf + 1, nf + 1)] = 1.0 / (zeta * zeta);
}

/// The block form `[2A⁻³B − A⁻², 1, 0; 1, nλ⁻², 1; 0, 1, ζ⁻²]`, with
/// `Bjj = (Σθ)jj + (θ̂u − θ)j²` and pruned components left out.
pub fn hyper_hessian(
    state: &InferenceState,
    anchor: &DVector<f64>,
    sigma_diag: &DVector<f64>,
) -> HyperHessian {
    let free = state.free_indices();
    let nf = free.len();
    let mut matrix = DMatrix::zeros(nf + 2, nf + 2);
    for (c, &j) in free.iter().enumerate() {
        let a = state.alpha[j];
        let b = sigma_diag[j] + (anchor[j] - state.theta[j]).powi(2);
        matrix[(c, c)] = 2.0 * b / a.powi(3) - 1.0 / (a * a);
    }
    hyper_tail(
        &mut matrix,
        nf,
        state.substructures(),
        state.lambda,
        state.zeta,
    );
    HyperHessian { matrix, free }
}

/// Exact Hessian of the negative log pseudo-evidence plus hyper-priors,
///
/// `½ ln|A + (βHᵀH)⁻¹| + ½ yᵀ(A + (βHᵀH)⁻¹)⁻¹ y − n ln λ + λ Σα − ln ζ + ζ λ`,
///
/// at the current `α`, where `θ` is the matching MAP estimate. With
/// `P = (A + (βHᵀH)⁻¹)⁻¹` and `Py = A⁻¹(θ̂u − θ)`, the `α` block is
/// `−½ Pjk² + Pjk (Py)j (Py)k`.
pub fn pseudo_evidence_hessian(
    state: &InferenceState,
    model: &StructuralModel,
    anchor: &DVector<f64>,
) -> Result<HyperHessian> {
    let free = state.free_indices();
    let nf = free.len();
    let mut matrix = DMatrix::zeros(nf + 2, nf + 2);
    if nf > 0 {
        let h = model.build_h(&state.phi)?;
        let hf = DMatrix::from_fn(h.nrows(), nf, |r, c| h[(r, free[c])]);
        let g = hf.transpose() * &hf * state.beta;
        // Woodbury: (A + G⁻¹)⁻¹ = G − G S (I + S G S)⁻¹ S G
        let s = DMatrix::from_diagonal(&DVector::from_iterator(
            nf,
            free.iter().map(|&j| state.alpha[j].sqrt()),
        ));
        let inner = identity_plus(&(&s * &g * &s))
            .cholesky()
            .ok_or_else(|| {
                Error::Numerical("pseudo-evidence system is not positive definite".into())
            })?
            .inverse();
        let gs = &g * &s;
        let p = &g - &gs * inner * gs.transpose();
        let py = DVector::from_iterator(
            nf,
            free.iter()
                .map(|&j| (anchor[j] - state.theta[j]) / state.alpha[j]),
        );
        for a in 0..nf {
            for b in 0..nf {
                matrix[(a, b)] = -0.5 * p[(a, b)].powi(2) + p[(a, b)] * py[a] * py[b];
            }
        }
    }
    hyper_tail(
        &mut matrix,
        nf,
        state.substructures(),
        state.lambda,
        state.zeta,
    );
    Ok(HyperHessian { matrix, free })
}

/// `√(Σθ)jj / |θj|`, zero for pinned components.
pub fn theta_cov(theta: &DVector<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|j| {
            let v = sigma[(j, j)].max(0.0).sqrt();
            if v == 0.0 {
                0.0
            } else {
                v / theta[j].abs()
            }
        }),
    )
}
