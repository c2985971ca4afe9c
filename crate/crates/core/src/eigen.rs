//! Generalized symmetric eigenproblem `K Φ = ω² M Φ`.
//!
//! Only used to produce ground-truth modes for synthetic data; inference never
//! solves the eigenproblem.

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{StructuralModel, SystemModalState};

const MAX_SWEEPS: usize = 10_000;

/// The `m` lowest eigenpairs of `(K(θ), M)`, frequencies ascending.
///
/// Each mode shape has unit Euclidean norm and its component of largest magnitude is
/// positive (the first such component when several tie).
pub fn eigen_solve(
    model: &StructuralModel,
    theta: &DVector<f64>,
    m: usize,
) -> Result<SystemModalState> {
    let d = model.dofs();
    if m == 0 || m > d {
        return Err(Error::Config(format!(
            "mode count must be in 1..={d}, got {m}"
        )));
    }
    let k = model.assemble_stiffness(theta)?;
    let chol = model
        .mass()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Model("mass matrix is not positive definite".into()))?;
    let l = chol.l();

    // C = L⁻¹ K L⁻ᵀ
    let linv_k = l
        .solve_lower_triangular(&k)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor of M".into()))?;
    let c_t = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor of M".into()))?;
    let c = (&c_t + c_t.transpose()) * 0.5;

    let eig = SymmetricEigen::try_new(c, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let lt = l.transpose();
    let mut omega2 = DVector::zeros(m);
    let mut phi = DVector::zeros(d * m);
    for (slot, &idx) in order.iter().take(m).enumerate() {
        let y = eig.eigenvectors.column(idx).into_owned();
        let mut v = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor of M".into()))?;
        normalize_mode(&mut v);
        omega2[slot] = eig.eigenvalues[idx];
        phi.rows_mut(slot * d, d).copy_from(&v);
    }
    Ok(SystemModalState { omega2, phi })
}

/// Unit Euclidean norm, sign chosen so the largest-magnitude component is positive.
pub fn normalize_mode(v: &mut DVector<f64>) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    *v /= norm;
    let amax = v.amax();
    let lead = v
        .iter()
        .copied()
        .find(|x| x.abs() >= amax * (1.0 - 1e-12))
        .unwrap_or(0.0);
    if lead < 0.0 {
        v.neg_mut();
    }
}

/// Convenience wrapper returning `(K(θ), M)` residual norms for an eigen state.
pub fn eigen_residuals(
    model: &StructuralModel,
    theta: &DVector<f64>,
    state: &SystemModalState,
) -> Result<DVector<f64>> {
    model.eigen_residuals(theta, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn proportional_stiffness_gives_constant_eigenvalues() {
        let mass = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.5, 0.1, 0.0, 0.1, 1.0]);
        let model =
            StructuralModel::new(mass.clone(), DMatrix::zeros(3, 3), vec![mass * 4.0]).unwrap();
        let st = eigen_solve(&model, &DVector::from_element(1, 1.0), 3).unwrap();
        for w in st.omega2.iter() {
            assert!((w - 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn modes_are_unit_norm_with_positive_lead() {
        let mass = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0, 3.0]));
        let k = DMatrix::from_row_slice(3, 3, &[4.0, -2.0, 0.0, -2.0, 5.0, -1.0, 0.0, -1.0, 2.0]);
        let model = StructuralModel::new(mass, DMatrix::zeros(3, 3), vec![k]).unwrap();
        let st = eigen_solve(&model, &DVector::from_element(1, 1.0), 3).unwrap();
        for i in 0..3 {
            let v = st.mode(i, 3);
            assert!((v.norm() - 1.0).abs() < 1e-12);
            let imax = v.iamax();
            assert!(v[imax] > 0.0);
        }
        assert!(st.omega2[0] <= st.omega2[1] && st.omega2[1] <= st.omega2[2]);
    }

    #[test]
    fn rejects_bad_mode_count() {
        let model = StructuralModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            vec![DMatrix::identity(2, 2)],
        )
        .unwrap();
        assert!(matches!(
            eigen_solve(&model, &DVector::from_element(1, 1.0), 3),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            eigen_solve(&model, &DVector::from_element(1, 1.0), 0),
            Err(Error::Config(_))
        ));
    }
}
