//! Linear structural model `K(θ) = K0 + Σ θj Kj` and the stacked-mode matrices
//! built from it.
//!
//! Mode shapes are always stored as one stacked vector of length `d·m`, mode-major:
//! the `d` components of mode 1 come first, then mode 2, and so on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking symmetry of input and assembled matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralModel {
    mass: DMatrix<f64>,
    k0: DMatrix<f64>,
    ksub: Vec<DMatrix<f64>>,
}

/// Dimensionless stiffness scaling parameters, one per substructure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StiffnessParams(pub DVector<f64>);

impl StiffnessParams {
    pub fn new(theta: DVector<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("stiffness parameters must be finite".into()));
        }
        Ok(Self(theta))
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(theta))
    }

    pub fn uniform(n: usize, value: f64) -> Self {
        Self(DVector::from_element(n, value))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// System natural frequencies (squared) and stacked mode shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModalState {
    pub omega2: DVector<f64>,
    pub phi: DVector<f64>,
}

impl SystemModalState {
    pub fn mode_count(&self) -> usize {
        self.omega2.len()
    }

    pub fn mode(&self, i: usize, d: usize) -> DVector<f64> {
        mode_block(&self.phi, i, d)
    }
}

/// Copy of the `i`-th `d`-block of a stacked mode-shape vector.
pub fn mode_block(phi: &DVector<f64>, i: usize, d: usize) -> DVector<f64> {
    phi.rows(i * d, d).into_owned()
}

pub(crate) fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).amax() / scale
}

impl StructuralModel {
    /// Builds a model, checking square shapes, symmetry and a positive-definite mass matrix.
    pub fn new(mass: DMatrix<f64>, k0: DMatrix<f64>, ksub: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = mass.nrows();
        if d == 0 {
            return Err(Error::Config(
                "model needs at least one degree of freedom".into(),
            ));
        }
        if ksub.is_empty() {
            return Err(Error::Config(
                "model needs at least one substructure".into(),
            ));
        }
        let square = |m: &DMatrix<f64>| m.nrows() == d && m.ncols() == d;
        if !square(&mass) || !square(&k0) || !ksub.iter().all(square) {
            return Err(Error::Config(format!("all model matrices must be {d}x{d}")));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&mass) || !finite(&k0) || !ksub.iter().all(finite) {
            return Err(Error::Model("model matrices must be finite".into()));
        }
        if relative_asymmetry(&mass) > SYMMETRY_TOL {
            return Err(Error::Model("mass matrix is not symmetric".into()));
        }
        if relative_asymmetry(&k0) > SYMMETRY_TOL {
            return Err(Error::Model("base stiffness K0 is not symmetric".into()));
        }
        for (j, kj) in ksub.iter().enumerate() {
            if relative_asymmetry(kj) > SYMMETRY_TOL {
                return Err(Error::Model(format!(
                    "substructure stiffness K{} is not symmetric",
                    j + 1
                )));
            }
        }
        if mass.clone().cholesky().is_none() {
            return Err(Error::Model("mass matrix is not positive definite".into()));
        }
        Ok(Self { mass, k0, ksub })
    }

    pub fn dofs(&self) -> usize {
        self.mass.nrows()
    }

    pub fn substructures(&self) -> usize {
        self.ksub.len()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }

    pub fn ksub(&self) -> &[DMatrix<f64>] {
        &self.ksub
    }

    /// Same model with every matrix divided by `unit`. Natural frequencies are unchanged.
    pub fn rescaled(&self, unit: f64) -> Self {
        let s = 1.0 / unit;
        Self {
            mass: &self.mass * s,
            k0: &self.k0 * s,
            ksub: self.ksub.iter().map(|k| k * s).collect(),
        }
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.substructures() {
            return Err(Error::Config(format!(
                "expected {} stiffness parameters, got {}",
                self.substructures(),
                theta.len()
            )));
        }
        Ok(())
    }

    fn check_phi(&self, phi: &DVector<f64>, m: usize) -> Result<()> {
        if phi.len() != self.dofs() * m {
            return Err(Error::Config(format!(
                "stacked mode shapes have {} components, expected d·m = {}",
                phi.len(),
                self.dofs() * m
            )));
        }
        Ok(())
    }

    fn modes_in(&self, phi: &DVector<f64>) -> Result<usize> {
        let d = self.dofs();
        if !phi.len().is_multiple_of(d) {
            return Err(Error::Config(format!(
                "stacked mode-shape length {} is not a multiple of d = {d}",
                phi.len()
            )));
        }
        Ok(phi.len() / d)
    }

    /// `K0 + Σ θj Kj`.
    pub fn assemble_stiffness(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let mut k = self.k0.clone();
        for (kj, &t) in self.ksub.iter().zip(theta.iter()) {
            k.zip_apply(kj, |a, b| *a += t * b);
        }
        if relative_asymmetry(&k) > SYMMETRY_TOL {
            return Err(Error::Model(
                "assembled stiffness matrix is not symmetric".into(),
            ));
        }
        Ok(k)
    }

    /// `(d·m)×n` matrix whose block (i, j) is `Kj Φi`.
    pub fn build_h(&self, phi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dofs();
        let m = self.modes_in(phi)?;
        let mut h = DMatrix::zeros(d * m, self.substructures());
        for i in 0..m {
            let phi_i = phi.rows(i * d, d);
            for (j, kj) in self.ksub.iter().enumerate() {
                h.view_mut((i * d, j), (d, 1)).copy_from(&(kj * phi_i));
            }
        }
        Ok(h)
    }

    /// Stacked vector whose block i is `(ωi² M − K0) Φi`.
    pub fn build_b(&self, omega2: &DVector<f64>, phi: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dofs();
        let m = omega2.len();
        self.check_phi(phi, m)?;
        let mut b = DVector::zeros(d * m);
        for i in 0..m {
            let phi_i = phi.rows(i * d, d);
            let blk = &self.mass * phi_i * omega2[i] - &self.k0 * phi_i;
            b.rows_mut(i * d, d).copy_from(&blk);
        }
        Ok(b)
    }

    /// `K(θ) − ω² M`.
    pub fn dynamic_stiffness(&self, k: &DMatrix<f64>, omega2: f64) -> DMatrix<f64> {
        k - &self.mass * omega2
    }

    /// Block-diagonal `(d·m)×(d·m)` matrix with blocks `(K(θ) − ωi² M)²`.
    pub fn build_f(&self, theta: &DVector<f64>, omega2: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dofs();
        let m = omega2.len();
        let k = self.assemble_stiffness(theta)?;
        let mut f = DMatrix::zeros(d * m, d * m);
        for i in 0..m {
            let di = self.dynamic_stiffness(&k, omega2[i]);
            f.view_mut((i * d, i * d), (d, d)).copy_from(&(&di * &di));
        }
        Ok(f)
    }

    /// Block-diagonal `(d·m)×m` matrix: column i carries `M Φi` in block i.
    pub fn build_g(&self, phi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dofs();
        let m = self.modes_in(phi)?;
        let mut g = DMatrix::zeros(d * m, m);
        for i in 0..m {
            let mphi = &self.mass * phi.rows(i * d, d);
            g.view_mut((i * d, i), (d, 1)).copy_from(&mphi);
        }
        Ok(g)
    }

    /// Stacked vector whose block i is `K(θ) Φi`.
    pub fn build_c(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dofs();
        let m = self.modes_in(phi)?;
        let k = self.assemble_stiffness(theta)?;
        let mut c = DVector::zeros(d * m);
        for i in 0..m {
            c.rows_mut(i * d, d).copy_from(&(&k * phi.rows(i * d, d)));
        }
        Ok(c)
    }

    /// Euclidean norms of the eigen-equation errors `(K(θ) − ωi² M) Φi`.
    pub fn eigen_residuals(
        &self,
        theta: &DVector<f64>,
        state: &SystemModalState,
    ) -> Result<DVector<f64>> {
        let d = self.dofs();
        let m = state.mode_count();
        self.check_phi(&state.phi, m)?;
        let k = self.assemble_stiffness(theta)?;
        Ok(DVector::from_iterator(
            m,
            (0..m).map(|i| {
                (self.dynamic_stiffness(&k, state.omega2[i]) * state.phi.rows(i * d, d)).norm()
            }),
        ))
    }
}
