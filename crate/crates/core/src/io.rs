//! Model and dataset files, result tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{omega2_to_hz, DatasetFile, ModalDataset, ShapeNormalization};
use crate::error::{Error, Result};
use crate::inference::InferenceResult;
use crate::model::StructuralModel;
use crate::synthetic::{shear_building_model, ShearBuildingSpec};

/// Either explicit matrices (SI units, row-major nested arrays) or a shear-building
/// shorthand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    ShearBuilding {
        shear_building: ShearBuildingSpec,
    },
    Matrices {
        d: usize,
        n: usize,
        #[serde(rename = "M")]
        mass: Vec<Vec<f64>>,
        #[serde(rename = "K0")]
        k0: Vec<Vec<f64>>,
        #[serde(rename = "Ksub")]
        ksub: Vec<Vec<Vec<f64>>>,
    },
}

fn matrix(rows: &[Vec<f64>], d: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{what} must be {d}×{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl ModelFile {
    pub fn into_model(self) -> Result<StructuralModel> {
        match self {
            ModelFile::ShearBuilding { shear_building } => shear_building_model(&shear_building),
            ModelFile::Matrices {
                d,
                n,
                mass,
                k0,
                ksub,
            } => {
                if ksub.len() != n {
                    return Err(Error::Config(format!(
                        "declared n = {n} but {} substructure matrices given",
                        ksub.len()
                    )));
                }
                let ksub = ksub
                    .iter()
                    .enumerate()
                    .map(|(j, k)| matrix(k, d, &format!("Ksub[{j}]")))
                    .collect::<Result<Vec<_>>>()?;
                StructuralModel::new(matrix(&mass, d, "M")?, matrix(&k0, d, "K0")?, ksub)
            }
        }
    }

    pub fn from_model(model: &StructuralModel) -> Self {
        ModelFile::Matrices {
            d: model.dofs(),
            n: model.substructures(),
            mass: rows(model.mass()),
            k0: rows(model.k0()),
            ksub: model.ksub().iter().map(rows).collect(),
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<StructuralModel> {
    read_json::<ModelFile>(path)?.into_model()
}

pub fn load_dataset(path: &Path, normalization: ShapeNormalization) -> Result<ModalDataset> {
    read_json::<DatasetFile>(path)?.into_dataset(normalization)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

/// `substructure_id,theta,std,cov_percent,pruned`.
pub fn write_theta_csv<W: Write>(result: &InferenceResult, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["substructure_id", "theta", "std", "cov_percent", "pruned"])?;
    let std = result.theta_std();
    for j in 0..result.theta().len() {
        let pruned = result.state_map.fixed_set.contains(&j);
        out.serialize((
            j + 1,
            result.theta()[j],
            std[j],
            100.0 * result.cov_theta[j],
            pruned,
        ))?;
    }
    out.flush()?;
    Ok(())
}

/// Square matrix with a header row of parameter names and the name in the first column.
pub fn write_matrix_csv<W: Write>(names: &[String], m: &DMatrix<f64>, w: W) -> Result<()> {
    if names.len() != m.nrows() || m.nrows() != m.ncols() {
        return Err(Error::Config(
            "covariance names do not match the matrix".into(),
        ));
    }
    let mut out = csv_writer(w);
    let mut header = vec!["parameter".to_string()];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(m.row(i).iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn theta_names(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("theta_{j}")).collect()
}

pub fn write_theta_covariance_csv<W: Write>(result: &InferenceResult, w: W) -> Result<()> {
    write_matrix_csv(&theta_names(result.theta().len()), &result.theta_cov, w)
}

/// `parameter,map,cov_percent` for `β`, `η` and each `ρi`, with c.o.v. of the
/// conditional Laplace approximation.
pub fn write_precisions_csv<W: Write>(result: &InferenceResult, w: W) -> Result<()> {
    let st = &result.state_map;
    let pc = &result.precision_cov;
    let mut out = csv_writer(w);
    out.write_record(["parameter", "map", "cov_percent"])?;
    out.serialize(("beta", st.beta, 100.0 * pc.beta))?;
    out.serialize(("eta", st.eta, 100.0 * pc.eta))?;
    for (i, (&r, &c)) in st.rho.iter().zip(&pc.rho).enumerate() {
        out.serialize((format!("rho_{}", i + 1), r, 100.0 * c))?;
    }
    out.flush()?;
    Ok(())
}

/// `mode,omega2_rad2_per_s2,freq_hz` of the system modal parameters at the MAP.
pub fn write_modal_csv<W: Write>(result: &InferenceResult, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["mode", "omega2_rad2_per_s2", "freq_hz"])?;
    for (i, &w2) in result.state_map.omega2.iter().enumerate() {
        out.serialize((i + 1, w2, omega2_to_hz(w2)))?;
    }
    out.flush()?;
    Ok(())
}

/// `sweep,objective,beta,theta_1..,alpha_1..`.
pub fn write_trace_csv<W: Write>(result: &InferenceResult, w: W) -> Result<()> {
    let n = result.theta().len();
    let mut out = csv_writer(w);
    let mut header = vec!["sweep".to_string(), "objective".into(), "beta".into()];
    header.extend(theta_names(n));
    header.extend((1..=n).map(|j| format!("alpha_{j}")));
    out.write_record(&header)?;
    for k in 0..result.iterations.min(result.objective_trace.len()) {
        let mut row = vec![
            (k + 1).to_string(),
            result.objective_trace[k].to_string(),
            result.beta_trace[k].to_string(),
        ];
        row.extend(result.theta_trace[k].iter().map(|v| v.to_string()));
        row.extend(result.alpha_trace[k].iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `substructure_id,sweep,alpha`.
pub fn write_pruning_csv<W: Write>(result: &InferenceResult, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["substructure_id", "sweep", "alpha"])?;
    for e in &result.pruning_log {
        out.serialize((e.substructure + 1, e.sweep, e.alpha))?;
    }
    out.flush()?;
    Ok(())
}
