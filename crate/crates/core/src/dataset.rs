//! Identified modal data: `q` segments of `m` squared frequencies and `m` partial
//! mode shapes observed at `s` model DOFs.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How identified mode shapes are scaled at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeNormalization {
    /// Every segment/mode shape scaled to unit norm, signs aligned with segment 1.
    #[default]
    PerMode,
    /// `PerMode`, then the whole stacked vector rescaled to unit norm.
    Global,
    /// Shapes kept exactly as given.
    AsGiven,
}

/// One identified data segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub omega2: Vec<f64>,
    /// One entry per mode, each with `s` sensor components.
    pub mode_shapes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalDataset {
    q: usize,
    m: usize,
    observed_dofs: Vec<usize>,
    /// Segment-major: `omega_hat2[r*m + i]`.
    omega_hat2: DVector<f64>,
    /// Segment-major, then mode, then sensor: `psi_hat[(r*m + i)*s + k]`.
    psi_hat: DVector<f64>,
}

impl ModalDataset {
    pub fn new(
        observed_dofs: Vec<usize>,
        segments: Vec<Segment>,
        normalization: ShapeNormalization,
    ) -> Result<Self> {
        let q = segments.len();
        if q == 0 {
            return Err(Error::Data("dataset has no segments".into()));
        }
        let m = segments[0].omega2.len();
        if m == 0 {
            return Err(Error::Data("dataset has no modes".into()));
        }
        let s = observed_dofs.len();
        if s == 0 {
            return Err(Error::Data("dataset has no observed DOFs".into()));
        }
        if observed_dofs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(
                "observed DOFs must be strictly increasing".into(),
            ));
        }
        let mut omega_hat2 = DVector::zeros(q * m);
        let mut psi_hat = DVector::zeros(q * m * s);
        for (r, seg) in segments.iter().enumerate() {
            if seg.omega2.len() != m || seg.mode_shapes.len() != m {
                return Err(Error::Data(format!(
                    "segment {} does not carry {m} modes",
                    r + 1
                )));
            }
            for i in 0..m {
                let w = seg.omega2[i];
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::Data(format!(
                        "segment {} mode {}: squared frequency must be positive, got {w}",
                        r + 1,
                        i + 1
                    )));
                }
                omega_hat2[r * m + i] = w;
                let shape = &seg.mode_shapes[i];
                if shape.len() != s {
                    return Err(Error::Data(format!(
                        "segment {} mode {}: expected {s} mode-shape components, got {}",
                        r + 1,
                        i + 1,
                        shape.len()
                    )));
                }
                if shape.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "segment {} mode {}: non-finite mode shape",
                        r + 1,
                        i + 1
                    )));
                }
                psi_hat.rows_mut((r * m + i) * s, s).copy_from_slice(shape);
            }
        }
        let mut ds = Self {
            q,
            m,
            observed_dofs,
            omega_hat2,
            psi_hat,
        };
        ds.normalize(normalization)?;
        Ok(ds)
    }

    fn normalize(&mut self, how: ShapeNormalization) -> Result<()> {
        if how == ShapeNormalization::AsGiven {
            return Ok(());
        }
        let (q, m, s) = (self.q, self.m, self.sensors());
        for i in 0..m {
            for r in 0..q {
                let off = (r * m + i) * s;
                let norm = self.psi_hat.rows(off, s).norm();
                if norm == 0.0 {
                    return Err(Error::Data(format!(
                        "segment {} mode {}: zero mode shape",
                        r + 1,
                        i + 1
                    )));
                }
                self.psi_hat.rows_mut(off, s).unscale_mut(norm);
                if r > 0 {
                    let reference = self.psi_hat.rows(i * s, s).into_owned();
                    if self.psi_hat.rows(off, s).dot(&reference) < 0.0 {
                        self.psi_hat.rows_mut(off, s).neg_mut();
                    }
                }
            }
        }
        if how == ShapeNormalization::Global {
            let norm = self.psi_hat.norm();
            self.psi_hat.unscale_mut(norm);
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.q
    }

    pub fn modes(&self) -> usize {
        self.m
    }

    pub fn sensors(&self) -> usize {
        self.observed_dofs.len()
    }

    pub fn observed_dofs(&self) -> &[usize] {
        &self.observed_dofs
    }

    pub fn omega_hat2(&self) -> &DVector<f64> {
        &self.omega_hat2
    }

    pub fn psi_hat(&self) -> &DVector<f64> {
        &self.psi_hat
    }

    pub fn omega_hat2_at(&self, r: usize, i: usize) -> f64 {
        self.omega_hat2[r * self.m + i]
    }

    pub fn psi_at(&self, r: usize, i: usize) -> nalgebra::DVectorView<'_, f64> {
        let s = self.sensors();
        self.psi_hat.rows((r * self.m + i) * s, s)
    }

    /// Checks that every observed DOF exists in a `d`-DOF model.
    pub fn check_against(&self, d: usize) -> Result<()> {
        if let Some(&bad) = self.observed_dofs.iter().find(|&&k| k >= d) {
            return Err(Error::Config(format!(
                "observed DOF index {bad} outside a {d}-DOF model"
            )));
        }
        Ok(())
    }

    /// Segment-mean of the identified squared frequencies, one per mode.
    pub fn mean_omega2(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.m,
            (0..self.m).map(|i| {
                (0..self.q).map(|r| self.omega_hat2_at(r, i)).sum::<f64>() / self.q as f64
            }),
        )
    }

    /// `Σr ω̂⁴_{r,i}` per mode.
    pub fn sum_omega4(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.m,
            (0..self.m).map(|i| (0..self.q).map(|r| self.omega_hat2_at(r, i).powi(2)).sum()),
        )
    }

    /// `Σr (ω̂²_{r,i} − ωi²)²` per mode.
    pub fn frequency_deviation(&self, omega2: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.m,
            (0..self.m).map(|i| {
                (0..self.q)
                    .map(|r| (self.omega_hat2_at(r, i) - omega2[i]).powi(2))
                    .sum()
            }),
        )
    }

    /// `Σr Γᵀ Ψ̂_{r,i}` for mode `i`, a `d`-vector.
    pub fn lifted_sum(&self, i: usize, d: usize) -> DVector<f64> {
        let mut out = DVector::zeros(d);
        for r in 0..self.q {
            let psi = self.psi_at(r, i);
            for (k, &dof) in self.observed_dofs.iter().enumerate() {
                out[dof] += psi[k];
            }
        }
        out
    }

    /// Stacked `Γᵀ Ψ̂` (length `d·m`).
    pub fn gamma_t_psi(&self, d: usize) -> DVector<f64> {
        let mut out = DVector::zeros(d * self.m);
        for i in 0..self.m {
            out.rows_mut(i * d, d).copy_from(&self.lifted_sum(i, d));
        }
        out
    }

    /// Diagonal of `ΓᵀΓ` restricted to one mode block: `q` on observed DOFs, 0 elsewhere.
    pub fn gamma_t_gamma_diag(&self, d: usize) -> DVector<f64> {
        let mut diag = DVector::zeros(d);
        for &dof in &self.observed_dofs {
            diag[dof] = self.q as f64;
        }
        diag
    }

    /// `Γ Φ`: the stacked prediction of every segment's observed shape.
    pub fn select(&self, phi: &DVector<f64>, d: usize) -> DVector<f64> {
        let s = self.sensors();
        let mut out = DVector::zeros(self.q * self.m * s);
        for r in 0..self.q {
            for i in 0..self.m {
                for (k, &dof) in self.observed_dofs.iter().enumerate() {
                    out[(r * self.m + i) * s + k] = phi[i * d + dof];
                }
            }
        }
        out
    }

    /// `‖Ψ̂ − ΓΦ‖²`.
    pub fn shape_misfit(&self, phi: &DVector<f64>, d: usize) -> f64 {
        (&self.psi_hat - self.select(phi, d)).norm_squared()
    }

    /// Serializable form with segment-wise layout.
    pub fn to_file(&self) -> DatasetFile {
        let s = self.sensors();
        let segments = (0..self.q)
            .map(|r| SegmentFile {
                omega2: Some((0..self.m).map(|i| self.omega_hat2_at(r, i)).collect()),
                freq_hz: None,
                mode_shapes: (0..self.m)
                    .map(|i| self.psi_at(r, i).iter().copied().collect())
                    .collect(),
            })
            .collect();
        DatasetFile {
            q: self.q,
            m: self.m,
            s,
            observed_dofs: self.observed_dofs.clone(),
            units: FrequencyUnits::Rad2,
            segments,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnits {
    /// Squared circular frequencies in rad²/s², read from `omega2`.
    #[default]
    #[serde(alias = "rad2_per_s2")]
    Rad2,
    /// Natural frequencies in Hz, read from `freq_hz` (or `omega2` as a fallback).
    Hz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_hz: Option<Vec<f64>>,
    pub mode_shapes: Vec<Vec<f64>>,
}

/// On-disk modal dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub q: usize,
    pub m: usize,
    pub s: usize,
    pub observed_dofs: Vec<usize>,
    #[serde(default)]
    pub units: FrequencyUnits,
    pub segments: Vec<SegmentFile>,
}

pub fn hz_to_omega2(f: f64) -> f64 {
    (2.0 * PI * f).powi(2)
}

pub fn omega2_to_hz(w2: f64) -> f64 {
    w2.max(0.0).sqrt() / (2.0 * PI)
}

impl DatasetFile {
    pub fn into_dataset(self, normalization: ShapeNormalization) -> Result<ModalDataset> {
        if self.segments.len() != self.q {
            return Err(Error::Data(format!(
                "declared q = {} but {} segments given",
                self.q,
                self.segments.len()
            )));
        }
        if self.observed_dofs.len() != self.s {
            return Err(Error::Data(format!(
                "declared s = {} but {} observed DOFs given",
                self.s,
                self.observed_dofs.len()
            )));
        }
        let mut segments = Vec::with_capacity(self.q);
        for (r, seg) in self.segments.into_iter().enumerate() {
            let omega2 = match self.units {
                FrequencyUnits::Rad2 => seg
                    .omega2
                    .ok_or_else(|| Error::Data(format!("segment {} has no omega2", r + 1)))?,
                FrequencyUnits::Hz => seg
                    .freq_hz
                    .or(seg.omega2)
                    .ok_or_else(|| Error::Data(format!("segment {} has no freq_hz", r + 1)))?
                    .into_iter()
                    .map(hz_to_omega2)
                    .collect(),
            };
            if omega2.len() != self.m {
                return Err(Error::Data(format!(
                    "segment {} does not carry m = {} frequencies",
                    r + 1,
                    self.m
                )));
            }
            segments.push(Segment {
                omega2,
                mode_shapes: seg.mode_shapes,
            });
        }
        ModalDataset::new(self.observed_dofs, segments, normalization)
    }
}
