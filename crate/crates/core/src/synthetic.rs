//! Shear-building models and noisy multi-segment modal data.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ModalDataset, Segment, ShapeNormalization};
use crate::eigen::eigen_solve;
use crate::error::{Error, Result};
use crate::model::{StiffnessParams, StructuralModel};

/// One value for every story, or one per story.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStory {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerStory {
    fn expand(&self, stories: usize, what: &str) -> Result<Vec<f64>> {
        let v = match self {
            PerStory::Uniform(x) => vec![*x; stories],
            PerStory::Each(v) if v.len() == stories => v.clone(),
            PerStory::Each(v) => {
                return Err(Error::Config(format!(
                    "{what}: {} values given for {stories} stories",
                    v.len()
                )))
            }
        };
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(format!("{what} must be positive")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShearBuildingSpec {
    pub stories: usize,
    /// kg
    pub floor_mass: PerStory,
    /// N/m
    pub story_stiffness: PerStory,
}

impl ShearBuildingSpec {
    /// Ten stories, 100 t floors, 176.729 MN/m stories.
    pub fn ten_story() -> Self {
        Self {
            stories: 10,
            floor_mass: PerStory::Uniform(100e3),
            story_stiffness: PerStory::Uniform(176.729e6),
        }
    }
}

/// Lumped-mass shear building with one substructure per story and `K0 = 0`.
/// Story `j` connects floor `j − 1` (the ground for `j = 0`) to floor `j`.
pub fn shear_building_model(spec: &ShearBuildingSpec) -> Result<StructuralModel> {
    let d = spec.stories;
    if d == 0 {
        return Err(Error::Config(
            "a shear building needs at least one story".into(),
        ));
    }
    let masses = spec.floor_mass.expand(d, "floor_mass")?;
    let stiff = spec.story_stiffness.expand(d, "story_stiffness")?;
    let mass = DMatrix::from_diagonal(&DVector::from_vec(masses));
    let ksub = (0..d)
        .map(|j| {
            let k = stiff[j];
            let mut kj = DMatrix::zeros(d, d);
            kj[(j, j)] = k;
            if j > 0 {
                kj[(j - 1, j - 1)] = k;
                kj[(j - 1, j)] = -k;
                kj[(j, j - 1)] = -k;
            }
            kj
        })
        .collect();
    StructuralModel::new(mass, DMatrix::zeros(d, d), ksub)
}

/// `θj ← θj (1 − lossj)` for every entry of `pattern` (0-based substructure → loss).
pub fn apply_damage(
    theta: &StiffnessParams,
    pattern: &BTreeMap<usize, f64>,
) -> Result<StiffnessParams> {
    let mut out = theta.as_vector().clone();
    for (&j, &loss) in pattern {
        if j >= out.len() {
            return Err(Error::Config(format!(
                "damage pattern names substructure {j}, model has {}",
                out.len()
            )));
        }
        if !(0.0..1.0).contains(&loss) {
            return Err(Error::Config(format!(
                "stiffness loss must lie in [0, 1), got {loss}"
            )));
        }
        out[j] *= 1.0 - loss;
    }
    StiffnessParams::new(out)
}

/// Which frequency quantity receives the relative noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    Omega,
    #[default]
    Omega2,
}

/// Reference magnitude for mode-shape noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeNoiseScale {
    /// Standard deviation `shape_cov` times the RMS component of the mode.
    #[default]
    Rms,
    /// Standard deviation `shape_cov` times each component's own magnitude.
    PerComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub freq_cov: f64,
    pub shape_cov: f64,
    pub seed: u64,
    pub noise_on: NoiseTarget,
    pub shape_scale: ShapeNoiseScale,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            freq_cov: 0.01,
            shape_cov: 0.01,
            seed: 0,
            noise_on: NoiseTarget::Omega2,
            shape_scale: ShapeNoiseScale::Rms,
        }
    }
}

impl NoiseSpec {
    pub fn noise_free() -> Self {
        Self {
            freq_cov: 0.0,
            shape_cov: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Generator for segment `r`, mode `i`. Streams are disjoint, so any subset of
/// segments or modes sees the same draws.
pub fn noise_rng(seed: u64, r: usize, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((r as u64) << 32) | i as u64);
    rng
}

/// Exact eigenpairs of `(K(θ), M)` perturbed independently for each of `q` segments.
///
/// Per segment and mode the generator draws one frequency deviate and then `d`
/// mode-shape deviates (one per DOF, observed or not).
pub fn simulate_modal_data(
    model: &StructuralModel,
    theta: &StiffnessParams,
    m: usize,
    q: usize,
    observed_dofs: &[usize],
    noise: &NoiseSpec,
    normalization: ShapeNormalization,
) -> Result<ModalDataset> {
    if q < 3 {
        return Err(Error::Config(format!(
            "at least three data segments are required (q ≥ 3), got {q}"
        )));
    }
    if !(noise.freq_cov >= 0.0 && noise.shape_cov >= 0.0) {
        return Err(Error::Config(
            "noise c.o.v. values must be nonnegative".into(),
        ));
    }
    let d = model.dofs();
    if let Some(&bad) = observed_dofs.iter().find(|&&k| k >= d) {
        return Err(Error::Config(format!(
            "observed DOF {bad} outside a {d}-DOF model"
        )));
    }
    let exact = eigen_solve(model, theta.as_vector(), m)?;
    let mut segments = Vec::with_capacity(q);
    for r in 0..q {
        let mut omega2 = Vec::with_capacity(m);
        let mut shapes = Vec::with_capacity(m);
        for i in 0..m {
            let mut rng = noise_rng(noise.seed, r, i);
            let e: f64 = rng.sample(StandardNormal);
            let w2 = exact.omega2[i];
            omega2.push(match noise.noise_on {
                NoiseTarget::Omega2 => w2 * (1.0 + noise.freq_cov * e),
                NoiseTarget::Omega => (w2.sqrt() * (1.0 + noise.freq_cov * e)).powi(2),
            });
            let phi = exact.mode(i, d);
            let rms = phi.norm() / (d as f64).sqrt();
            let noisy: Vec<f64> = phi
                .iter()
                .map(|&c| {
                    let e: f64 = rng.sample(StandardNormal);
                    let scale = match noise.shape_scale {
                        ShapeNoiseScale::Rms => rms,
                        ShapeNoiseScale::PerComponent => c.abs(),
                    };
                    c + noise.shape_cov * scale * e
                })
                .collect();
            shapes.push(observed_dofs.iter().map(|&k| noisy[k]).collect());
        }
        segments.push(Segment {
            omega2,
            mode_shapes: shapes,
        });
    }
    ModalDataset::new(observed_dofs.to_vec(), segments, normalization)
}

/// 0-based indices of the partial sensor layout: floors 1, 4, 5, 7 and 10.
pub const PARTIAL_SENSORS_10: [usize; 5] = [0, 3, 4, 6, 9];
