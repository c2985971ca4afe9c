//! Hierarchical sparse Bayesian learning of substructure stiffness changes from
//! incomplete, noisy modal data.

pub mod config;
pub mod damage;
pub mod dataset;
pub mod eigen;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod model;
pub mod objective;
pub mod state;
pub mod synthetic;
pub mod uncertainty;
pub mod updates;

pub use config::{AlgorithmConfig, FixedHypers, HyperVariant, InitScale, InitStrategy, Mode};
pub use damage::{
    build_report, damage_probability, stiffness_ratios, DamageReport, VariancePairing,
};
pub use dataset::{ModalDataset, Segment, ShapeNormalization};
pub use error::{Error, Result};
pub use inference::{run_calibration, run_monitoring, InferenceResult};
pub use model::{StiffnessParams, StructuralModel, SystemModalState};
pub use state::{initialize, InferenceState};
