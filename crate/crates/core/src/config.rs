use serde::{Deserialize, Serialize};

use crate::dataset::ShapeNormalization;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Calibration,
    Monitoring,
}

/// Hyper-prior placed on the ARD variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HyperVariant {
    /// Exponential prior on the variances `α`, rate `λ` learned.
    #[default]
    VarianceExponential,
    /// Exponential prior on the precisions `1/α`; `α = B + κ`.
    PrecisionExponential { kappa: f64 },
}

/// Hyper-parameters held constant instead of being learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FixedHypers {
    pub beta: Option<f64>,
    pub eta: Option<f64>,
    /// Applied to every mode.
    pub rho: Option<f64>,
    /// Normalized frequency precision `φi = ρi Σr ω̂⁴ri / q`, applied to every mode.
    pub phi: Option<f64>,
    /// `Some(0.0)` reproduces classic sparse Bayesian learning.
    pub lambda: Option<f64>,
}

/// Starting values for `η` and `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// `η̄ = (sqm − 2)/‖Ψ̂‖²`, `ρ̄i = (q − 2)/Σr ω̂⁴ri`.
    #[default]
    Prior,
    /// The closed-form updates evaluated at the initial `Φ` and `ω²` (segment means).
    DataFit,
}

/// Multipliers on the default initial values of `β`, `η` and `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitScale {
    pub beta: f64,
    pub eta: f64,
    pub rho: f64,
}

impl Default for InitScale {
    fn default() -> Self {
        Self {
            beta: 1.0,
            eta: 1.0,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub mode: Mode,
    pub hyper_variant: HyperVariant,
    pub alpha_min: f64,
    pub tol_theta: f64,
    pub tol_log_alpha: f64,
    pub max_iterations: usize,
    /// Gamma shape for `β`.
    pub a0: f64,
    /// Gamma rate for `β`; `None` picks 1.0 in calibration and 0.1 in monitoring.
    pub b0: Option<f64>,
    pub fix_hypers: FixedHypers,
    /// ARD variance that effectively removes the sparsity prior during calibration.
    pub alpha_init_large: f64,
    pub init_scale: InitScale,
    /// `None` picks `Prior` in calibration and `DataFit` in monitoring.
    pub init_strategy: Option<InitStrategy>,
    /// Model matrices are divided by this before inference, so `β` is a precision on
    /// residual forces measured in this unit (1e6: MN and MN/m).
    pub force_unit: f64,
    pub eta_max: f64,
    pub rho_max: f64,
    /// Completed sweeps before any ARD component may be pruned.
    pub min_sweeps_before_pruning: usize,
    pub normalization: ShapeNormalization,
    /// Assemble and invert the joint Hessian at the MAP.
    pub full_covariance: bool,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Calibration,
            hyper_variant: HyperVariant::VarianceExponential,
            alpha_min: 1e-9,
            tol_theta: 1e-3,
            tol_log_alpha: 5e-3,
            max_iterations: 2000,
            a0: 1.0,
            b0: None,
            fix_hypers: FixedHypers::default(),
            alpha_init_large: 1e9,
            init_scale: InitScale::default(),
            init_strategy: None,
            force_unit: 1e6,
            eta_max: 1e12,
            rho_max: 1e12,
            min_sweeps_before_pruning: 2,
            normalization: ShapeNormalization::PerMode,
            full_covariance: true,
        }
    }
}

impl FixedHypers {
    pub fn rho_fixed(&self) -> bool {
        self.rho.is_some() || self.phi.is_some()
    }
}

impl AlgorithmConfig {
    pub fn calibration() -> Self {
        Self::default()
    }

    pub fn monitoring() -> Self {
        Self {
            mode: Mode::Monitoring,
            ..Self::default()
        }
    }

    pub fn b0(&self) -> f64 {
        self.b0.unwrap_or(match self.mode {
            Mode::Calibration => 1.0,
            Mode::Monitoring => 0.1,
        })
    }

    pub fn init_strategy(&self) -> InitStrategy {
        self.init_strategy.unwrap_or(match self.mode {
            Mode::Calibration => InitStrategy::Prior,
            Mode::Monitoring => InitStrategy::DataFit,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        pos("alpha_min", self.alpha_min)?;
        pos("tol_theta", self.tol_theta)?;
        pos("tol_log_alpha", self.tol_log_alpha)?;
        pos("b0", self.b0())?;
        pos("alpha_init_large", self.alpha_init_large)?;
        pos("force_unit", self.force_unit)?;
        pos("eta_max", self.eta_max)?;
        pos("rho_max", self.rho_max)?;
        pos("init_scale.beta", self.init_scale.beta)?;
        pos("init_scale.eta", self.init_scale.eta)?;
        pos("init_scale.rho", self.init_scale.rho)?;
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !self.a0.is_finite() {
            return Err(Error::Config("a0 must be finite".into()));
        }
        if let HyperVariant::PrecisionExponential { kappa } = self.hyper_variant {
            if !(kappa.is_finite() && kappa >= 0.0) {
                return Err(Error::Config(format!(
                    "kappa must be nonnegative, got {kappa}"
                )));
            }
        }
        let f = &self.fix_hypers;
        if f.rho.is_some() && f.phi.is_some() {
            return Err(Error::Config("fix either rho or phi, not both".into()));
        }
        for (name, v) in [
            ("beta", f.beta),
            ("eta", f.eta),
            ("rho", f.rho),
            ("phi", f.phi),
        ] {
            if let Some(v) = v {
                pos(&format!("fixed {name}"), v)?;
            }
        }
        if let Some(l) = f.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!(
                    "fixed lambda must be nonnegative, got {l}"
                )));
            }
        }
        Ok(())
    }
}
