//! Stiffness ratios, damage-probability curves and alarms from a calibration and a
//! monitoring run.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::inference::InferenceResult;

/// Which run's standard deviation is scaled by `1 − f` in the probability denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariancePairing {
    /// `√((1 − f)² σd² + σu²)`
    #[default]
    AsPrinted,
    /// `√((1 − f)² σu² + σd²)`
    Conventional,
}

/// `0, step, 2·step, …` up to and including `fmax` (within rounding).
pub fn f_grid(fmax: f64, fstep: f64) -> Result<Vec<f64>> {
    if !(fstep > 0.0 && fstep.is_finite()) {
        return Err(Error::Config(format!(
            "f step must be positive, got {fstep}"
        )));
    }
    if !(0.0..=1.0).contains(&fmax) {
        return Err(Error::Config(format!(
            "f max must lie in [0, 1], got {fmax}"
        )));
    }
    let count = (fmax / fstep + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| k as f64 * fstep).collect())
}

pub fn default_f_grid() -> Vec<f64> {
    f_grid(0.25, 0.0025).expect("valid constants")
}

fn check_pair(calib: &InferenceResult, monitor: &InferenceResult) -> Result<()> {
    let (nu, nd) = (calib.theta().len(), monitor.theta().len());
    if nu != nd {
        return Err(Error::Config(format!(
            "calibration has {nu} substructures, monitoring has {nd}"
        )));
    }
    Ok(())
}

fn is_pruned(monitor: &InferenceResult, j: usize) -> bool {
    monitor.state_map.fixed_set.contains(&j)
}

/// `θ̃d,j / θ̂u,j`; exactly 1 for components pruned during monitoring.
pub fn stiffness_ratios(
    calib: &InferenceResult,
    monitor: &InferenceResult,
) -> Result<DVector<f64>> {
    check_pair(calib, monitor)?;
    ratios(calib.theta(), monitor.theta(), |j| is_pruned(monitor, j))
}

fn ratios(
    theta_u: &DVector<f64>,
    theta_d: &DVector<f64>,
    pruned: impl Fn(usize) -> bool,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(theta_u.len());
    for j in 0..theta_u.len() {
        if theta_u[j] == 0.0 {
            return Err(Error::Domain(format!("calibrated theta_{} is zero", j + 1)));
        }
        out[j] = if pruned(j) {
            1.0
        } else {
            theta_d[j] / theta_u[j]
        };
    }
    Ok(out)
}

/// Probability that the stiffness loss of one substructure exceeds `f`:
/// `Φ[((1 − f)θu − θd) / √((1 − f)²σa² + σb²)]`, where the pairing picks `(σa, σb)`.
///
/// With zero denominator the curve is a step: 0.5 where the numerator vanishes, 0 or 1
/// elsewhere.
pub fn exceedance_probability(
    theta_u: f64,
    sigma_u: f64,
    theta_d: f64,
    sigma_d: f64,
    f: f64,
    pairing: VariancePairing,
) -> f64 {
    let g = 1.0 - f;
    let num = g * theta_u - theta_d;
    let (sa, sb) = match pairing {
        VariancePairing::AsPrinted => (sigma_d, sigma_u),
        VariancePairing::Conventional => (sigma_u, sigma_d),
    };
    let den = (g * g * sa * sa + sb * sb).sqrt();
    if den == 0.0 {
        return if num == 0.0 {
            0.5
        } else if num > 0.0 {
            1.0
        } else {
            0.0
        };
    }
    Normal::standard().cdf(num / den)
}

/// One curve per substructure over `f_grid`. A component pruned during monitoring is
/// identical to its anchor, so its curve is the zero-variance step.
pub fn damage_probability(
    calib: &InferenceResult,
    monitor: &InferenceResult,
    f_grid: &[f64],
    pairing: VariancePairing,
) -> Result<Vec<Vec<f64>>> {
    check_pair(calib, monitor)?;
    if let Some(f) = f_grid.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Config(format!(
            "f grid values must lie in [0, 1], got {f}"
        )));
    }
    let (su, sd) = (calib.theta_std(), monitor.theta_std());
    let curves = (0..calib.theta().len())
        .map(|j| {
            let tu = calib.theta()[j];
            let pruned = is_pruned(monitor, j);
            let (td, sdj, suj) = if pruned {
                (tu, 0.0, 0.0)
            } else {
                (monitor.theta()[j], sd[j], su[j])
            };
            f_grid
                .iter()
                .map(|&f| exceedance_probability(tu, suj, td, sdj, f, pairing))
                .collect()
        })
        .collect();
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstructureReport {
    /// 1-based.
    pub substructure: usize,
    pub map_ratio: f64,
    pub cov_percent: f64,
    pub pruned: bool,
    pub alarm: bool,
    pub prob_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageReport {
    pub variance_pairing: VariancePairing,
    pub substructures: Vec<SubstructureReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmSummary {
    /// 1-based ids with `map_ratio < 1`.
    pub alarms: Vec<usize>,
    pub map_ratios: Vec<f64>,
    pub pruned: Vec<usize>,
    pub variance_pairing: VariancePairing,
}

/// Ratios, monitoring c.o.v., curves and alarms (`ratio < 1`).
pub fn build_report(
    calib: &InferenceResult,
    monitor: &InferenceResult,
    f_grid: &[f64],
    pairing: VariancePairing,
) -> Result<DamageReport> {
    let ratio = stiffness_ratios(calib, monitor)?;
    let curves = damage_probability(calib, monitor, f_grid, pairing)?;
    let substructures = curves
        .into_iter()
        .enumerate()
        .map(|(j, curve)| {
            debug_assert!(
                curve.windows(2).all(|w| w[1] <= w[0]),
                "curve {j} increases"
            );
            SubstructureReport {
                substructure: j + 1,
                map_ratio: ratio[j],
                cov_percent: 100.0 * monitor.cov_theta[j],
                pruned: is_pruned(monitor, j),
                alarm: ratio[j] < 1.0,
                prob_curve: f_grid.iter().copied().zip(curve).collect(),
            }
        })
        .collect();
    Ok(DamageReport {
        variance_pairing: pairing,
        substructures,
    })
}

impl DamageReport {
    pub fn alarms(&self) -> Vec<usize> {
        self.substructures
            .iter()
            .filter(|s| s.alarm)
            .map(|s| s.substructure)
            .collect()
    }

    pub fn summary(&self) -> AlarmSummary {
        AlarmSummary {
            alarms: self.alarms(),
            map_ratios: self.substructures.iter().map(|s| s.map_ratio).collect(),
            pruned: self
                .substructures
                .iter()
                .filter(|s| s.pruned)
                .map(|s| s.substructure)
                .collect(),
            variance_pairing: self.variance_pairing,
        }
    }

    /// `substructure_id,map_ratio,cov_percent,f,prob`, one row per grid point.
    pub fn write_curves_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["substructure_id", "map_ratio", "cov_percent", "f", "prob"])?;
        for s in &self.substructures {
            for &(f, p) in &s.prob_curve {
                out.serialize((s.substructure, s.map_ratio, s.cov_percent, f, p))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// `substructure_id,map_ratio,cov_percent,pruned,alarm`.
    pub fn write_ratios_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "substructure_id",
            "map_ratio",
            "cov_percent",
            "pruned",
            "alarm",
        ])?;
        for s in &self.substructures {
            out.serialize((
                s.substructure,
                s.map_ratio,
                s.cov_percent,
                s.pruned,
                s.alarm,
            ))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_means_at_zero_loss() {
        let p = exceedance_probability(1.0, 0.01, 1.0, 0.02, 0.0, VariancePairing::AsPrinted);
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn twenty_percent_loss_at_ten_percent() {
        let p = exceedance_probability(1.0, 0.003, 0.8, 0.003, 0.1, VariancePairing::AsPrinted);
        let arg = 0.1 / (1.81f64 * 9e-6).sqrt();
        assert!((arg - 24.6).abs() < 0.3);
        assert!(p > 1.0 - 1e-12);
    }

    #[test]
    fn zero_variance_step() {
        for pairing in [VariancePairing::AsPrinted, VariancePairing::Conventional] {
            assert_eq!(
                exceedance_probability(1.0, 0.0, 1.0, 0.0, 0.0, pairing),
                0.5
            );
            assert_eq!(
                exceedance_probability(1.0, 0.0, 1.0, 0.0, 0.01, pairing),
                0.0
            );
            assert_eq!(
                exceedance_probability(1.0, 0.0, 0.5, 0.0, 0.2, pairing),
                1.0
            );
        }
    }

    #[test]
    fn pairing_moves_the_scaled_sigma() {
        let a = exceedance_probability(1.0, 0.05, 0.9, 0.01, 0.5, VariancePairing::AsPrinted);
        let b = exceedance_probability(1.0, 0.05, 0.9, 0.01, 0.5, VariancePairing::Conventional);
        let arg_a = (0.5 - 0.9) / (0.25f64 * 1e-4 + 25e-4).sqrt();
        let arg_b = (0.5 - 0.9) / (0.25f64 * 25e-4 + 1e-4).sqrt();
        let phi = |x: f64| Normal::standard().cdf(x);
        assert!((a - phi(arg_a)).abs() < 1e-15);
        assert!((b - phi(arg_b)).abs() < 1e-15);
    }

    #[test]
    fn grid_endpoints() {
        let g = default_f_grid();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert!((g[100] - 0.25).abs() < 1e-15);
        assert!(f_grid(0.25, 0.0).is_err());
        assert!(f_grid(1.5, 0.1).is_err());
    }

    #[test]
    fn ratio_loop_and_zero_anchor() {
        let u = DVector::from_column_slice(&[1.0, 2.0, 0.5]);
        let d = DVector::from_column_slice(&[0.887, 1.0, 0.5]);
        let r = ratios(&u, &d, |_| false).unwrap();
        assert_eq!(r.as_slice(), &[0.887, 0.5, 1.0]);
        let r = ratios(&u, &d, |j| j == 1).unwrap();
        assert_eq!(r[1], 1.0);
        let z = DVector::from_column_slice(&[0.0]);
        assert!(matches!(ratios(&z, &z, |_| false), Err(Error::Domain(_))));
    }
}
