//! Aerodynamic solvers.
//!
//! Two interchangeable models share one contract: a vortex panel method
//! with an integral boundary-layer drag estimate (high fidelity) and a
//! thin-airfoil surrogate that reports a confidence score (low fidelity).

mod panel;
mod surrogate;

pub use panel::{solve_high_fidelity, PanelSolution};
pub use surrogate::{confidence, solve_low_fidelity};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AirfoilGeometry, InvalidReason};

/// Lower bound applied to positive drag coefficients.
pub const CD_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AeroError {
    #[error("geometry rejected: {}", .0.as_str())]
    GeometryRejected(InvalidReason),
    #[error("invalid solver input: {0}")]
    InvalidParams(String),
    #[error("lift/drag requested from an unconverged solution")]
    Unconverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConditions {
    /// Degrees.
    pub angle_of_attack: f64,
    pub reynolds: f64,
    pub mach: f64,
}

impl Default for FlowConditions {
    fn default() -> Self {
        Self {
            angle_of_attack: 2.0,
            reynolds: 1e6,
            mach: 0.5,
        }
    }
}

impl FlowConditions {
    pub fn validate(&self) -> Result<(), AeroError> {
        if !self.angle_of_attack.is_finite() {
            return Err(AeroError::InvalidParams("non-finite angle of attack".into()));
        }
        if !(self.reynolds.is_finite() && self.reynolds > 0.0) {
            return Err(AeroError::InvalidParams("Reynolds number must be positive".into()));
        }
        if !(0.0..0.7).contains(&self.mach) {
            return Err(AeroError::InvalidParams(format!(
                "Mach {} outside the subcritical range [0, 0.7)",
                self.mach
            )));
        }
        Ok(())
    }

    pub fn alpha_rad(&self) -> f64 {
        self.angle_of_attack.to_radians()
    }

    /// Prandtl–Glauert factor 1/sqrt(1 - Ma^2).
    pub fn compressibility_factor(&self) -> f64 {
        1.0 / (1.0 - self.mach * self.mach).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    High,
    Low,
}

impl Fidelity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fidelity::High => "high",
            Fidelity::Low => "low",
        }
    }
}

impl std::str::FromStr for Fidelity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(Fidelity::High),
            "low" => Ok(Fidelity::Low),
            other => Err(format!("unknown fidelity '{other}' (expected high|low)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub fidelity: Fidelity,
    /// Surface node count (both surfaces, leading edge shared).
    pub panels: usize,
    /// Cap on iterative-refinement sweeps of the panel system.
    pub max_iterations: usize,
    /// Residual (infinity norm) accepted by iterative refinement.
    pub tolerance: f64,
    pub timeout_secs: f64,
    /// Bookkeeping cost charged per call, milliseconds.
    pub nominal_cost_ms: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::high()
    }
}

impl SolverConfig {
    pub fn high() -> Self {
        Self {
            fidelity: Fidelity::High,
            panels: 255,
            max_iterations: 200,
            tolerance: 1e-10,
            timeout_secs: 30.0,
            nominal_cost_ms: 73.0,
        }
    }

    pub fn low() -> Self {
        Self {
            fidelity: Fidelity::Low,
            nominal_cost_ms: 4.0,
            ..Self::high()
        }
    }

    pub fn for_fidelity(fidelity: Fidelity) -> Self {
        match fidelity {
            Fidelity::High => Self::high(),
            Fidelity::Low => Self::low(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftDrag {
    pub cl: f64,
    pub cd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeroResult {
    /// Present only when the solve converged.
    pub coefficients: Option<LiftDrag>,
    pub confidence: f64,
    pub cost_ms: f64,
    pub failure: Option<String>,
}

impl AeroResult {
    pub fn converged(&self) -> bool {
        self.coefficients.is_some()
    }

    pub(crate) fn failed(reason: impl Into<String>, cost_ms: f64) -> Self {
        Self {
            coefficients: None,
            confidence: 1.0,
            cost_ms,
            failure: Some(reason.into()),
        }
    }

    pub fn cl(&self) -> Option<f64> {
        self.coefficients.map(|c| c.cl)
    }

    pub fn cd(&self) -> Option<f64> {
        self.coefficients.map(|c| c.cd)
    }
}

pub fn lift_drag_ratio(result: &AeroResult) -> Result<f64, AeroError> {
    let c = result.coefficients.ok_or(AeroError::Unconverged)?;
    Ok(c.cl / c.cd)
}

/// Dispatch on `cfg.fidelity`.
pub fn solve(
    geom: &AirfoilGeometry,
    flow: &FlowConditions,
    cfg: &SolverConfig,
) -> Result<AeroResult, AeroError> {
    match cfg.fidelity {
        Fidelity::High => solve_high_fidelity(geom, flow, cfg),
        Fidelity::Low => solve_low_fidelity(geom, flow, cfg),
    }
}

/// Fully turbulent flat-plate skin-friction coefficient (one side).
pub fn turbulent_cf(reynolds: f64) -> f64 {
    0.074 * reynolds.powf(-0.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(cl: f64, cd: f64) -> AeroResult {
        AeroResult {
            coefficients: Some(LiftDrag { cl, cd }),
            confidence: 1.0,
            cost_ms: 0.0,
            failure: None,
        }
    }

    #[test]
    fn ratio_arithmetic() {
        assert_eq!(lift_drag_ratio(&result(0.5, 0.005)).unwrap(), 100.0);
        assert_eq!(lift_drag_ratio(&result(0.0, 0.01)).unwrap(), 0.0);
    }

    #[test]
    fn ratio_needs_convergence() {
        let r = AeroResult::failed("x", 73.0);
        assert_eq!(lift_drag_ratio(&r), Err(AeroError::Unconverged));
    }

    #[test]
    fn ratio_matches_closed_forms() {
        // Flat plate: both closed forms evaluated by hand.
        let cl = 2.0 * std::f64::consts::PI * 2f64.to_radians().sin();
        let cd = 2.0 * 0.074 / 1e6f64.powf(0.2);
        let r = result(cl, 2.0 * turbulent_cf(1e6));
        assert!((lift_drag_ratio(&r).unwrap() - cl / cd).abs() < 1e-12);
        assert!((cl / cd - 23.482).abs() < 1e-3, "{}", cl / cd);
    }

    #[test]
    fn flow_defaults_and_validation() {
        let f = FlowConditions::default();
        assert_eq!((f.angle_of_attack, f.reynolds, f.mach), (2.0, 1e6, 0.5));
        f.validate().unwrap();
        assert!(FlowConditions { mach: 0.75, ..f }.validate().is_err());
        assert!(FlowConditions { reynolds: -1.0, ..f }.validate().is_err());
    }

    #[test]
    fn solver_defaults() {
        let h = SolverConfig::high();
        assert_eq!((h.panels, h.max_iterations, h.timeout_secs), (255, 200, 30.0));
        assert_eq!(h.nominal_cost_ms, 73.0);
        assert_eq!(SolverConfig::low().nominal_cost_ms, 4.0);
    }
}
