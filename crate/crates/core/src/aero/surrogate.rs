//! Thin-airfoil surrogate with a geometric confidence score.

use std::f64::consts::PI;

use super::{turbulent_cf, AeroError, AeroResult, FlowConditions, LiftDrag, SolverConfig, CD_FLOOR};
use crate::geometry::{max_thickness, AirfoilGeometry};

/// Penalty rate on surface crossing depth (per chord fraction).
pub const CROSSING_PENALTY: f64 = 400.0;
/// Penalty rate on curvature above the smooth-section envelope.
pub const CURVATURE_PENALTY: f64 = 5.0;
/// Largest |d²y/dβ²| (β the cosine angle) treated as smooth. Fitted
/// reset-pool sections peak at 0.46 (naca9421).
pub const CURVATURE_ENVELOPE: f64 = 0.6;

const FORM_LINEAR: f64 = 2.0;
const FORM_QUADRATIC: f64 = 10.0;

/// Camber-line integral ∫ dz/dx (cos β − 1) dβ over [0, π], exact for a
/// piecewise-linear camber line.
fn camber_integral(geom: &AirfoilGeometry) -> f64 {
    let z = geom.camber();
    let beta: Vec<f64> = geom
        .x
        .iter()
        .map(|x| (1.0 - 2.0 * x).clamp(-1.0, 1.0).acos())
        .collect();
    let mut total = 0.0;
    for k in 0..geom.x.len() - 1 {
        let dx = geom.x[k + 1] - geom.x[k];
        if dx <= 0.0 {
            continue;
        }
        let slope = (z[k + 1] - z[k]) / dx;
        let w = (beta[k + 1].sin() - beta[k + 1]) - (beta[k].sin() - beta[k]);
        total += slope * w;
    }
    total
}

fn max_curvature(geom: &AirfoilGeometry, y: &[f64]) -> f64 {
    let beta: Vec<f64> = geom
        .x
        .iter()
        .map(|x| (1.0 - 2.0 * x).clamp(-1.0, 1.0).acos())
        .collect();
    let mut worst = 0.0f64;
    for k in 1..y.len().saturating_sub(1) {
        let h0 = beta[k] - beta[k - 1];
        let h1 = beta[k + 1] - beta[k];
        if h0 <= 0.0 || h1 <= 0.0 {
            continue;
        }
        let d2 = 2.0 * ((y[k + 1] - y[k]) / h1 - (y[k] - y[k - 1]) / h0) / (h0 + h1);
        worst = worst.max(d2.abs());
    }
    worst
}

/// Confidence κ = exp(−a·crossing − b·curvature_excess), in [0, 1].
pub fn confidence(geom: &AirfoilGeometry) -> f64 {
    let n = geom.len();
    let crossing = (1..n.saturating_sub(1))
        .map(|i| geom.y_lower[i] - geom.y_upper[i])
        .fold(0.0f64, f64::max);
    let excess = (max_curvature(geom, &geom.y_upper) - CURVATURE_ENVELOPE).max(0.0)
        + (max_curvature(geom, &geom.y_lower) - CURVATURE_ENVELOPE).max(0.0);
    let kappa = (-CROSSING_PENALTY * crossing - CURVATURE_PENALTY * excess).exp();
    if kappa.is_finite() {
        kappa.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn solve_low_fidelity(
    geom: &AirfoilGeometry,
    flow: &FlowConditions,
    cfg: &SolverConfig,
) -> Result<AeroResult, AeroError> {
    if geom.len() < 2 || !geom.all_finite() {
        return Err(AeroError::InvalidParams("non-finite geometry".into()));
    }
    flow.validate()?;
    let cl0 = 2.0 * PI * flow.alpha_rad().sin() + 2.0 * camber_integral(geom);
    let cl = cl0 * flow.compressibility_factor();
    let t = max_thickness(geom).max(0.0);
    let form = 1.0 + FORM_LINEAR * t + FORM_QUADRATIC * t * t;
    let cd = (2.0 * turbulent_cf(flow.reynolds) * form).max(CD_FLOOR);
    Ok(AeroResult {
        coefficients: Some(LiftDrag { cl, cd }),
        confidence: confidence(geom),
        cost_ms: cfg.nominal_cost_ms,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cst_to_geometry, fit_cst, naca, CstParams, ParamBounds};

    fn naca_geom(code: &str) -> AirfoilGeometry {
        let pts = naca::naca4_coordinates(code, 161).unwrap();
        let p = fit_cst(&pts, &ParamBounds::default()).unwrap().params;
        cst_to_geometry(&p, 200).unwrap()
    }

    #[test]
    fn flat_plate_matches_closed_form_exactly() {
        let g = cst_to_geometry(&CstParams::zeros(), 200).unwrap();
        let flow = FlowConditions { mach: 0.0, ..Default::default() };
        let r = solve_low_fidelity(&g, &flow, &SolverConfig::low()).unwrap();
        assert_eq!(r.cl().unwrap(), 2.0 * PI * 2f64.to_radians().sin());
    }

    #[test]
    fn symmetric_section_zero_lift_full_confidence() {
        let flow = FlowConditions { angle_of_attack: 0.0, ..Default::default() };
        for code in ["0006", "0012", "0018"] {
            let r = solve_low_fidelity(&naca_geom(code), &flow, &SolverConfig::low()).unwrap();
            assert!(r.cl().unwrap().abs() < 1e-12);
            assert_eq!(r.confidence, 1.0);
        }
    }

    #[test]
    fn camber_adds_lift() {
        let flow = FlowConditions::default();
        let cfg = SolverConfig::low();
        let sym = solve_low_fidelity(&naca_geom("0012"), &flow, &cfg).unwrap();
        let cam = solve_low_fidelity(&naca_geom("4412"), &flow, &cfg).unwrap();
        assert!(cam.cl().unwrap() > sym.cl().unwrap() + 0.3);
    }

    #[test]
    fn crossing_shape_is_low_confidence_but_converged() {
        let g = naca_geom("0012");
        let swapped = AirfoilGeometry {
            x: g.x.clone(),
            y_upper: g.y_lower.clone(),
            y_lower: g.y_upper.clone(),
        };
        let r = solve_low_fidelity(&swapped, &FlowConditions::default(), &SolverConfig::low()).unwrap();
        assert!(r.converged());
        assert!(r.confidence < 0.5);
    }

    #[test]
    fn reset_pool_has_full_confidence() {
        for name in naca::RESET_POOL {
            assert_eq!(confidence(&naca_geom(name)), 1.0, "{name}");
        }
    }

    #[test]
    fn wavy_surface_loses_confidence() {
        let mut p = fit_cst(&naca::naca4_coordinates("0012", 161).unwrap(), &ParamBounds::default())
            .unwrap()
            .params;
        p.upper = [1.25, -1.5, 1.25, -1.5, 1.25, -1.5, 1.25, -1.5];
        let g = cst_to_geometry(&p, 200).unwrap();
        assert!(confidence(&g) < 0.9);
    }

    #[test]
    fn non_finite_rejected() {
        let mut g = naca_geom("0012");
        g.y_upper[5] = f64::NAN;
        assert!(solve_low_fidelity(&g, &FlowConditions::default(), &SolverConfig::low()).is_err());
    }
}
