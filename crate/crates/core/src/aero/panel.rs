//! Linear-strength vortex panel method with a Kutta condition, plus a
//! turbulent momentum-integral boundary layer and Squire–Young drag.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{AeroError, AeroResult, FlowConditions, LiftDrag, SolverConfig, CD_FLOOR};
use crate::geometry::{is_valid, AirfoilGeometry, Validity};

/// Shape factor assumed at the trailing edge in the Squire–Young formula.
const TE_SHAPE_FACTOR: f64 = 1.4;

#[derive(Debug, Clone)]
pub struct PanelSolution {
    /// Clockwise from the lower trailing edge, around the nose, to the
    /// upper trailing edge.
    pub nodes: Vec<(f64, f64)>,
    /// Nodal vortex strengths scaled by 2π·V∞.
    pub gamma: Vec<f64>,
    /// Signed tangential velocity at each control point (panel direction).
    pub tangential_velocity: Vec<f64>,
    pub cp: Vec<f64>,
    /// Lift coefficient before compressibility correction.
    pub cl: f64,
    pub refinement_sweeps: usize,
}

/// Natural cubic spline through `(t, y)`, evaluated at `targets`.
fn spline_resample(t: &[f64], y: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut m = vec![0.0; n];
    if n > 2 {
        // Thomas algorithm on the interior second-derivative system.
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = t[i] - t[i - 1];
            let h1 = t[i + 1] - t[i];
            let a = h0;
            let b = 2.0 * (h0 + h1);
            let c = h1;
            let d = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            let denom = b - a * c_prime[i - 1];
            c_prime[i] = c / denom;
            d_prime[i] = (d - a * d_prime[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d_prime[i] - c_prime[i] * m[i + 1];
        }
    }
    let mut k = 0;
    targets
        .iter()
        .map(|&s| {
            while k + 2 < n && s > t[k + 1] {
                k += 1;
            }
            let h = t[k + 1] - t[k];
            let a = (t[k + 1] - s) / h;
            let b = (s - t[k]) / h;
            a * y[k]
                + b * y[k + 1]
                + ((a * a * a - a) * m[k] + (b * b * b - b) * m[k + 1]) * h * h / 6.0
        })
        .collect()
}

/// Resample the surfaces onto `n_per_side` cosine-spaced stations and
/// return the clockwise node loop.
pub(crate) fn panel_nodes(geom: &AirfoilGeometry, n_per_side: usize) -> Vec<(f64, f64)> {
    // Interpolate in the cosine angle, where the round nose is smooth.
    let beta: Vec<f64> = geom
        .x
        .iter()
        .map(|x| (1.0 - 2.0 * x).clamp(-1.0, 1.0).acos())
        .collect();
    let targets: Vec<f64> = (0..n_per_side)
        .map(|i| PI * i as f64 / (n_per_side - 1) as f64)
        .collect();
    let xs: Vec<f64> = targets.iter().map(|b| 0.5 * (1.0 - b.cos())).collect();
    let yu = spline_resample(&beta, &geom.y_upper, &targets);
    let yl = spline_resample(&beta, &geom.y_lower, &targets);
    let mut nodes = Vec::with_capacity(2 * n_per_side - 1);
    for i in (0..n_per_side).rev() {
        nodes.push((xs[i], yl[i]));
    }
    for i in 1..n_per_side {
        nodes.push((xs[i], yu[i]));
    }
    nodes
}

/// Inviscid solve on a clockwise node loop at angle `alpha` (radians).
pub(crate) fn solve_inviscid(
    nodes: &[(f64, f64)],
    alpha: f64,
    cfg: &SolverConfig,
    started: Instant,
) -> Result<PanelSolution, String> {
    let n = nodes.len() - 1;
    let mut mid = Vec::with_capacity(n);
    let mut len = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for j in 0..n {
        let (x0, y0) = nodes[j];
        let (x1, y1) = nodes[j + 1];
        mid.push((0.5 * (x0 + x1), 0.5 * (y0 + y1)));
        let s = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        if !(s > 0.0) {
            return Err(format!("degenerate panel {j}"));
        }
        len.push(s);
        theta.push((y1 - y0).atan2(x1 - x0));
    }
    let (sin_t, cos_t): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| t.sin_cos()).unzip();

    let mut an = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut at = DMatrix::<f64>::zeros(n, n + 1);
    for i in 0..n {
        let (xi, yi) = mid[i];
        for j in 0..n {
            let (cn1, cn2, ct1, ct2) = if i == j {
                (-1.0, 1.0, 0.5 * PI, 0.5 * PI)
            } else {
                let (dx, dy) = (xi - nodes[j].0, yi - nodes[j].1);
                let sj = len[j];
                let a = -dx * cos_t[j] - dy * sin_t[j];
                let b = dx * dx + dy * dy;
                let c = sin_t[i] * cos_t[j] - cos_t[i] * sin_t[j];
                let d = cos_t[i] * cos_t[j] + sin_t[i] * sin_t[j];
                let e = dx * sin_t[j] - dy * cos_t[j];
                let f = (1.0 + sj * (sj + 2.0 * a) / b).ln();
                let g = (e * sj).atan2(b + a * sj);
                // sin/cos of (theta_i - 2 theta_j)
                let s2 = 2.0 * sin_t[j] * cos_t[j];
                let c2 = cos_t[j] * cos_t[j] - sin_t[j] * sin_t[j];
                let sin_d2 = sin_t[i] * c2 - cos_t[i] * s2;
                let cos_d2 = cos_t[i] * c2 + sin_t[i] * s2;
                let p = dx * sin_d2 + dy * cos_d2;
                let q = dx * cos_d2 - dy * sin_d2;
                let cn2 = d + 0.5 * q * f / sj - (a * c + d * e) * g / sj;
                let cn1 = 0.5 * d * f + c * g - cn2;
                let ct2 = c + 0.5 * p * f / sj + (a * d - c * e) * g / sj;
                let ct1 = 0.5 * c * f - d * g - ct2;
                (cn1, cn2, ct1, ct2)
            };
            an[(i, j)] += cn1;
            an[(i, j + 1)] += cn2;
            at[(i, j)] += ct1;
            at[(i, j + 1)] += ct2;
        }
    }
    an[(n, 0)] = 1.0;
    an[(n, n)] = 1.0;
    let mut rhs = DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        rhs[i] = (theta[i] - alpha).sin();
    }
    if started.elapsed().as_secs_f64() > cfg.timeout_secs {
        return Err("timeout while assembling".into());
    }

    let lu = an.clone().lu();
    let u_diag = lu.u().diagonal();
    let (pmin, pmax) = u_diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if !(pmin > 1e-13 * pmax) {
        return Err("singular influence matrix".into());
    }
    let mut gamma = lu.solve(&rhs).ok_or("singular influence matrix")?;
    let scale = rhs.amax().max(1.0);
    let mut sweeps = 0;
    loop {
        let residual = &rhs - &an * &gamma;
        if residual.amax() <= cfg.tolerance * scale {
            break;
        }
        if sweeps >= cfg.max_iterations {
            return Err(format!("residual {:.3e} after {sweeps} sweeps", residual.amax()));
        }
        if started.elapsed().as_secs_f64() > cfg.timeout_secs {
            return Err("timeout during refinement".into());
        }
        gamma += lu.solve(&residual).ok_or("singular influence matrix")?;
        sweeps += 1;
    }

    let vt = &at * &gamma;
    let mut tangential_velocity = Vec::with_capacity(n);
    let mut cp = Vec::with_capacity(n);
    let (mut fx, mut fy) = (0.0, 0.0);
    for i in 0..n {
        let v = (theta[i] - alpha).cos() + vt[i];
        let c = 1.0 - v * v;
        tangential_velocity.push(v);
        cp.push(c);
        // Outward normal of a clockwise loop is (-sin, cos).
        fx += c * len[i] * sin_t[i];
        fy -= c * len[i] * cos_t[i];
    }
    let cl = fy * alpha.cos() - fx * alpha.sin();
    if !cl.is_finite() {
        return Err("non-finite lift".into());
    }
    Ok(PanelSolution {
        nodes: nodes.to_vec(),
        gamma: gamma.iter().copied().collect(),
        tangential_velocity,
        cp,
        cl,
        refinement_sweeps: sweeps,
    })
}

/// Momentum thickness at the trailing edge from a turbulent power-law
/// momentum integral, `samples` ordered from the stagnation point.
fn te_momentum_thickness(samples: &[(f64, f64)], reynolds: f64) -> (f64, f64) {
    let mut integral = 0.0;
    let (mut s_prev, mut f_prev) = (0.0, 0.0);
    for &(s, u) in samples {
        let f = u.powf(3.86);
        integral += 0.5 * (f + f_prev) * (s - s_prev);
        s_prev = s;
        f_prev = f;
    }
    let u_te = samples.last().map(|p| p.1).unwrap_or(0.0);
    let theta = 0.036 * reynolds.powf(-0.2) * u_te.powf(-3.29) * integral.powf(0.8);
    (theta, u_te)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Profile drag from the inviscid surface speeds (Squire–Young on each
/// surface).
pub(crate) fn profile_drag(sol: &PanelSolution, reynolds: f64) -> Result<f64, String> {
    let v = &sol.tangential_velocity;
    let n = v.len();
    let ups: Vec<usize> = (1..n).filter(|&i| v[i - 1] < 0.0 && v[i] >= 0.0).collect();
    let downs = (1..n).filter(|&i| v[i - 1] >= 0.0 && v[i] < 0.0).count();
    if ups.len() != 1 || downs != 0 {
        return Err("surface flow reversal".into());
    }
    let k = ups[0];
    let cps: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (a, b) = (sol.nodes[i], sol.nodes[i + 1]);
            (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1))
        })
        .collect();
    let frac = v[k - 1] / (v[k - 1] - v[k]);
    let gap = dist(cps[k - 1], cps[k]);

    let mut upper = Vec::with_capacity(n - k + 1);
    let mut s = (1.0 - frac) * gap;
    upper.push((s, v[k].abs()));
    for i in k + 1..n {
        s += dist(cps[i - 1], cps[i]);
        upper.push((s, v[i].abs()));
    }
    s += 0.5 * dist(sol.nodes[n - 1], sol.nodes[n]);
    upper.push((s, v[n - 1].abs()));

    let mut lower = Vec::with_capacity(k + 1);
    let mut s = frac * gap;
    lower.push((s, v[k - 1].abs()));
    for i in (0..k - 1).rev() {
        s += dist(cps[i + 1], cps[i]);
        lower.push((s, v[i].abs()));
    }
    s += 0.5 * dist(sol.nodes[0], sol.nodes[1]);
    lower.push((s, v[0].abs()));

    let exponent = 0.5 * (TE_SHAPE_FACTOR + 5.0);
    let mut cd = 0.0;
    for side in [&upper, &lower] {
        let (theta, u_te) = te_momentum_thickness(side, reynolds);
        cd += 2.0 * theta * u_te.powf(exponent);
    }
    if !cd.is_finite() || cd <= 0.0 {
        return Err(format!("non-physical drag {cd}"));
    }
    Ok(cd.max(CD_FLOOR))
}

pub fn solve_high_fidelity(
    geom: &AirfoilGeometry,
    flow: &FlowConditions,
    cfg: &SolverConfig,
) -> Result<AeroResult, AeroError> {
    if let Validity::Invalid(reason) = is_valid(geom) {
        return Err(AeroError::GeometryRejected(reason));
    }
    flow.validate()?;
    if cfg.panels < 16 {
        return Err(AeroError::InvalidParams(format!(
            "panel count {} too small",
            cfg.panels
        )));
    }
    let started = Instant::now();
    let nodes = panel_nodes(geom, cfg.panels / 2 + 1);
    let sol = match solve_inviscid(&nodes, flow.alpha_rad(), cfg, started) {
        Ok(s) => s,
        Err(reason) => return Ok(AeroResult::failed(reason, cfg.nominal_cost_ms)),
    };
    let cd = match profile_drag(&sol, flow.reynolds) {
        Ok(cd) => cd,
        Err(reason) => return Ok(AeroResult::failed(reason, cfg.nominal_cost_ms)),
    };
    if started.elapsed().as_secs_f64() > cfg.timeout_secs {
        return Ok(AeroResult::failed("timeout", cfg.nominal_cost_ms));
    }
    Ok(AeroResult {
        coefficients: Some(LiftDrag {
            cl: sol.cl * flow.compressibility_factor(),
            cd,
        }),
        confidence: 1.0,
        cost_ms: cfg.nominal_cost_ms,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cst_to_geometry, fit_cst, naca, ParamBounds};

    fn naca_geom(code: &str) -> AirfoilGeometry {
        let pts = naca::naca4_coordinates(code, 161).unwrap();
        let p = fit_cst(&pts, &ParamBounds::default()).unwrap().params;
        cst_to_geometry(&p, 200).unwrap()
    }

    fn incompressible(aoa: f64) -> FlowConditions {
        FlowConditions {
            angle_of_attack: aoa,
            mach: 0.0,
            ..Default::default()
        }
    }

    fn cl(g: &AirfoilGeometry, flow: &FlowConditions, cfg: &SolverConfig) -> f64 {
        solve_high_fidelity(g, flow, cfg).unwrap().cl().unwrap()
    }

    #[test]
    fn spline_reproduces_cubic() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        let out = spline_resample(&t, &y, &[0.05, 0.77, 1.9]);
        for (s, v) in [0.05, 0.77, 1.9].iter().zip(out) {
            assert!((v - (2.0 * s + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn naca0012_near_thin_airfoil_theory() {
        let g = naca_geom("0012");
        let c = cl(&g, &incompressible(2.0), &SolverConfig::high());
        let thin = 2.0 * PI * 2f64.to_radians().sin();
        assert!((c - thin).abs() / thin < 0.15, "cl {c} vs {thin}");
    }

    #[test]
    fn symmetric_section_at_zero_incidence() {
        for code in ["0006", "0012", "0018"] {
            let c = cl(&naca_geom(code), &incompressible(0.0), &SolverConfig::high());
            assert!(c.abs() < 1e-6, "{code}: {c}");
        }
    }

    #[test]
    fn prandtl_glauert_identity() {
        let g = naca_geom("2412");
        let c0 = cl(&g, &incompressible(2.0), &SolverConfig::high());
        let c5 = cl(&g, &FlowConditions::default(), &SolverConfig::high());
        assert!((c5 * (1.0f64 - 0.25).sqrt() - c0).abs() < 1e-10);
    }

    #[test]
    fn lift_monotone_in_incidence() {
        let g = naca_geom("0012");
        let cfg = SolverConfig::high();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=16 {
            let c = cl(&g, &incompressible(-2.0 + 0.5 * k as f64), &cfg);
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn panel_refinement_converges() {
        let g = naca_geom("0012");
        let flow = incompressible(2.0);
        let coarse = cl(&g, &flow, &SolverConfig { panels: 128, ..SolverConfig::high() });
        let fine = cl(&g, &flow, &SolverConfig { panels: 256, ..SolverConfig::high() });
        assert!((coarse - fine).abs() / fine < 0.02, "{coarse} vs {fine}");
    }

    #[test]
    fn drag_is_plausible_and_grows_with_thickness() {
        let cfg = SolverConfig::high();
        let flow = FlowConditions::default();
        let cd = |code: &str| solve_high_fidelity(&naca_geom(code), &flow, &cfg).unwrap().cd().unwrap();
        let (thin, mid, thick) = (cd("0006"), cd("0012"), cd("0018"));
        assert!(thin < mid && mid < thick, "{thin} {mid} {thick}");
        assert!(mid > 0.005 && mid < 0.02, "{mid}");
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let g = naca_geom("0012");
        let swapped = AirfoilGeometry {
            x: g.x.clone(),
            y_upper: g.y_lower.clone(),
            y_lower: g.y_upper.clone(),
        };
        let err = solve_high_fidelity(&swapped, &FlowConditions::default(), &SolverConfig::high());
        assert!(matches!(err, Err(AeroError::GeometryRejected(_))));
    }

    #[test]
    fn refinement_limit_reports_nonconvergence() {
        let g = naca_geom("0012");
        let cfg = SolverConfig {
            tolerance: 0.0,
            max_iterations: 2,
            ..SolverConfig::high()
        };
        let r = solve_high_fidelity(&g, &FlowConditions::default(), &cfg).unwrap();
        assert!(!r.converged());
        assert_eq!(r.confidence, 1.0);
    }
}
