use super::{AirfoilGeometry, CstParams, GeometryError, N_WEIGHTS};

/// Class-function exponents: round nose, finite-angle trailing edge.
pub const CLASS_N1: f64 = 0.5;
pub const CLASS_N2: f64 = 1.0;
pub const DEFAULT_STATIONS: usize = 200;
const MIN_STATIONS: usize = 32;

const BINOMIAL_7: [f64; N_WEIGHTS] = [1.0, 7.0, 21.0, 35.0, 35.0, 21.0, 7.0, 1.0];

/// Cosine-spaced chord stations on [0, 1], endpoints exact.
pub(crate) fn cosine_stations(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / last).cos()))
        .collect()
}

/// Class function times each Bernstein basis polynomial at `x`.
pub(crate) fn shape_basis(x: f64) -> [f64; N_WEIGHTS] {
    let class = x.powf(CLASS_N1) * (1.0 - x).powf(CLASS_N2);
    let degree = (N_WEIGHTS - 1) as i32;
    let mut out = [0.0; N_WEIGHTS];
    for (i, b) in out.iter_mut().enumerate() {
        let i32_ = i as i32;
        *b = class * BINOMIAL_7[i] * x.powi(i32_) * (1.0 - x).powi(degree - i32_);
    }
    out
}

/// Leading-edge modification term, added to both surfaces.
pub(crate) fn le_basis(x: f64) -> f64 {
    x * (1.0 - x).powf(N_WEIGHTS as f64 + 0.5)
}

pub fn cst_to_geometry(
    params: &CstParams,
    n_stations: usize,
) -> Result<AirfoilGeometry, GeometryError> {
    if !params.is_finite() {
        return Err(GeometryError::InvalidParams(
            "non-finite CST component".into(),
        ));
    }
    if n_stations < MIN_STATIONS {
        return Err(GeometryError::InvalidParams(format!(
            "need at least {MIN_STATIONS} stations, got {n_stations}"
        )));
    }
    let x = cosine_stations(n_stations);
    let mut y_upper = Vec::with_capacity(n_stations);
    let mut y_lower = Vec::with_capacity(n_stations);
    for &xi in &x {
        let basis = shape_basis(xi);
        let le = params.leading_edge_weight * le_basis(xi);
        let te = 0.5 * xi * params.trailing_edge_thickness;
        let su: f64 = basis.iter().zip(&params.upper).map(|(b, w)| b * w).sum();
        let sl: f64 = basis.iter().zip(&params.lower).map(|(b, w)| b * w).sum();
        y_upper.push(su + le + te);
        y_lower.push(sl + le - te);
    }
    Ok(AirfoilGeometry {
        x,
        y_upper,
        y_lower,
    })
}

/// Maximum of `y_upper - y_lower`, refined by a parabola through the
/// discrete maximum and its two neighbours.
pub fn max_thickness(geom: &AirfoilGeometry) -> f64 {
    let t = geom.thickness();
    let Some((k, &tk)) = t
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    else {
        return 0.0;
    };
    if k == 0 || k + 1 >= t.len() {
        return tk;
    }
    let (x0, x1, x2) = (geom.x[k - 1], geom.x[k], geom.x[k + 1]);
    let (t0, t2) = (t[k - 1], t[k + 1]);
    let d1 = (tk - t0) / (x1 - x0);
    let d2 = (t2 - tk) / (x2 - x1);
    let a = (d2 - d1) / (x2 - x0);
    if !(a < 0.0) {
        return tk;
    }
    let xv = 0.5 * (x0 + x1) - d1 / (2.0 * a);
    if !(x0..=x2).contains(&xv) {
        return tk;
    }
    let refined = t0 + d1 * (xv - x0) + a * (xv - x0) * (xv - x1);
    refined.max(tk)
}
