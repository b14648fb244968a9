use nalgebra::{DMatrix, DVector};

use super::cst::{le_basis, shape_basis};
use super::{CstParams, GeometryError, ParamBounds, LE_INDEX, N_PARAMS, N_WEIGHTS, TE_INDEX};

const MIN_POINTS: usize = 20;
const NORMALIZED_SLACK: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstFit {
    pub params: CstParams,
    /// RMS vertical distance between the fitted surfaces and the input
    /// points, in chord fractions.
    pub residual: f64,
}

fn design_row(x: f64, upper: bool) -> [f64; N_PARAMS] {
    let mut row = [0.0; N_PARAMS];
    let basis = shape_basis(x);
    let offset = if upper { 0 } else { N_WEIGHTS };
    row[offset..offset + N_WEIGHTS].copy_from_slice(&basis);
    row[TE_INDEX] = if upper { 0.5 * x } else { -0.5 * x };
    row[LE_INDEX] = le_basis(x);
    row
}

fn predict(row: &[f64; N_PARAMS], p: &[f64; N_PARAMS]) -> f64 {
    row.iter().zip(p).map(|(a, b)| a * b).sum()
}

/// Least-squares fit of all 18 CST components to a Selig-ordered
/// coordinate loop, subject to `bounds`.
///
/// The loop must be in Selig order (upper surface first). Loops that are
/// not already chord-normalized are translated and scaled so the
/// minimum-x point sits at the origin with unit chord. Points ahead of the
/// leading edge (x < 0) cannot be represented and are left out.
pub fn fit_cst(coords: &[(f64, f64)], bounds: &ParamBounds) -> Result<CstFit, GeometryError> {
    if coords.len() < MIN_POINTS {
        return Err(GeometryError::Fit(format!(
            "need at least {MIN_POINTS} points, got {}",
            coords.len()
        )));
    }
    if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(GeometryError::Fit("non-finite coordinate".into()));
    }
    let x_min = coords.iter().map(|p| p.0).fold(f64::MAX, f64::min);
    let x_max = coords.iter().map(|p| p.0).fold(f64::MIN, f64::max);
    let normalized = x_min.abs() < NORMALIZED_SLACK && (x_max - 1.0).abs() < NORMALIZED_SLACK;
    // Chord-normalized loops are split at the point nearest the origin; a
    // rotated cambered nose may put a few upper-surface points at x < 0.
    let le = if normalized {
        coords
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 .0.hypot(a.1 .1)).total_cmp(&b.1 .0.hypot(b.1 .1)))
            .map(|(i, _)| i)
            .unwrap()
    } else {
        coords
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .map(|(i, _)| i)
            .unwrap()
    };
    if le < 2 || le + 3 > coords.len() {
        return Err(GeometryError::Fit(
            "cannot split loop into upper and lower surfaces".into(),
        ));
    }
    let (x_le, y_le, chord) = if normalized {
        (0.0, 0.0, 1.0)
    } else {
        (coords[le].0, coords[le].1, x_max - coords[le].0)
    };
    if !(chord > 0.0) {
        return Err(GeometryError::Fit("zero chord".into()));
    }
    let norm = |&(x, y): &(f64, f64)| ((x - x_le) / chord, (y - y_le) / chord);
    let representable = |p: &(f64, f64)| p.0 >= 0.0;
    let first: Vec<(f64, f64)> = coords[..=le].iter().map(norm).filter(representable).collect();
    let second: Vec<(f64, f64)> = coords[le..].iter().map(norm).filter(representable).collect();
    if first.len() < 3 || second.len() < 3 {
        return Err(GeometryError::Fit(
            "cannot split loop into upper and lower surfaces".into(),
        ));
    }
    let first: Vec<(f64, f64)> = first.into_iter().map(|(x, y)| (x.min(1.0), y)).collect();
    let second: Vec<(f64, f64)> = second.into_iter().map(|(x, y)| (x.min(1.0), y)).collect();

    let rows: Vec<([f64; N_PARAMS], f64)> = first
        .iter()
        .map(|&(x, y)| (design_row(x, true), y))
        .chain(second.iter().map(|&(x, y)| (design_row(x, false), y)))
        .collect();

    let a = DMatrix::from_fn(rows.len(), N_PARAMS, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let solution = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-13)
        .map_err(|e| GeometryError::Fit(e.to_string()))?;

    let mut raw = [0.0; N_PARAMS];
    raw.copy_from_slice(solution.as_slice());
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::Fit("singular least-squares system".into()));
    }
    let inside = raw
        .iter()
        .enumerate()
        .all(|(i, v)| *v >= bounds.lower[i] && *v <= bounds.upper[i]);
    if !inside {
        let gram = a.transpose() * &a;
        let rhs = a.transpose() * &b;
        raw = bounded_least_squares(&gram, &rhs, bounds)?;
    }
    let params = CstParams::from_array(&raw).clamped(bounds);
    let p = params.to_array();
    let sq: f64 = rows.iter().map(|(row, y)| (predict(row, &p) - y).powi(2)).sum();
    Ok(CstFit {
        params,
        residual: (sq / rows.len() as f64).sqrt(),
    })
}

/// Minimise `x'Gx/2 - h'x` over the box (bounded-variable active set).
fn bounded_least_squares(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    bounds: &ParamBounds,
) -> Result<[f64; N_PARAMS], GeometryError> {
    let n = N_PARAMS;
    let mut x: Vec<f64> = (0..n)
        .map(|i| 0.5 * (bounds.lower[i] + bounds.upper[i]))
        .collect();
    let mut free = vec![true; n];
    for _ in 0..10 * n * n {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        // Unconstrained minimiser over the free set with the rest fixed.
        let mut target = x.clone();
        if !idx.is_empty() {
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| gram[(idx[r], idx[c])]);
            let sub_rhs = DVector::from_fn(idx.len(), |r, _| {
                let i = idx[r];
                rhs[i] - (0..n).filter(|&j| !free[j]).map(|j| gram[(i, j)] * x[j]).sum::<f64>()
            });
            let sol = sub
                .clone()
                .cholesky()
                .map(|c| c.solve(&sub_rhs))
                .or_else(|| sub.lu().solve(&sub_rhs))
                .ok_or_else(|| GeometryError::Fit("singular bounded subproblem".into()))?;
            for (r, &i) in idx.iter().enumerate() {
                target[i] = sol[r];
            }
        }
        // Walk towards the target until the first bound is hit.
        let mut step = 1.0f64;
        let mut blocking = None;
        for &i in &idx {
            let d = target[i] - x[i];
            let limit = if d > 0.0 {
                (bounds.upper[i] - x[i]) / d
            } else if d < 0.0 {
                (bounds.lower[i] - x[i]) / d
            } else {
                f64::INFINITY
            };
            if limit < step {
                step = limit.max(0.0);
                blocking = Some(i);
            }
        }
        for &i in &idx {
            x[i] += step * (target[i] - x[i]);
        }
        if let Some(i) = blocking {
            let mid = 0.5 * (bounds.lower[i] + bounds.upper[i]);
            x[i] = if target[i] > mid { bounds.upper[i] } else { bounds.lower[i] };
            free[i] = false;
            continue;
        }
        // Release the fixed variable whose gradient points into the box.
        let mut release = None;
        let mut best = 1e-13 * rhs.amax().max(1.0);
        for i in (0..n).filter(|&i| !free[i]) {
            let g: f64 = (0..n).map(|j| gram[(i, j)] * x[j]).sum::<f64>() - rhs[i];
            let pull = if x[i] <= bounds.lower[i] { -g } else { g };
            if pull > best {
                best = pull;
                release = Some(i);
            }
        }
        match release {
            Some(i) => free[i] = true,
            None => {
                let mut out = [0.0; N_PARAMS];
                out.copy_from_slice(&x);
                return Ok(out);
            }
        }
    }
    Err(GeometryError::Fit("bounded fit did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cst_to_geometry, naca};

    #[test]
    fn too_few_points() {
        let pts = vec![(1.0, 0.0), (0.0, 0.0), (1.0, 0.0)];
        assert!(matches!(
            fit_cst(&pts, &ParamBounds::default()),
            Err(GeometryError::Fit(_))
        ));
    }

    #[test]
    fn leading_edge_at_end_is_unsplittable() {
        let pts: Vec<(f64, f64)> = (0..30).map(|i| (1.0 - i as f64 / 29.0, 0.01)).collect();
        assert!(fit_cst(&pts, &ParamBounds::default()).is_err());
    }

    #[test]
    fn naca0012_residual_small() {
        let pts = naca::naca4_coordinates("0012", 161).unwrap();
        let fit = fit_cst(&pts, &ParamBounds::default()).unwrap();
        assert!(fit.residual < 1e-3, "residual {}", fit.residual);
    }

    #[test]
    fn recovers_generating_params() {
        let mut p = CstParams::zeros();
        p.upper = [0.2, 0.3, 0.1, 0.35, 0.2, 0.25, 0.3, 0.2];
        p.lower = [-0.15, -0.1, -0.2, 0.05, -0.1, 0.0, 0.1, 0.05];
        p.trailing_edge_thickness = 0.002;
        p.leading_edge_weight = 0.1;
        let g = cst_to_geometry(&p, 200).unwrap();
        let fit = fit_cst(&g.to_selig(), &ParamBounds::default()).unwrap();
        assert!(fit.residual < 1e-6);
        for (a, b) in fit.params.to_array().iter().zip(p.to_array()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
