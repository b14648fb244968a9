//! CST (Kulfan) airfoil parameterization.
//!
//! The design vector has 18 components in a fixed order: 8 upper-surface
//! weights, 8 lower-surface weights, trailing-edge thickness and
//! leading-edge weight. The same ordering is used by the environment
//! observation and by checkpoints, so it must not change.

mod cst;
mod dat;
mod fit;
pub mod naca;

pub use cst::{cst_to_geometry, max_thickness, CLASS_N1, CLASS_N2, DEFAULT_STATIONS};
pub use dat::{parse_dat, read_dat, write_selig, AirfoilCoordinates};
pub use fit::{fit_cst, CstFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shape weights per surface.
pub const N_WEIGHTS: usize = 8;
/// Length of the design/state vector.
pub const N_PARAMS: usize = 2 * N_WEIGHTS + 2;
/// Index of the trailing-edge thickness in the flat vector.
pub const TE_INDEX: usize = 2 * N_WEIGHTS;
/// Index of the leading-edge weight in the flat vector.
pub const LE_INDEX: usize = 2 * N_WEIGHTS + 1;

/// Minimum thickness (chord fraction) below which a shape is rejected.
pub const DEFAULT_THICKNESS_FLOOR: f64 = 1e-3;
/// Slack allowed before a surface crossing is reported.
pub const CROSSING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid CST parameters: {0}")]
    InvalidParams(String),
    #[error("CST fit failed: {0}")]
    Fit(String),
    #[error("malformed airfoil file: {0}")]
    Parse(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// The 18-component CST design vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CstParams {
    pub upper: [f64; N_WEIGHTS],
    pub lower: [f64; N_WEIGHTS],
    pub trailing_edge_thickness: f64,
    pub leading_edge_weight: f64,
}

impl CstParams {
    pub fn zeros() -> Self {
        Self {
            upper: [0.0; N_WEIGHTS],
            lower: [0.0; N_WEIGHTS],
            trailing_edge_thickness: 0.0,
            leading_edge_weight: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        let mut out = [0.0; N_PARAMS];
        out[..N_WEIGHTS].copy_from_slice(&self.upper);
        out[N_WEIGHTS..TE_INDEX].copy_from_slice(&self.lower);
        out[TE_INDEX] = self.trailing_edge_thickness;
        out[LE_INDEX] = self.leading_edge_weight;
        out
    }

    pub fn from_array(values: &[f64; N_PARAMS]) -> Self {
        let mut upper = [0.0; N_WEIGHTS];
        let mut lower = [0.0; N_WEIGHTS];
        upper.copy_from_slice(&values[..N_WEIGHTS]);
        lower.copy_from_slice(&values[N_WEIGHTS..TE_INDEX]);
        Self {
            upper,
            lower,
            trailing_edge_thickness: values[TE_INDEX],
            leading_edge_weight: values[LE_INDEX],
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, GeometryError> {
        let arr: &[f64; N_PARAMS] = values.try_into().map_err(|_| {
            GeometryError::InvalidParams(format!(
                "expected {N_PARAMS} components, got {}",
                values.len()
            ))
        })?;
        Ok(Self::from_array(arr))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn clamped(&self, bounds: &ParamBounds) -> Self {
        let mut v = self.to_array();
        for (i, x) in v.iter_mut().enumerate() {
            *x = x.clamp(bounds.lower[i], bounds.upper[i]);
        }
        Self::from_array(&v)
    }

    pub fn within(&self, bounds: &ParamBounds) -> bool {
        self.to_array()
            .iter()
            .enumerate()
            .all(|(i, x)| *x >= bounds.lower[i] && *x <= bounds.upper[i])
    }

    /// Componentwise map into [-1, 1] using the bounds.
    pub fn normalized(&self, bounds: &ParamBounds) -> [f64; N_PARAMS] {
        let mut v = self.to_array();
        for (i, x) in v.iter_mut().enumerate() {
            let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
            *x = 2.0 * (*x - lo) / (hi - lo) - 1.0;
        }
        v
    }

    pub fn denormalized(obs: &[f64; N_PARAMS], bounds: &ParamBounds) -> Self {
        let mut v = *obs;
        for (i, x) in v.iter_mut().enumerate() {
            let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
            *x = lo + 0.5 * (*x + 1.0) * (hi - lo);
        }
        Self::from_array(&v)
    }
}

/// Per-component box bounds on the design vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl Default for ParamBounds {
    fn default() -> Self {
        let mut lower = [0.0; N_PARAMS];
        let mut upper = [0.0; N_PARAMS];
        for i in 0..N_WEIGHTS {
            lower[i] = -1.5;
            upper[i] = 1.25;
            lower[N_WEIGHTS + i] = -0.75;
            upper[N_WEIGHTS + i] = 1.5;
        }
        lower[TE_INDEX] = 0.0005;
        upper[TE_INDEX] = 0.01;
        lower[LE_INDEX] = -0.05;
        upper[LE_INDEX] = 0.775;
        Self { lower, upper }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for i in 0..N_PARAMS {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GeometryError::InvalidParams(format!(
                    "bound {i} is not an ordered finite interval: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }
}

/// Discrete airfoil surfaces sampled at shared chordwise stations.
#[derive(Debug, Clone, PartialEq)]
pub struct AirfoilGeometry {
    pub x: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub y_lower: Vec<f64>,
}

impl AirfoilGeometry {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Thickness distribution `y_upper - y_lower`.
    pub fn thickness(&self) -> Vec<f64> {
        self.y_upper
            .iter()
            .zip(&self.y_lower)
            .map(|(u, l)| u - l)
            .collect()
    }

    pub fn camber(&self) -> Vec<f64> {
        self.y_upper
            .iter()
            .zip(&self.y_lower)
            .map(|(u, l)| 0.5 * (u + l))
            .collect()
    }

    pub fn scaled_vertically(&self, factor: f64) -> Self {
        Self {
            x: self.x.clone(),
            y_upper: self.y_upper.iter().map(|y| y * factor).collect(),
            y_lower: self.y_lower.iter().map(|y| y * factor).collect(),
        }
    }

    /// Selig-ordered closed loop: trailing edge, upper surface, leading
    /// edge, lower surface, trailing edge.
    pub fn to_selig(&self) -> Vec<(f64, f64)> {
        let n = self.x.len();
        let mut pts = Vec::with_capacity(2 * n - 1);
        for i in (0..n).rev() {
            pts.push((self.x[i], self.y_upper[i]));
        }
        for i in 1..n {
            pts.push((self.x[i], self.y_lower[i]));
        }
        pts
    }

    pub fn all_finite(&self) -> bool {
        self.x
            .iter()
            .chain(&self.y_upper)
            .chain(&self.y_lower)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    Crossing,
    TooThin,
    NonFinite,
}

impl InvalidReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            InvalidReason::Crossing => "crossing",
            InvalidReason::TooThin => "too_thin",
            InvalidReason::NonFinite => "non_finite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }

    pub fn reason(&self) -> Option<InvalidReason> {
        match self {
            Validity::Valid => None,
            Validity::Invalid(r) => Some(*r),
        }
    }
}

/// Validity check with the default 0.1% chord thickness floor.
pub fn is_valid(geom: &AirfoilGeometry) -> Validity {
    check_validity(geom, DEFAULT_THICKNESS_FLOOR)
}

pub fn check_validity(geom: &AirfoilGeometry, thickness_floor: f64) -> Validity {
    if geom.is_empty() || !geom.all_finite() {
        return Validity::Invalid(InvalidReason::NonFinite);
    }
    let n = geom.len();
    // Leading-edge and trailing-edge stations may legitimately touch.
    let crossing = (1..n.saturating_sub(1))
        .any(|i| geom.y_upper[i] - geom.y_lower[i] < -CROSSING_TOLERANCE);
    if crossing {
        return Validity::Invalid(InvalidReason::Crossing);
    }
    if max_thickness(geom) < thickness_floor {
        return Validity::Invalid(InvalidReason::TooThin);
    }
    Validity::Valid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bounds_match_table() {
        let b = ParamBounds::default();
        b.validate().unwrap();
        assert_eq!(b.lower[0], -1.5);
        assert_eq!(b.upper[7], 1.25);
        assert_eq!(b.lower[8], -0.75);
        assert_eq!(b.upper[15], 1.5);
        assert_eq!((b.lower[TE_INDEX], b.upper[TE_INDEX]), (0.0005, 0.01));
        assert_eq!((b.lower[LE_INDEX], b.upper[LE_INDEX]), (-0.05, 0.775));
    }

    #[test]
    fn array_order_is_canonical() {
        let mut p = CstParams::zeros();
        p.upper[0] = 1.0;
        p.lower[0] = 2.0;
        p.trailing_edge_thickness = 3.0;
        p.leading_edge_weight = 4.0;
        let a = p.to_array();
        assert_eq!(a[0], 1.0);
        assert_eq!(a[8], 2.0);
        assert_eq!(a[16], 3.0);
        assert_eq!(a[17], 4.0);
        assert_eq!(CstParams::from_array(&a), p);
        assert!(CstParams::from_slice(&a[..17]).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let b = ParamBounds::default();
        let mut p = CstParams::zeros();
        p.trailing_edge_thickness = 0.0025;
        let n = p.normalized(&b);
        assert!(n.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = CstParams::denormalized(&n, &b);
        for (a, c) in back.to_array().iter().zip(p.to_array()) {
            assert!((a - c).abs() < 1e-15);
        }
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut b = ParamBounds::default();
        b.lower[3] = 2.0;
        assert!(b.validate().is_err());
    }
}
