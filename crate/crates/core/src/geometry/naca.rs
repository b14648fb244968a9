//! NACA 4-digit section generator, used to build the bundled airfoil sets.

use super::GeometryError;

/// Half-thickness of a NACA 4-digit section (open trailing edge form).
pub fn thickness_half(x: f64, t: f64) -> f64 {
    5.0 * t
        * (0.2969 * x.sqrt() - 0.1260 * x - 0.3516 * x * x + 0.2843 * x.powi(3)
            - 0.1015 * x.powi(4))
}

fn camber(x: f64, m: f64, p: f64) -> (f64, f64) {
    if m == 0.0 || p == 0.0 {
        return (0.0, 0.0);
    }
    if x < p {
        (
            m / (p * p) * (2.0 * p * x - x * x),
            2.0 * m / (p * p) * (p - x),
        )
    } else {
        let q = (1.0 - p) * (1.0 - p);
        (
            m / q * ((1.0 - 2.0 * p) + 2.0 * p * x - x * x),
            2.0 * m / q * (p - x),
        )
    }
}

/// Selig-ordered coordinates (TE → upper → LE → lower → TE) for a
/// 4-digit designation such as `"2412"` or `"naca2412"`.
pub fn naca4_coordinates(
    designation: &str,
    points_per_side: usize,
) -> Result<Vec<(f64, f64)>, GeometryError> {
    let digits = designation
        .trim()
        .trim_start_matches(|c: char| c.is_ascii_alphabetic() || c == ' ');
    if digits.len() != 4 || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(GeometryError::Parse(format!(
            "not a NACA 4-digit designation: {designation}"
        )));
    }
    if points_per_side < 3 {
        return Err(GeometryError::Parse("need at least 3 points per side".into()));
    }
    let d: Vec<f64> = digits.chars().map(|c| c.to_digit(10).unwrap() as f64).collect();
    let m = d[0] / 100.0;
    let p = d[1] / 10.0;
    let t = (d[2] * 10.0 + d[3]) / 100.0;

    let n = points_per_side;
    let mut upper = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    for i in 0..n {
        let beta = std::f64::consts::PI * i as f64 / (n - 1) as f64;
        let x = 0.5 * (1.0 - beta.cos());
        let yt = thickness_half(x, t);
        let (yc, slope) = camber(x, m, p);
        let th = slope.atan();
        upper.push((x - yt * th.sin(), yc + yt * th.cos()));
        lower.push((x + yt * th.sin(), yc - yt * th.cos()));
    }
    let mut pts: Vec<(f64, f64)> = upper.into_iter().rev().collect();
    pts.extend(lower.into_iter().skip(1));
    Ok(pts)
}

/// The 20 sections episodes are reset to.
pub const RESET_POOL: [&str; 20] = [
    "naca0006", "naca0009", "naca0012", "naca0015", "naca0018", "naca1408", "naca1410",
    "naca1412", "naca2412", "naca2415", "naca4412", "naca4415", "naca4420", "naca6412",
    "naca6415", "naca7421", "naca8409", "naca8412", "naca8415", "naca9421",
];
