//! Diagonal Gaussian policy head with a state-independent log-std.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

pub fn clamp_log_std(s: f64) -> f64 {
    s.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// Draw an action and return it with its log-density.
pub fn sample<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let action: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + clamp_log_std(*s).exp() * z
        })
        .collect();
    let lp = log_prob(mean, log_std, &action);
    (action, lp)
}

pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let s = clamp_log_std(*s);
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - half_ln_2pi
        })
        .sum()
}

/// Σ (s + ½ ln(2πe)).
pub fn entropy(log_std: &[f64]) -> f64 {
    let c = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
    log_std.iter().map(|s| clamp_log_std(*s) + c).sum()
}

/// Partial derivatives of `log_prob` with respect to each mean and each
/// (unclamped) log-std; the log-std derivative is zero where clamping is active.
pub fn log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dm = Vec::with_capacity(mean.len());
    let mut ds = Vec::with_capacity(mean.len());
    for ((m, s), a) in mean.iter().zip(log_std).zip(action) {
        let sc = clamp_log_std(*s);
        let var = (2.0 * sc).exp();
        dm.push((a - m) / var);
        let inside = *s > LOG_STD_MIN && *s < LOG_STD_MAX;
        ds.push(if inside { (a - m) * (a - m) / var - 1.0 } else { 0.0 });
    }
    (dm, ds)
}

/// Derivative of `entropy` with respect to each log-std.
pub fn entropy_grad(log_std: &[f64]) -> Vec<f64> {
    log_std
        .iter()
        .map(|s| if *s > LOG_STD_MIN && *s < LOG_STD_MAX { 1.0 } else { 0.0 })
        .collect()
}
