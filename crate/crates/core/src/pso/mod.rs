//! Global-best particle swarm over the CST design space.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::AeroModel;
use crate::eval::EvalRecord;
use crate::geometry::{cst_to_geometry, is_valid, max_thickness, CstParams, ParamBounds, DEFAULT_STATIONS, N_PARAMS};

#[derive(Debug, Error)]
pub enum PsoError {
    #[error("invalid PSO config: {0}")]
    InvalidConfig(String),
    #[error("seed design cannot be evaluated: {0}")]
    Seed(String),
}

/// Keep the maximum thickness within `tolerance` (relative) of `mt0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThicknessConstraint {
    pub mt0: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub max_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Per-component speed limit as a fraction of the bound width.
    pub velocity_clamp: f64,
    /// Half-width of the uniform perturbation that spreads the initial
    /// swarm around the seed, as a fraction of the bound width.
    pub init_spread: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 30,
            max_iterations: 700,
            inertia: 0.729,
            cognitive: 1.49,
            social: 1.49,
            velocity_clamp: 0.2,
            init_spread: 0.1,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), PsoError> {
        let bad = |m: &str| Err(PsoError::InvalidConfig(m.into()));
        if self.swarm_size == 0 {
            return bad("swarm_size must be positive");
        }
        for (name, v) in [
            ("inertia", self.inertia),
            ("cognitive", self.cognitive),
            ("social", self.social),
            ("velocity_clamp", self.velocity_clamp),
            ("init_spread", self.init_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Fitness to maximize; infeasible or unsolvable designs score −∞.
pub trait Objective: Sync {
    fn fitness(&self, x: &[f64; N_PARAMS]) -> f64;
}

impl<F: Fn(&[f64; N_PARAMS]) -> f64 + Sync> Objective for F {
    fn fitness(&self, x: &[f64; N_PARAMS]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoResult {
    pub best: [f64; N_PARAMS],
    pub best_fitness: f64,
    /// Global best after initialization and after each iteration.
    pub trace: Vec<f64>,
    pub evaluations: u64,
}

struct Particle {
    x: [f64; N_PARAMS],
    v: [f64; N_PARAMS],
    best_x: [f64; N_PARAMS],
    best_f: f64,
}

/// Maximize `objective` starting from a swarm around `seed`. Particle 0 sits
/// exactly on the seed and every particle starts at rest. Positions stay in
/// `bounds`; the objective is called `swarm_size·(max_iterations + 1)` times.
pub fn pso_optimize(
    seed: &[f64; N_PARAMS],
    bounds: &ParamBounds,
    objective: &dyn Objective,
    config: &PsoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PsoResult, PsoError> {
    config.validate()?;
    let width: [f64; N_PARAMS] = std::array::from_fn(|i| bounds.width(i));
    let clamp_x = |x: &mut [f64; N_PARAMS]| {
        for i in 0..N_PARAMS {
            x[i] = x[i].clamp(bounds.lower[i], bounds.upper[i]);
        }
    };
    let mut seed_x = *seed;
    clamp_x(&mut seed_x);

    let mut positions = Vec::with_capacity(config.swarm_size);
    positions.push(seed_x);
    for _ in 1..config.swarm_size {
        let mut x = seed_x;
        for i in 0..N_PARAMS {
            let s = config.init_spread * width[i];
            if s > 0.0 {
                x[i] += rng.random_range(-s..=s);
            }
        }
        clamp_x(&mut x);
        positions.push(x);
    }
    let fitness: Vec<f64> = positions.par_iter().map(|x| score(objective, x)).collect();
    let mut evaluations = config.swarm_size as u64;
    let mut swarm: Vec<Particle> = positions
        .into_iter()
        .zip(fitness)
        .map(|(x, f)| Particle {
            x,
            v: [0.0; N_PARAMS],
            best_x: x,
            best_f: f,
        })
        .collect();
    let (mut g_x, mut g_f) = global_best(&swarm);
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    trace.push(g_f);

    for _ in 0..config.max_iterations {
        for p in swarm.iter_mut() {
            for i in 0..N_PARAMS {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let vmax = config.velocity_clamp * width[i];
                let v = config.inertia * p.v[i]
                    + config.cognitive * r1 * (p.best_x[i] - p.x[i])
                    + config.social * r2 * (g_x[i] - p.x[i]);
                p.v[i] = v.clamp(-vmax, vmax);
                p.x[i] += p.v[i];
            }
            clamp_x(&mut p.x);
        }
        let fitness: Vec<f64> = swarm.par_iter().map(|p| score(objective, &p.x)).collect();
        evaluations += config.swarm_size as u64;
        for (p, f) in swarm.iter_mut().zip(fitness) {
            if f > p.best_f {
                p.best_f = f;
                p.best_x = p.x;
            }
        }
        let (x, f) = global_best(&swarm);
        if f > g_f {
            g_x = x;
            g_f = f;
        }
        trace.push(g_f);
    }
    Ok(PsoResult {
        best: g_x,
        best_fitness: g_f,
        trace,
        evaluations,
    })
}

fn score(objective: &dyn Objective, x: &[f64; N_PARAMS]) -> f64 {
    let f = objective.fitness(x);
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

fn global_best(swarm: &[Particle]) -> ([f64; N_PARAMS], f64) {
    let mut best = &swarm[0];
    for p in &swarm[1..] {
        if p.best_f > best.best_f {
            best = p;
        }
    }
    (best.best_x, best.best_f)
}

/// CL/CD of a CST design under `model`, with optional thickness constraint.
pub struct AirfoilObjective {
    pub model: Arc<dyn AeroModel>,
    pub constraint: Option<ThicknessConstraint>,
    pub stations: usize,
}

impl AirfoilObjective {
    pub fn new(model: Arc<dyn AeroModel>, constraint: Option<ThicknessConstraint>) -> Self {
        Self {
            model,
            constraint,
            stations: DEFAULT_STATIONS,
        }
    }

    /// CL/CD and max thickness, or `None` when the design cannot be solved.
    pub fn ratio(&self, params: &CstParams) -> Option<(f64, f64)> {
        let geom = cst_to_geometry(params, self.stations).ok()?;
        if !is_valid(&geom).is_valid() {
            return None;
        }
        let mt = max_thickness(&geom);
        let c = self.model.evaluate(&geom).ok()?.coefficients?;
        let r = c.cl / c.cd;
        r.is_finite().then_some((r, mt))
    }
}

impl Objective for AirfoilObjective {
    fn fitness(&self, x: &[f64; N_PARAMS]) -> f64 {
        let Some((ratio, mt)) = self.ratio(&CstParams::from_array(x)) else {
            return f64::NEG_INFINITY;
        };
        match self.constraint {
            Some(c) if (mt - c.mt0).abs() / c.mt0 > c.tolerance => f64::NEG_INFINITY,
            _ => ratio,
        }
    }
}

/// Optimize one airfoil and summarize it in the same record shape as a
/// policy evaluation. `keep_thickness` is the relative tolerance on the
/// seed's maximum thickness.
pub fn optimize_airfoil(
    name: &str,
    seed: &CstParams,
    bounds: &ParamBounds,
    model: Arc<dyn AeroModel>,
    keep_thickness: Option<f64>,
    config: &PsoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(EvalRecord, PsoResult), PsoError> {
    let started = Instant::now();
    let probe = AirfoilObjective::new(model.clone(), None);
    let (initial, mt0) = probe
        .ratio(seed)
        .ok_or_else(|| PsoError::Seed(format!("{name} does not solve")))?;
    let constraint = keep_thickness.map(|tolerance| ThicknessConstraint { mt0, tolerance });
    let objective = AirfoilObjective::new(model, constraint);
    let result = pso_optimize(&seed.to_array(), bounds, &objective, config, rng)?;
    let best_step = result
        .trace
        .iter()
        .position(|&f| f == result.best_fitness)
        .unwrap_or(0);
    let (best, mt_best) = probe
        .ratio(&CstParams::from_array(&result.best))
        .unwrap_or((initial, mt0));
    let record = EvalRecord {
        name: name.to_string(),
        converged: true,
        initial_ratio: initial,
        best_ratio: best,
        improvement: best - initial,
        mt_initial: mt0,
        mt_at_best: mt_best,
        delta_mt_percent: 100.0 * (mt_best - mt0).abs() / mt0,
        best_step,
        episode_length: config.max_iterations,
        termination: "max_iterations".into(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((record, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sym_bounds() -> ParamBounds {
        ParamBounds {
            lower: [-1.0; N_PARAMS],
            upper: [1.0; N_PARAMS],
        }
    }

    fn sphere(x: &[f64; N_PARAMS]) -> f64 {
        -x.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn sphere_reaches_origin() {
        let seed = [0.7; N_PARAMS];
        let cfg = PsoConfig {
            init_spread: 0.5,
            ..Default::default()
        };
        let r = pso_optimize(&seed, &sym_bounds(), &sphere, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(-r.best_fitness < 1e-3, "{}", r.best_fitness);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.evaluations, 30 * 701);
        assert_eq!(r.trace.len(), 701);
    }

    #[test]
    fn degenerate_swarm_stays_on_seed() {
        let seed = [0.3; N_PARAMS];
        let cfg = PsoConfig {
            swarm_size: 1,
            cognitive: 0.0,
            social: 0.0,
            max_iterations: 50,
            ..Default::default()
        };
        let r = pso_optimize(&seed, &sym_bounds(), &sphere, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.best, seed);
        assert_eq!(r.evaluations, 51);
    }

    #[test]
    fn call_count_is_exact() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let calls = AtomicU64::new(0);
        let f = |x: &[f64; N_PARAMS]| {
            calls.fetch_add(1, Ordering::Relaxed);
            sphere(x)
        };
        let cfg = PsoConfig {
            swarm_size: 7,
            max_iterations: 13,
            ..Default::default()
        };
        let r = pso_optimize(&[0.5; N_PARAMS], &sym_bounds(), &f, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 7 * 14);
        assert_eq!(r.evaluations, 7 * 14);
    }

    #[test]
    fn positions_respect_bounds() {
        // Optimum outside the box: the best must sit on the boundary.
        let f = |x: &[f64; N_PARAMS]| x.iter().sum::<f64>();
        let cfg = PsoConfig {
            max_iterations: 100,
            ..Default::default()
        };
        let r = pso_optimize(&[0.0; N_PARAMS], &sym_bounds(), &f, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(r.best.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn nan_fitness_is_infeasible() {
        let f = |x: &[f64; N_PARAMS]| if x[0] > 0.0 { f64::NAN } else { -x[0].abs() };
        let cfg = PsoConfig {
            max_iterations: 20,
            ..Default::default()
        };
        let r = pso_optimize(&[-0.5; N_PARAMS], &sym_bounds(), &f, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(r.best[0] <= 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PsoConfig {
            swarm_size: 0,
            ..Default::default()
        };
        assert!(pso_optimize(&[0.0; N_PARAMS], &sym_bounds(), &sphere, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }
}
