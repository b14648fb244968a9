//! The shape-optimization environment.
//!
//! State is the CST vector, actions are 18 reals in [-1, 1] scaled by a
//! per-component step size, and the reward is the change in the
//! thickness-weighted, confidence-weighted lift-to-drag ratio.

mod pool;

pub use pool::{bundled_data_dir, default_pool_names, PoolEntry, ResetPool, DATA_DIR_VAR, POOL_CACHE_VERSION};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::{self, AeroError, AeroResult, Fidelity, FlowConditions, SolverConfig};
use crate::geometry::{
    cst_to_geometry, is_valid, max_thickness, AirfoilGeometry, CstParams, ParamBounds, Validity,
    DEFAULT_STATIONS, N_PARAMS,
};

pub type Observation = [f64; N_PARAMS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("reset failed: {0}")]
    Reset(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("reset pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Aero(#[from] AeroError),
}

/// Anything that maps a geometry to lift, drag and confidence.
pub trait AeroModel: Send + Sync {
    fn evaluate(&self, geom: &AirfoilGeometry) -> Result<AeroResult, AeroError>;
    fn nominal_cost_ms(&self) -> f64;
}

/// The built-in solvers at fixed flow conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardSolver {
    pub flow: FlowConditions,
    pub config: SolverConfig,
}

impl AeroModel for StandardSolver {
    fn evaluate(&self, geom: &AirfoilGeometry) -> Result<AeroResult, AeroError> {
        aero::solve(geom, &self.flow, &self.config)
    }

    fn nominal_cost_ms(&self) -> f64 {
        self.config.nominal_cost_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub bounds: ParamBounds,
    pub episode_max_length: usize,
    pub sigma: f64,
    pub fidelity: Fidelity,
    pub reset_pool: Vec<String>,
    pub rng_seed: u64,
    pub flow: FlowConditions,
    /// Stations per surface when rebuilding geometry.
    pub stations: usize,
    /// Extra pool draws allowed when the initial solve fails.
    pub reset_retries: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            bounds: ParamBounds::default(),
            episode_max_length: 100,
            sigma: 0.0,
            fidelity: Fidelity::Low,
            reset_pool: default_pool_names(),
            rng_seed: 0,
            flow: FlowConditions::default(),
            stations: DEFAULT_STATIONS,
            reset_retries: 20,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.bounds
            .validate()
            .map_err(|e| EnvError::InvalidParams(e.to_string()))?;
        if self.episode_max_length == 0 {
            return Err(EnvError::InvalidParams("episode_max_length must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(EnvError::InvalidParams("sigma must be finite and non-negative".into()));
        }
        self.flow.validate()?;
        Ok(())
    }

    pub fn solver(&self) -> StandardSolver {
        StandardSolver {
            flow: self.flow,
            config: SolverConfig::for_fidelity(self.fidelity),
        }
    }
}

/// Per-component step size: bound width divided by the episode length.
pub fn alpha_vector(config: &EnvConfig) -> [f64; N_PARAMS] {
    let len = config.episode_max_length as f64;
    std::array::from_fn(|i| (config.bounds.upper[i] - config.bounds.lower[i]) / len)
}

/// One state update: `state + α ⊙ clamp(action, −1, 1)`, clamped to the bounds.
pub fn apply_action(
    params: &CstParams,
    action: &[f64; N_PARAMS],
    alpha: &[f64; N_PARAMS],
    bounds: &ParamBounds,
) -> CstParams {
    let mut next = params.to_array();
    for i in 0..N_PARAMS {
        let a = action[i].clamp(-1.0, 1.0);
        next[i] = (next[i] + alpha[i] * a).clamp(bounds.lower[i], bounds.upper[i]);
    }
    CstParams::from_array(&next)
}

/// Gaussian thickness kernel λ = exp(−σ (mt/mt0 − 1)²).
pub fn thickness_kernel(mt: f64, mt0: f64, sigma: f64) -> Result<f64, EnvError> {
    if !(mt0 > 0.0) {
        return Err(EnvError::InvalidParams(format!("mt0 must be positive, got {mt0}")));
    }
    if !(sigma >= 0.0) {
        return Err(EnvError::InvalidParams(format!("sigma must be non-negative, got {sigma}")));
    }
    let r = mt / mt0 - 1.0;
    Ok((-sigma * r * r).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Running,
    MaxSteps,
    SolverFailure,
    InvalidGeometry,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::Running => "running",
            TerminationReason::MaxSteps => "max_steps",
            TerminationReason::SolverFailure => "solver_failure",
            TerminationReason::InvalidGeometry => "invalid_geometry",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    /// Lift, drag and their ratio; absent when the step failed.
    pub cl: Option<f64>,
    pub cd: Option<f64>,
    pub ratio: Option<f64>,
    pub kappa: f64,
    pub lambda: f64,
    pub mt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub params: CstParams,
    pub reward: f64,
    pub terminated: bool,
    pub reason: TerminationReason,
    pub info: StepInfo,
}

impl StepOutcome {
    /// Episode ended by the step limit rather than by a failure.
    pub fn truncated(&self) -> bool {
        self.reason == TerminationReason::MaxSteps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub params: CstParams,
    pub step_index: usize,
    pub mt0: f64,
    pub prev_term: f64,
    pub episode_return: f64,
    pub done: bool,
    /// Pool name, or the caller's label for explicit starts.
    pub start: String,
    pub initial: StepInfo,
}

/// Solver calls and their nominal cost since construction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub solver_calls: u64,
    pub nominal_ms: f64,
}

pub struct AirfoilEnv {
    config: EnvConfig,
    alpha: [f64; N_PARAMS],
    pool: Arc<ResetPool>,
    model: Arc<dyn AeroModel>,
    rng: ChaCha8Rng,
    state: Option<EnvState>,
    ledger: CostLedger,
}

enum Evaluated {
    Ok { info: StepInfo, term: f64 },
    Failed { reason: TerminationReason, mt: f64 },
}

impl AirfoilEnv {
    /// Environment using the built-in solver selected by `config.fidelity`.
    pub fn new(config: EnvConfig, pool: Arc<ResetPool>) -> Result<Self, EnvError> {
        let model = Arc::new(config.solver());
        Self::with_model(config, pool, model)
    }

    pub fn with_model(
        config: EnvConfig,
        pool: Arc<ResetPool>,
        model: Arc<dyn AeroModel>,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        let alpha = alpha_vector(&config);
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self {
            config,
            alpha,
            pool,
            model,
            rng,
            state: None,
            ledger: CostLedger::default(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn alpha(&self) -> &[f64; N_PARAMS] {
        &self.alpha
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger
    }

    pub fn pool(&self) -> &ResetPool {
        &self.pool
    }

    pub fn observe(&self, params: &CstParams) -> Observation {
        params.normalized(&self.config.bounds)
    }

    /// Start an episode from a uniformly drawn pool airfoil.
    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        if self.pool.is_empty() {
            return Err(EnvError::Reset("reset pool is empty".into()));
        }
        let attempts = self.config.reset_retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            let k = self.rng.random_range(0..self.pool.len());
            let entry = self.pool.entries[k].clone();
            match self.reset_to(entry.params, &entry.name) {
                Ok(obs) => return Ok(obs),
                Err(EnvError::Reset(msg)) => last = msg,
                Err(e) => return Err(e),
            }
        }
        Err(EnvError::Reset(format!("no pool airfoil solved after {attempts} draws (last: {last})")))
    }

    /// Start an episode from explicit parameters (clamped into bounds).
    pub fn reset_to(&mut self, params: CstParams, label: &str) -> Result<Observation, EnvError> {
        if !params.is_finite() {
            return Err(EnvError::InvalidParams("non-finite start parameters".into()));
        }
        let params = params.clamped(&self.config.bounds);
        let (info, term, mt0) = match self.evaluate(&params, None)? {
            Evaluated::Ok { info, term } => (info, term, info.mt),
            Evaluated::Failed { reason, .. } => {
                self.state = None;
                return Err(EnvError::Reset(format!("{label}: initial {}", reason.as_str())));
            }
        };
        if !(mt0 > 0.0) {
            self.state = None;
            return Err(EnvError::Reset(format!("{label}: zero initial thickness")));
        }
        self.state = Some(EnvState {
            params,
            step_index: 0,
            mt0,
            prev_term: term,
            episode_return: term,
            done: false,
            start: label.to_string(),
            initial: info,
        });
        Ok(self.observe(&params))
    }

    pub fn step(&mut self, action: &[f64; N_PARAMS]) -> Result<StepOutcome, EnvError> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| EnvError::ContractViolation("step before reset".into()))?;
        if state.done {
            return Err(EnvError::ContractViolation("step on a terminated episode".into()));
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(EnvError::InvalidParams("NaN in action".into()));
        }
        let params = apply_action(&state.params, action, &self.alpha, &self.config.bounds);
        let mt0 = state.mt0;
        let evaluated = self.evaluate(&params, Some(mt0))?;

        let state = self.state.as_mut().expect("checked above");
        state.params = params;
        state.step_index += 1;
        let (reward, reason, info) = match evaluated {
            Evaluated::Ok { info, term } => {
                let reward = term - state.prev_term;
                state.prev_term = term;
                let reason = if state.step_index >= self.config.episode_max_length {
                    TerminationReason::MaxSteps
                } else {
                    TerminationReason::Running
                };
                (reward, reason, info)
            }
            Evaluated::Failed { reason, mt } => {
                let reward = -state.prev_term;
                state.prev_term = 0.0;
                let info = StepInfo {
                    kappa: 0.0,
                    lambda: thickness_kernel(mt, mt0, self.config.sigma).unwrap_or(0.0),
                    mt,
                    ..Default::default()
                };
                (reward, reason, info)
            }
        };
        state.episode_return += reward;
        let terminated = reason != TerminationReason::Running;
        state.done = terminated;
        Ok(StepOutcome {
            observation: params.normalized(&self.config.bounds),
            params,
            reward,
            terminated,
            reason,
            info,
        })
    }

    /// Build the geometry, solve, and form λκ·CL/CD. `mt0 = None` means
    /// this is the episode start (λ = 1).
    fn evaluate(&mut self, params: &CstParams, mt0: Option<f64>) -> Result<Evaluated, EnvError> {
        let geom = cst_to_geometry(params, self.config.stations)
            .map_err(|e| EnvError::InvalidParams(e.to_string()))?;
        let mt = max_thickness(&geom);
        if let Validity::Invalid(_) = is_valid(&geom) {
            return Ok(Evaluated::Failed {
                reason: TerminationReason::InvalidGeometry,
                mt,
            });
        }
        self.ledger.solver_calls += 1;
        self.ledger.nominal_ms += self.model.nominal_cost_ms();
        let result = match self.model.evaluate(&geom) {
            Ok(r) => r,
            Err(AeroError::GeometryRejected(_)) => {
                return Ok(Evaluated::Failed {
                    reason: TerminationReason::InvalidGeometry,
                    mt,
                })
            }
            Err(e) => return Err(e.into()),
        };
        let Some(c) = result.coefficients else {
            return Ok(Evaluated::Failed {
                reason: TerminationReason::SolverFailure,
                mt,
            });
        };
        let ratio = c.cl / c.cd;
        if !ratio.is_finite() {
            return Ok(Evaluated::Failed {
                reason: TerminationReason::SolverFailure,
                mt,
            });
        }
        let lambda = match mt0 {
            Some(mt0) => thickness_kernel(mt, mt0, self.config.sigma)?,
            None => 1.0,
        };
        let kappa = result.confidence;
        Ok(Evaluated::Ok {
            info: StepInfo {
                cl: Some(c.cl),
                cd: Some(c.cd),
                ratio: Some(ratio),
                kappa,
                lambda,
                mt,
            },
            term: lambda * kappa * ratio,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fit_cst, naca};
    use rand_distr::{Distribution, Uniform};

    fn fitted(name: &str) -> CstParams {
        let pts = naca::naca4_coordinates(name, 161).unwrap();
        fit_cst(&pts, &ParamBounds::default()).unwrap().params
    }

    fn pool_of(names: &[&str]) -> Arc<ResetPool> {
        Arc::new(ResetPool::from_params(
            names.iter().map(|n| (n.to_string(), fitted(n))),
        ))
    }

    fn env(names: &[&str], sigma: f64, seed: u64) -> AirfoilEnv {
        let cfg = EnvConfig {
            sigma,
            rng_seed: seed,
            ..Default::default()
        };
        AirfoilEnv::new(cfg, pool_of(names)).unwrap()
    }

    #[test]
    fn alpha_from_bounds() {
        let cfg = EnvConfig::default();
        let a = alpha_vector(&cfg);
        assert_eq!(a[0], (1.25 - -1.5) / 100.0);
        assert!((a[0] - 0.0275).abs() < 1e-15);
        assert!((a[16] - 9.5e-5).abs() < 1e-15);
        let doubled = alpha_vector(&EnvConfig {
            episode_max_length: 200,
            ..cfg
        });
        for i in 0..N_PARAMS {
            assert_eq!(doubled[i] * 2.0, a[i]);
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(thickness_kernel(0.12, 0.12, 37.0).unwrap(), 1.0);
        assert!((thickness_kernel(0.9, 1.0, 15.0).unwrap() - (-0.15f64).exp()).abs() < 1e-15);
        assert!((thickness_kernel(0.9, 1.0, 15.0).unwrap() - 0.8607).abs() < 1e-4);
        assert_eq!(thickness_kernel(0.3, 0.1, 0.0).unwrap(), 1.0);
        assert!(thickness_kernel(0.1, 0.0, 1.0).is_err());
        let near = thickness_kernel(1.05, 1.0, 10.0).unwrap();
        let far = thickness_kernel(0.8, 1.0, 10.0).unwrap();
        assert!(far < near && near < 1.0);
    }

    #[test]
    fn singleton_pool_reset_is_the_fit() {
        let mut e = env(&["naca0012"], 0.0, 7);
        let obs = e.reset().unwrap();
        let st = e.state().unwrap();
        assert_eq!(st.params, fitted("naca0012"));
        assert_eq!(obs, fitted("naca0012").normalized(&ParamBounds::default()));
        assert_eq!(st.step_index, 0);
        assert!((st.mt0 - 0.12).abs() < 2e-3);
        assert_eq!(st.prev_term, st.initial.kappa * st.initial.ratio.unwrap());
    }

    #[test]
    fn empty_pool_is_reset_error() {
        let mut e = AirfoilEnv::new(EnvConfig::default(), Arc::new(ResetPool::default())).unwrap();
        assert!(matches!(e.reset(), Err(EnvError::Reset(_))));
    }

    #[test]
    fn pool_draws_are_uniform() {
        let names: Vec<String> = (0..20).map(|i| format!("a{i}")).collect();
        let base = fitted("naca0012");
        let pool = Arc::new(ResetPool::from_params(names.iter().map(|n| (n.clone(), base))));
        let mut e = AirfoilEnv::new(EnvConfig { rng_seed: 3, ..Default::default() }, pool).unwrap();
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            e.reset().unwrap();
            *counts.entry(e.state().unwrap().start.clone()).or_insert(0usize) += 1;
        }
        let expected = n as f64 / 20.0;
        let chi2: f64 = names
            .iter()
            .map(|k| (counts.get(k).copied().unwrap_or(0) as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square with 19 degrees of freedom.
        assert!(chi2 < 43.82, "chi2 {chi2}");
        let sd = (n as f64 * 0.05 * 0.95).sqrt();
        for k in &names {
            assert!((counts[k] as f64 - expected).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn zero_action_is_identity() {
        let mut e = env(&["naca2412"], 15.0, 1);
        e.reset().unwrap();
        let before = e.state().unwrap().clone();
        let out = e.step(&[0.0; N_PARAMS]).unwrap();
        assert_eq!(out.params, before.params);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.info.lambda, 1.0);
    }

    #[test]
    fn saturating_component_stays_on_bound() {
        let mut p = fitted("naca0012");
        p.upper[3] = 1.25;
        let mut e = env(&["naca0012"], 0.0, 1);
        e.reset_to(p, "edge").unwrap();
        let mut a = [0.0; N_PARAMS];
        a[3] = 1.0;
        let out = e.step(&a).unwrap();
        assert_eq!(out.params.upper[3], 1.25);
        // Out-of-range actions are clamped to ±1 before scaling.
        a[3] = -50.0;
        let out = e.step(&a).unwrap();
        assert!((out.params.upper[3] - (1.25 - 0.0275)).abs() < 1e-15);
    }

    #[test]
    fn sigma_zero_reward_is_ratio_difference() {
        let mut e = env(&["naca4412"], 0.0, 2);
        e.reset().unwrap();
        let mut prev = e.state().unwrap().initial;
        let mut a = [0.0; N_PARAMS];
        a[2] = 0.7;
        a[12] = -0.4;
        for _ in 0..5 {
            let out = e.step(&a).unwrap();
            assert_eq!(out.info.lambda, 1.0);
            let expect = out.info.kappa * out.info.ratio.unwrap() - prev.kappa * prev.ratio.unwrap();
            assert!((out.reward - expect).abs() < 1e-12);
            prev = out.info;
        }
    }

    #[test]
    fn episode_ends_at_limit_and_then_refuses_steps() {
        let mut e = AirfoilEnv::new(
            EnvConfig {
                episode_max_length: 3,
                ..Default::default()
            },
            pool_of(&["naca0012"]),
        )
        .unwrap();
        e.reset().unwrap();
        let z = [0.0; N_PARAMS];
        assert_eq!(e.step(&z).unwrap().reason, TerminationReason::Running);
        assert_eq!(e.step(&z).unwrap().reason, TerminationReason::Running);
        let last = e.step(&z).unwrap();
        assert!(last.terminated && last.truncated());
        assert!(matches!(e.step(&z), Err(EnvError::ContractViolation(_))));
    }

    #[test]
    fn crossing_surfaces_end_episode_with_negated_term() {
        let mut e = env(&["naca0006"], 0.0, 1);
        e.reset().unwrap();
        let prev = e.state().unwrap().prev_term;
        // Push the upper surface down and the lower surface up.
        let mut a = [0.0; N_PARAMS];
        for i in 0..8 {
            a[i] = -1.0;
            a[8 + i] = 1.0;
        }
        let out = loop {
            let out = e.step(&a).unwrap();
            if out.terminated {
                break out;
            }
        };
        assert_eq!(out.reason, TerminationReason::InvalidGeometry);
        assert!(out.terminated && !out.truncated());
        assert!(e.state().unwrap().step_index < 100);
        assert!(out.reward < 0.0 && prev > 0.0);
        assert!(e.state().unwrap().episode_return.abs() < 1e-9);
    }

    struct Flaky;

    impl AeroModel for Flaky {
        fn evaluate(&self, geom: &AirfoilGeometry) -> Result<AeroResult, AeroError> {
            // Fails once the section gets thicker than 14% chord.
            if max_thickness(geom) > 0.14 {
                return Ok(AeroResult {
                    coefficients: None,
                    confidence: 1.0,
                    cost_ms: 1.0,
                    failure: Some("stub".into()),
                });
            }
            aero::solve(geom, &FlowConditions::default(), &SolverConfig::low())
        }

        fn nominal_cost_ms(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn solver_failure_terminates_and_is_counted() {
        let mut e = AirfoilEnv::with_model(EnvConfig::default(), pool_of(&["naca0012"]), Arc::new(Flaky)).unwrap();
        e.reset().unwrap();
        let mut a = [0.0; N_PARAMS];
        a[..8].fill(1.0);
        let mut steps = 0;
        loop {
            let out = e.step(&a).unwrap();
            steps += 1;
            if out.terminated {
                assert_eq!(out.reason, TerminationReason::SolverFailure);
                assert!(out.info.ratio.is_none());
                break;
            }
        }
        assert!(steps < 100);
        assert_eq!(e.ledger().solver_calls, steps + 1);
        assert_eq!(e.ledger().nominal_ms, (steps + 1) as f64);
    }

    #[test]
    fn failing_reset_pool_exhausts_retries() {
        let mut e = AirfoilEnv::with_model(
            EnvConfig { reset_retries: 4, ..Default::default() },
            pool_of(&["naca0018"]),
            Arc::new(Flaky),
        )
        .unwrap();
        assert!(matches!(e.reset(), Err(EnvError::Reset(_))));
        assert_eq!(e.ledger().solver_calls, 5);
    }

    #[test]
    fn telescoping_sum_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = Uniform::new_inclusive(-1.0, 1.0).unwrap();
        for (k, sigma) in [0.0, 15.0, 100.0].into_iter().enumerate() {
            let mut e = env(&["naca0012", "naca2412", "naca6415"], sigma, k as u64);
            for _ in 0..20 {
                e.reset().unwrap();
                let mut total = e.state().unwrap().prev_term;
                let last = loop {
                    let a: [f64; N_PARAMS] = std::array::from_fn(|_| u.sample(&mut rng));
                    let out = e.step(&a).unwrap();
                    assert!(out.params.within(&ParamBounds::default()));
                    total += out.reward;
                    if out.terminated {
                        break out;
                    }
                };
                let end = match last.info.ratio {
                    Some(r) => last.info.lambda * last.info.kappa * r,
                    None => 0.0,
                };
                assert!((total - end).abs() < 1e-9, "{total} vs {end}");
                assert!(e.state().unwrap().step_index <= 100);
            }
        }
    }
}
