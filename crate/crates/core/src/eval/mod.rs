//! Evaluation protocol: one deterministic episode per dataset airfoil,
//! per-airfoil metrics, aggregate statistics and comparison tables.

mod report;

pub use report::{compare_report, pareto_front, write_csv, ComparisonReport, ComparisonRow, ParetoPoint, Winner};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::Fidelity;
use crate::env::{alpha_vector, apply_action, AeroModel, AirfoilEnv, EnvConfig, EnvError, ResetPool, TerminationReason};
use crate::geometry::{fit_cst, read_dat, CstParams, ParamBounds, N_PARAMS};
use crate::nn::{gaussian, ActorCritic};
use crate::ppo::derive_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("no converged records to summarize")]
    Empty,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub params: CstParams,
    pub residual: f64,
}

/// Fit every `.dat` file in `dir`, sorted by name. Files that fail to
/// parse or fit are logged and skipped.
pub fn load_dataset(dir: &Path, bounds: &ParamBounds) -> Result<Vec<DatasetEntry>, EvalError> {
    let io = |e: std::io::Error| EvalError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("dat")))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let fitted = read_dat(&path).and_then(|c| fit_cst(&c.points, bounds));
        match fitted {
            Ok(fit) => out.push(DatasetEntry {
                name,
                params: fit.params,
                residual: fit.residual,
            }),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub name: String,
    /// False when the starting shape could not be solved; such records
    /// are excluded from statistics.
    pub converged: bool,
    pub initial_ratio: f64,
    pub best_ratio: f64,
    pub improvement: f64,
    pub mt_initial: f64,
    pub mt_at_best: f64,
    pub delta_mt_percent: f64,
    pub best_step: usize,
    pub episode_length: usize,
    pub termination: String,
    /// Seconds; kept out of the CSV so repeated runs compare byte-equal.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            deterministic: true,
            seed: 0,
        }
    }
}

/// Anything that proposes the next action from an observation.
pub trait Policy: Sync {
    fn action(&self, obs: &[f64; N_PARAMS], rng: &mut ChaCha8Rng, deterministic: bool) -> [f64; N_PARAMS];
}

impl Policy for ActorCritic {
    fn action(&self, obs: &[f64; N_PARAMS], rng: &mut ChaCha8Rng, deterministic: bool) -> [f64; N_PARAMS] {
        let mean = self.mean_action(obs).expect("observation size matches the agent");
        let a = if deterministic {
            mean
        } else {
            gaussian::sample(&mean, self.log_std.as_slice(), rng).0
        };
        let mut out = [0.0; N_PARAMS];
        out.copy_from_slice(&a);
        out
    }
}

/// Always proposes the zero action.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn action(&self, _: &[f64; N_PARAMS], _: &mut ChaCha8Rng, _: bool) -> [f64; N_PARAMS] {
        [0.0; N_PARAMS]
    }
}

/// Run one full episode per dataset entry. The environment is forced to
/// the high-fidelity solver unless `model` overrides it.
pub fn evaluate_policy(
    policy: &dyn Policy,
    dataset: &[DatasetEntry],
    env_config: &EnvConfig,
    options: EvalOptions,
    model: Option<Arc<dyn AeroModel>>,
) -> Result<Vec<EvalRecord>, EvalError> {
    let config = EnvConfig {
        fidelity: Fidelity::High,
        ..env_config.clone()
    };
    config.validate()?;
    let pool = Arc::new(ResetPool::default());
    let mut records: Vec<EvalRecord> = dataset
        .par_iter()
        .enumerate()
        .map(|(k, entry)| {
            let env = match &model {
                Some(m) => AirfoilEnv::with_model(config.clone(), pool.clone(), m.clone())?,
                None => AirfoilEnv::new(config.clone(), pool.clone())?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, k as u64));
            run_episode(policy, env, entry, options.deterministic, &mut rng)
        })
        .collect::<Result<_, EvalError>>()?;
    records.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(records)
}

fn run_episode(
    policy: &dyn Policy,
    mut env: AirfoilEnv,
    entry: &DatasetEntry,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EvalRecord, EvalError> {
    let started = Instant::now();
    let mut obs = match env.reset_to(entry.params, &entry.name) {
        Ok(o) => o,
        Err(EnvError::Reset(msg)) => {
            log::info!("excluding {}: {msg}", entry.name);
            return Ok(EvalRecord {
                name: entry.name.clone(),
                converged: false,
                initial_ratio: f64::NAN,
                best_ratio: f64::NAN,
                improvement: f64::NAN,
                mt_initial: f64::NAN,
                mt_at_best: f64::NAN,
                delta_mt_percent: f64::NAN,
                best_step: 0,
                episode_length: 0,
                termination: "initial_solve_failed".into(),
                wall_time_s: started.elapsed().as_secs_f64(),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let state = env.state().expect("reset succeeded");
    let initial = state.initial.ratio.expect("converged start has a ratio");
    let mt0 = state.mt0;
    let (mut best, mut mt_best, mut best_step) = (initial, mt0, 0);
    let mut reason = TerminationReason::Running;
    let mut length = 0;
    while reason == TerminationReason::Running {
        let action = policy.action(&obs, rng, deterministic);
        let out = env.step(&action)?;
        length += 1;
        reason = out.reason;
        obs = out.observation;
        if let Some(r) = out.info.ratio {
            if r > best {
                best = r;
                mt_best = out.info.mt;
                best_step = length;
            }
        }
    }
    Ok(EvalRecord {
        name: entry.name.clone(),
        converged: true,
        initial_ratio: initial,
        best_ratio: best,
        improvement: best - initial,
        mt_initial: mt0,
        mt_at_best: mt_best,
        delta_mt_percent: 100.0 * (mt_best - mt0).abs() / mt0,
        best_step,
        episode_length: length,
        termination: reason.as_str().into(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Design trajectory of one episode produced by the policy alone, with no
/// solver in the loop, and the seconds it took.
pub fn inference_rollout(
    policy: &dyn Policy,
    start: &CstParams,
    env_config: &EnvConfig,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<CstParams>, f64) {
    let started = Instant::now();
    let alpha = alpha_vector(env_config);
    let bounds = &env_config.bounds;
    let mut params = start.clamped(bounds);
    let mut trajectory = Vec::with_capacity(env_config.episode_max_length + 1);
    trajectory.push(params);
    for _ in 0..env_config.episode_max_length {
        let obs = params.normalized(bounds);
        let action = policy.action(&obs, rng, deterministic);
        params = apply_action(&params, &action, &alpha, bounds);
        trajectory.push(params);
    }
    (trajectory, started.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_evaluated: usize,
    pub n_excluded: usize,
    pub improvement: MeanStd,
    pub best_median: f64,
    pub best_iqr: f64,
    pub delta_mt_percent: MeanStd,
    /// Share of evaluated airfoils with strictly positive improvement.
    pub fraction_improved: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary, EvalError> {
    let ok: Vec<&EvalRecord> = records.iter().filter(|r| r.converged).collect();
    if ok.is_empty() {
        return Err(EvalError::Empty);
    }
    let imp: Vec<f64> = ok.iter().map(|r| r.improvement).collect();
    let dmt: Vec<f64> = ok.iter().map(|r| r.delta_mt_percent).collect();
    let mut best: Vec<f64> = ok.iter().map(|r| r.best_ratio).collect();
    best.sort_by(f64::total_cmp);
    Ok(EvalSummary {
        n_evaluated: ok.len(),
        n_excluded: records.len() - ok.len(),
        improvement: mean_std(&imp),
        best_median: quantile(&best, 0.5),
        best_iqr: quantile(&best, 0.75) - quantile(&best, 0.25),
        delta_mt_percent: mean_std(&dmt),
        fraction_improved: imp.iter().filter(|v| **v > 0.0).count() as f64 / ok.len() as f64,
    })
}

/// Write records (without wall times) as CSV.
pub fn write_records_csv<W: std::io::Write>(records: &[EvalRecord], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| EvalError::Other(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::bundled_data_dir;

    fn record(name: &str, best: f64, improvement: f64) -> EvalRecord {
        EvalRecord {
            name: name.into(),
            converged: true,
            initial_ratio: best - improvement,
            best_ratio: best,
            improvement,
            mt_initial: 0.12,
            mt_at_best: 0.12,
            delta_mt_percent: 0.0,
            best_step: 1,
            episode_length: 100,
            termination: "max_steps".into(),
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn singleton_summary() {
        let s = summarize(&[record("a", 100.0, 40.0)]).unwrap();
        assert_eq!((s.best_median, s.best_iqr), (100.0, 0.0));
        assert_eq!((s.improvement.mean, s.improvement.std), (40.0, 0.0));
    }

    #[test]
    fn linear_interpolation_quantiles() {
        let recs: Vec<_> = (1..=5).map(|b| record(&b.to_string(), b as f64, 1.0)).collect();
        let s = summarize(&recs).unwrap();
        assert_eq!((s.best_median, s.best_iqr), (3.0, 2.0));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }

    #[test]
    fn constant_improvement_and_order_invariance() {
        let mut recs: Vec<_> = (0..6).map(|k| record(&k.to_string(), 50.0 + k as f64, 7.5)).collect();
        let a = summarize(&recs).unwrap();
        assert_eq!((a.improvement.mean, a.improvement.std), (7.5, 0.0));
        recs.reverse();
        assert_eq!(summarize(&recs).unwrap(), a);
    }

    #[test]
    fn excluded_records_and_empty_error() {
        let mut bad = record("x", 1.0, 1.0);
        bad.converged = false;
        assert!(matches!(summarize(&[bad.clone()]), Err(EvalError::Empty)));
        let s = summarize(&[bad, record("y", 10.0, 2.0)]).unwrap();
        assert_eq!((s.n_evaluated, s.n_excluded), (1, 1));
    }

    #[test]
    fn dataset_loading() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path(), &ParamBounds::default()).unwrap().is_empty());
        std::fs::copy(bundled_data_dir().join("naca0012.dat"), dir.path().join("naca0012.dat")).unwrap();
        std::fs::write(dir.path().join("broken.dat"), "junk\n1 2 3\nnot numbers\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let d = load_dataset(dir.path(), &ParamBounds::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].name, "naca0012");
        assert!(d[0].residual < 1e-3);
        assert!(load_dataset(&dir.path().join("missing"), &ParamBounds::default()).is_err());
    }

    #[test]
    fn zero_policy_has_zero_improvement() {
        let d = load_dataset(&bundled_data_dir(), &ParamBounds::default()).unwrap();
        let d: Vec<_> = d.into_iter().take(4).collect();
        let cfg = EnvConfig { episode_max_length: 5, ..Default::default() };
        let recs = evaluate_policy(&ZeroPolicy, &d, &cfg, EvalOptions::default(), None).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert!(r.converged);
            assert_eq!(r.improvement, 0.0);
            assert_eq!(r.delta_mt_percent, 0.0);
            assert_eq!(r.best_step, 0);
            assert_eq!(r.termination, "max_steps");
        }
    }
}
