use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ppo_update, PpoConfig, PpoError, RolloutBuffer};
use crate::env::{AeroModel, AirfoilEnv, CostLedger, EnvConfig, ResetPool};
use crate::nn::{config_hash, ActorCritic, AgentCheckpoint, CheckpointMeta, FreezeMask};

/// One environment with its own action-noise stream and current observation.
pub struct EnvSlot {
    pub env: AirfoilEnv,
    pub rng: ChaCha8Rng,
    obs: Option<Vec<f64>>,
    running_return: f64,
}

impl EnvSlot {
    pub fn new(env: AirfoilEnv, rng: ChaCha8Rng) -> Self {
        Self {
            env,
            rng,
            obs: None,
            running_return: 0.0,
        }
    }
}

struct Segment {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: Vec<f64>,
    last_value: f64,
    episode_returns: Vec<f64>,
}

fn collect_segment(slot: &mut EnvSlot, agent: &ActorCritic, n_steps: usize) -> Result<Segment, PpoError> {
    let mut s = Segment {
        obs: Vec::with_capacity(n_steps),
        actions: Vec::with_capacity(n_steps),
        log_probs: Vec::with_capacity(n_steps),
        rewards: Vec::with_capacity(n_steps),
        values: Vec::with_capacity(n_steps),
        dones: Vec::with_capacity(n_steps),
        bootstrap: Vec::with_capacity(n_steps),
        last_value: 0.0,
        episode_returns: Vec::new(),
    };
    for _ in 0..n_steps {
        let obs = match slot.obs.take() {
            Some(o) => o,
            None => {
                slot.running_return = 0.0;
                slot.env.reset()?.to_vec()
            }
        };
        let (action, lp, value) = agent.act(&obs, &mut slot.rng)?;
        let mut a = [0.0; crate::geometry::N_PARAMS];
        a.copy_from_slice(&action);
        let out = slot.env.step(&a)?;
        slot.running_return += out.reward;
        let boot = if out.truncated() {
            agent.value(&out.observation)?
        } else {
            0.0
        };
        s.obs.push(obs);
        s.actions.push(action);
        s.log_probs.push(lp);
        s.rewards.push(out.reward);
        s.values.push(value);
        s.dones.push(out.terminated);
        s.bootstrap.push(boot);
        if out.terminated {
            s.episode_returns.push(slot.running_return);
        } else {
            slot.obs = Some(out.observation.to_vec());
        }
    }
    s.last_value = match &slot.obs {
        Some(o) => agent.value(o)?,
        None => 0.0,
    };
    Ok(s)
}

/// `n_steps` transitions from every slot, collected in parallel. Each slot
/// owns its RNG, so the result does not depend on scheduling.
pub fn collect_rollout(
    slots: &mut [EnvSlot],
    agent: &ActorCritic,
    n_steps: usize,
) -> Result<RolloutBuffer, PpoError> {
    let segments: Vec<Segment> = slots
        .par_iter_mut()
        .map(|slot| collect_segment(slot, agent, n_steps))
        .collect::<Result<_, _>>()?;
    let mut buf = RolloutBuffer {
        segment_len: n_steps,
        ..Default::default()
    };
    for s in segments {
        buf.obs.extend(s.obs);
        buf.actions.extend(s.actions);
        buf.log_probs.extend(s.log_probs);
        buf.rewards.extend(s.rewards);
        buf.values.extend(s.values);
        buf.dones.extend(s.dones);
        buf.bootstrap.extend(s.bootstrap);
        buf.last_values.push(s.last_value);
        buf.episode_returns.extend(s.episode_returns);
    }
    Ok(buf)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    pub timesteps: u64,
    /// Mean return of episodes finished in this rollout; NaN if none did.
    pub mean_episode_reward: f64,
    pub episodes: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub solver_calls: u64,
    pub nominal_solver_ms: f64,
}

pub struct TrainSpec {
    pub env: EnvConfig,
    pub pool: Arc<ResetPool>,
    pub ppo: PpoConfig,
    pub seed: u64,
    /// Starting weights and optimizer state; a fresh agent when absent.
    pub init: Option<AgentCheckpoint>,
    /// Overrides the freeze mask carried by `init`.
    pub freeze: Option<FreezeMask>,
    /// Overrides the solver chosen by `env.fidelity`.
    pub model: Option<Arc<dyn AeroModel>>,
    pub label: String,
}

impl TrainSpec {
    pub fn new(env: EnvConfig, pool: Arc<ResetPool>, ppo: PpoConfig, seed: u64) -> Self {
        Self {
            env,
            pool,
            ppo,
            seed,
            init: None,
            freeze: None,
            model: None,
            label: String::new(),
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: AgentCheckpoint,
    pub log: Vec<UpdateLog>,
    pub ledger: CostLedger,
}

/// Independent 64-bit seed for stream `k` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collect → advantages → update, `ppo.n_updates()` times. `on_update`
/// sees every log row together with the current agent.
pub fn train(
    spec: TrainSpec,
    on_update: &mut dyn FnMut(&UpdateLog, &AgentCheckpoint) -> Result<(), PpoError>,
) -> Result<TrainOutcome, PpoError> {
    spec.ppo.validate()?;
    spec.env.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut checkpoint = match spec.init {
        Some(mut ck) => {
            ck.optimizer.lr = spec.ppo.learning_rate;
            ck
        }
        None => {
            let agent = ActorCritic::default_for_airfoils(&mut master);
            AgentCheckpoint::new(agent, spec.ppo.learning_rate, CheckpointMeta::default())
        }
    };
    if let Some(mask) = spec.freeze {
        checkpoint.freeze = mask;
    }
    checkpoint.meta.env_config_hash = config_hash(&spec.env);
    checkpoint.meta.sigma = spec.env.sigma;
    checkpoint.meta.fidelity = spec.env.fidelity.as_str().to_string();
    checkpoint.meta.seed = spec.seed;
    if !spec.label.is_empty() {
        checkpoint.meta.label = spec.label.clone();
    }

    let mut slots = Vec::with_capacity(spec.ppo.n_envs);
    for i in 0..spec.ppo.n_envs as u64 {
        let cfg = EnvConfig {
            rng_seed: derive_seed(spec.seed, 2 * i),
            ..spec.env.clone()
        };
        let env = match &spec.model {
            Some(m) => AirfoilEnv::with_model(cfg, spec.pool.clone(), m.clone())?,
            None => AirfoilEnv::new(cfg, spec.pool.clone())?,
        };
        slots.push(EnvSlot::new(env, ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2 * i + 1))));
    }

    let mut log = Vec::new();
    let mut timesteps = checkpoint.meta.timesteps;
    let prior_calls = checkpoint.meta.solver_calls;
    for update in 0..spec.ppo.n_updates() {
        let mut buf = collect_rollout(&mut slots, &checkpoint.agent, spec.ppo.n_steps)?;
        buf.compute_advantages(spec.ppo.gamma, spec.ppo.gae_lambda, spec.ppo.normalize_advantage);
        let stats = ppo_update(
            &mut checkpoint.agent,
            &mut checkpoint.optimizer,
            &checkpoint.freeze,
            &buf,
            &spec.ppo,
            &mut master,
        )?;
        timesteps += buf.len() as u64;
        checkpoint.meta.timesteps = timesteps;
        checkpoint.meta.updates += 1;
        let ledger = total_ledger(&slots);
        checkpoint.meta.solver_calls = prior_calls + ledger.solver_calls;
        let episodes = buf.episode_returns.len();
        let row = UpdateLog {
            update,
            timesteps,
            mean_episode_reward: if episodes == 0 {
                f64::NAN
            } else {
                buf.episode_returns.iter().sum::<f64>() / episodes as f64
            },
            episodes,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            grad_norm: stats.grad_norm,
            solver_calls: ledger.solver_calls,
            nominal_solver_ms: ledger.nominal_ms,
        };
        log::info!(
            "update {} steps {} mean episode reward {:.3} ({} episodes)",
            update + 1,
            timesteps,
            row.mean_episode_reward,
            episodes
        );
        on_update(&row, &checkpoint)?;
        log.push(row);
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        ledger: total_ledger(&slots),
    })
}

fn total_ledger(slots: &[EnvSlot]) -> CostLedger {
    slots.iter().fold(CostLedger::default(), |acc, s| {
        let l = s.env.ledger();
        CostLedger {
            solver_calls: acc.solver_calls + l.solver_calls,
            nominal_ms: acc.nominal_ms + l.nominal_ms,
        }
    })
}

/// Write the training log as CSV.
pub fn write_log_csv<W: std::io::Write>(rows: &[UpdateLog], out: W) -> Result<(), PpoError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| PpoError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| PpoError::Io(e.to_string()))
}
