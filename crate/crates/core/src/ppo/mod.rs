//! PPO-clip: rollouts, advantages, and minibatch updates.

mod gae;
mod train;

pub use gae::{compute_gae, normalize};
pub use train::{collect_rollout, derive_seed, train, write_log_csv, EnvSlot, TrainOutcome, TrainSpec, UpdateLog};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::nn::{gaussian, Adam, ActorCritic, AgentGrad, FreezeMask, NnError};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FromScratch,
    Pretrain,
    Finetune,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "from-scratch" => Ok(Preset::FromScratch),
            "pretrain" => Ok(Preset::Pretrain),
            "finetune" => Ok(Preset::Finetune),
            other => Err(format!("unknown preset '{other}' (from-scratch|pretrain|finetune)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub total_timesteps: usize,
    pub learning_rate: f64,
    pub n_steps: usize,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub n_envs: usize,
    pub normalize_advantage: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::preset(Preset::FromScratch)
    }
}

impl PpoConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            total_timesteps: 81_920,
            learning_rate: 2.5e-4,
            n_steps: 2048,
            batch_size: 64,
            n_epochs: 20,
            gamma: 0.3,
            gae_lambda: 0.95,
            clip_range: 0.3,
            entropy_coef: 0.001,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            n_envs: 1,
            normalize_advantage: true,
        };
        match p {
            Preset::FromScratch => base,
            Preset::Pretrain => Self {
                n_epochs: 10,
                clip_range: 0.6,
                entropy_coef: 0.0,
                ..base
            },
            Preset::Finetune => Self {
                total_timesteps: 10_240,
                n_steps: 512,
                clip_range: 0.2,
                entropy_coef: 0.005,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_range > 0.0) {
            return bad("clip_range must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.n_steps == 0 || self.batch_size == 0 || self.n_epochs == 0 || self.n_envs == 0 {
            return bad("n_steps, batch_size, n_epochs and n_envs must be positive");
        }
        if !(self.n_steps * self.n_envs).is_multiple_of(self.batch_size) {
            return bad("batch_size must divide n_steps * n_envs");
        }
        if !(self.max_grad_norm > 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("max_grad_norm must be positive and loss coefficients non-negative");
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn n_updates(&self) -> usize {
        self.total_timesteps.div_ceil(self.steps_per_update())
    }
}

/// Transitions from one collection phase, stored env-major
/// (all steps of env 0, then env 1, ...).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Next-state value used at episode ends (truncation bootstrap).
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Per-env segment length and trailing value estimate.
    pub segment_len: usize,
    pub last_values: Vec<f64>,
    /// Returns of episodes completed during collection.
    pub episode_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64, normalize_adv: bool) {
        let seg = self.segment_len;
        self.advantages = Vec::with_capacity(self.len());
        self.returns = Vec::with_capacity(self.len());
        for (e, last) in self.last_values.iter().enumerate() {
            let r = e * seg..(e + 1) * seg;
            let (a, ret) = compute_gae(
                &self.rewards[r.clone()],
                &self.values[r.clone()],
                &self.dones[r.clone()],
                &self.bootstrap[r],
                *last,
                gamma,
                lambda,
            );
            self.advantages.extend(a);
            self.returns.extend(ret);
        }
        if normalize_adv {
            normalize(&mut self.advantages);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Largest |ρ − 1| seen in the first minibatch of the first epoch.
    pub first_ratio_deviation: f64,
}

/// Loss terms and gradient for one minibatch.
pub struct MinibatchLoss {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
    pub grad: AgentGrad,
}

/// Clipped-surrogate loss and its exact gradient on the samples `idx`.
pub fn minibatch_loss(
    agent: &ActorCritic,
    buf: &RolloutBuffer,
    idx: &[usize],
    cfg: &PpoConfig,
    freeze: &FreezeMask,
) -> Result<MinibatchLoss, PpoError> {
    let b = idx.len();
    let bf = b as f64;
    let od = agent.obs_dim();
    let ad = agent.act_dim();
    let obs = DMatrix::from_fn(od, b, |i, j| buf.obs[idx[j]][i]);
    let (means, actor_cache) = agent.actor.forward_batch(&obs)?;
    let (values, critic_cache) = agent.critic.forward_batch(&obs)?;
    let log_std = agent.log_std.as_slice();

    let mut d_mean = DMatrix::zeros(ad, b);
    let mut d_log_std = vec![0.0; ad];
    let mut d_value = DMatrix::zeros(1, b);
    let (mut pl, mut vl, mut kl, mut clipped, mut dev) = (0.0, 0.0, 0.0, 0usize, 0.0f64);
    let lo = 1.0 - cfg.clip_range;
    let hi = 1.0 + cfg.clip_range;
    for (j, &k) in idx.iter().enumerate() {
        let mean: Vec<f64> = means.column(j).iter().copied().collect();
        let action = &buf.actions[k];
        let lp = gaussian::log_prob(&mean, log_std, action);
        let log_ratio = lp - buf.log_probs[k];
        let ratio = log_ratio.exp();
        dev = dev.max((ratio - 1.0).abs());
        kl += (ratio - 1.0) - log_ratio;
        let adv = buf.advantages[k];
        let unclipped = ratio * adv;
        let clipped_term = ratio.clamp(lo, hi) * adv;
        pl -= unclipped.min(clipped_term);
        // The clipped branch carries no gradient once ρ leaves [lo, hi].
        let active = unclipped <= clipped_term || (lo..=hi).contains(&ratio);
        if !(lo..=hi).contains(&ratio) {
            clipped += 1;
        }
        if active {
            let d_lp = -adv * ratio / bf;
            let (gm, gs) = gaussian::log_prob_grad(&mean, log_std, action);
            for i in 0..ad {
                d_mean[(i, j)] += d_lp * gm[i];
                d_log_std[i] += d_lp * gs[i];
            }
        }
        let err = values[(0, j)] - buf.returns[k];
        vl += err * err;
        d_value[(0, j)] = cfg.value_coef * 2.0 * err / bf;
    }
    let entropy = gaussian::entropy(log_std);
    for (g, e) in d_log_std.iter_mut().zip(gaussian::entropy_grad(log_std)) {
        *g -= cfg.entropy_coef * e;
    }
    let (actor_grad, _) = agent.actor.backward(&actor_cache, &d_mean, &freeze.actor)?;
    let (critic_grad, _) = agent.critic.backward(&critic_cache, &d_value, &freeze.critic)?;
    let mut grad = AgentGrad {
        actor: actor_grad,
        log_std: nalgebra::DVector::from_vec(d_log_std),
        critic: critic_grad,
    };
    if freeze.log_std {
        grad.log_std.fill(0.0);
    }
    let policy_loss = pl / bf;
    let value_loss = vl / bf;
    let total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    if !total.is_finite() {
        return Err(PpoError::TrainingDiverged(format!(
            "non-finite loss (policy {policy_loss}, value {value_loss})"
        )));
    }
    Ok(MinibatchLoss {
        policy_loss,
        value_loss,
        entropy,
        approx_kl: kl / bf,
        clip_fraction: clipped as f64 / bf,
        max_ratio_deviation: dev,
        grad,
    })
}

/// `n_epochs` passes of shuffled minibatches with global-norm clipping.
pub fn ppo_update<R: Rng + ?Sized>(
    agent: &mut ActorCritic,
    optimizer: &mut Adam,
    freeze: &FreezeMask,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    if buf.advantages.len() != buf.len() {
        return Err(PpoError::InvalidConfig("advantages not computed".into()));
    }
    if !buf.len().is_multiple_of(cfg.batch_size) {
        return Err(PpoError::InvalidConfig("batch_size must divide the buffer length".into()));
    }
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for epoch in 0..cfg.n_epochs {
        order.shuffle(rng);
        for (m, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut loss = minibatch_loss(agent, buf, chunk, cfg, freeze)?;
            if epoch == 0 && m == 0 {
                stats.first_ratio_deviation = loss.max_ratio_deviation;
            }
            stats.grad_norm += loss.grad.clip_norm(cfg.max_grad_norm);
            optimizer.step(agent, &loss.grad, freeze)?;
            stats.policy_loss += loss.policy_loss;
            stats.value_loss += loss.value_loss;
            stats.entropy += loss.entropy;
            stats.approx_kl += loss.approx_kl;
            stats.clip_fraction += loss.clip_fraction;
            count += 1.0;
        }
    }
    if !agent.all_finite() {
        return Err(PpoError::TrainingDiverged("non-finite network parameters".into()));
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.approx_kl /= count;
    stats.clip_fraction /= count;
    stats.grad_norm /= count;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_match_table() {
        let s = PpoConfig::preset(Preset::FromScratch);
        assert_eq!((s.n_steps, s.n_epochs, s.clip_range, s.entropy_coef), (2048, 20, 0.3, 0.001));
        let p = PpoConfig::preset(Preset::Pretrain);
        assert_eq!((p.n_steps, p.n_epochs, p.clip_range, p.entropy_coef), (2048, 10, 0.6, 0.0));
        let f = PpoConfig::preset(Preset::Finetune);
        assert_eq!((f.n_steps, f.n_epochs, f.clip_range, f.entropy_coef), (512, 20, 0.2, 0.005));
        for c in [s, p, f] {
            assert_eq!((c.learning_rate, c.batch_size, c.gamma), (2.5e-4, 64, 0.3));
            assert_eq!((c.gae_lambda, c.value_coef, c.max_grad_norm), (0.95, 0.5, 0.5));
            c.validate().unwrap();
        }
    }

    #[test]
    fn update_count_arithmetic() {
        let mut c = PpoConfig::preset(Preset::FromScratch);
        c.total_timesteps = 2048;
        assert_eq!(c.n_updates(), 1);
        c.total_timesteps = 2049;
        assert_eq!(c.n_updates(), 2);
        c.n_envs = 2;
        c.total_timesteps = 8192;
        assert_eq!(c.n_updates(), 2);
    }

    #[test]
    fn invalid_configs() {
        let base = PpoConfig::default();
        for c in [
            PpoConfig { gamma: 0.0, ..base.clone() },
            PpoConfig { clip_range: 0.0, ..base.clone() },
            PpoConfig { batch_size: 100, ..base.clone() },
        ] {
            assert!(matches!(c.validate(), Err(PpoError::InvalidConfig(_))));
        }
    }

    /// Random buffer whose log-probs come from `agent` itself.
    fn buffer(agent: &ActorCritic, n: usize, rng: &mut ChaCha8Rng) -> RolloutBuffer {
        let mut b = RolloutBuffer {
            segment_len: n,
            last_values: vec![0.0],
            ..Default::default()
        };
        for _ in 0..n {
            let obs: Vec<f64> = (0..agent.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, lp, v) = agent.act(&obs, rng).unwrap();
            b.obs.push(obs);
            b.actions.push(a);
            b.log_probs.push(lp);
            b.values.push(v);
            b.rewards.push(rng.random_range(-1.0..1.0));
            b.dones.push(rng.random_bool(0.1));
            b.bootstrap.push(0.0);
        }
        b.compute_advantages(0.3, 0.95, true);
        b
    }

    fn small(seed: u64) -> ActorCritic {
        let mut a = ActorCritic::new(5, 3, &[8, 8], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        a.log_std.fill(-0.5);
        a
    }

    #[test]
    fn first_minibatch_ratio_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = small(1);
        let buf = buffer(&agent, 64, &mut rng);
        let cfg = PpoConfig { batch_size: 16, n_epochs: 2, ..Default::default() };
        let mut opt = Adam::new(&agent, 1e-3);
        let mask = FreezeMask::none(&agent);
        let stats = ppo_update(&mut agent, &mut opt, &mask, &buf, &cfg, &mut rng).unwrap();
        assert!(stats.first_ratio_deviation < 1e-6);
    }

    #[test]
    fn identity_policy_loss_is_minus_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = small(2);
        let buf = buffer(&agent, 32, &mut rng);
        let idx: Vec<usize> = (0..32).collect();
        let cfg = PpoConfig::default();
        let l = minibatch_loss(&agent, &buf, &idx, &cfg, &FreezeMask::none(&agent)).unwrap();
        let mean_adv: f64 = buf.advantages.iter().sum::<f64>() / 32.0;
        assert!((l.policy_loss + mean_adv).abs() < 1e-9);
        assert!(l.policy_loss.abs() < 1e-9);
    }

    #[test]
    fn saturated_ratio_has_no_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let agent = small(3);
        let mut buf = buffer(&agent, 8, &mut rng);
        let cfg = PpoConfig { entropy_coef: 0.0, value_coef: 0.0, ..Default::default() };
        // ρ = 1 + 2·clip for every sample, positive advantages.
        let shift = (1.0 + 2.0 * cfg.clip_range).ln();
        for k in 0..8 {
            buf.log_probs[k] -= shift;
            buf.advantages[k] = 1.0;
        }
        let idx: Vec<usize> = (0..8).collect();
        let l = minibatch_loss(&agent, &buf, &idx, &cfg, &FreezeMask::none(&agent)).unwrap();
        assert_eq!(l.grad.norm(), 0.0);
        assert!((l.policy_loss + (1.0 + cfg.clip_range)).abs() < 1e-9);
        assert_eq!(l.clip_fraction, 1.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let agent = small(4);
        let mut buf = buffer(&agent, 16, &mut rng);
        // Move the behaviour log-probs so some samples sit on each branch.
        for k in 0..16 {
            buf.log_probs[k] += rng.random_range(-0.6..0.6);
        }
        let cfg = PpoConfig { clip_range: 0.2, ..Default::default() };
        let idx: Vec<usize> = (0..16).collect();
        let mask = FreezeMask::none(&agent);
        let total = |a: &ActorCritic| {
            let l = minibatch_loss(a, &buf, &idx, &cfg, &mask).unwrap();
            l.policy_loss + cfg.value_coef * l.value_loss - cfg.entropy_coef * l.entropy
        };
        let g = minibatch_loss(&agent, &buf, &idx, &cfg, &mask).unwrap().grad;
        let h = 1e-6;
        let n_tensors = agent.tensors().len();
        for t in 0..n_tensors {
            let len = agent.tensors()[t].len();
            for _ in 0..3 {
                let i = rng.random_range(0..len);
                let mut p = agent.clone();
                p.tensors_mut()[t][i] += h;
                let mut m = agent.clone();
                m.tensors_mut()[t][i] -= h;
                let fd = (total(&p) - total(&m)) / (2.0 * h);
                let an = g.tensors()[t][i];
                assert!((fd - an).abs() < 1e-6 + 1e-4 * an.abs(), "tensor {t}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn unclipped_ppo_matches_policy_gradient() {
        // With no entropy, no value term and an enormous clip range, the
        // first-step gradient is −mean(A ∇logπ).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = small(5);
        let buf = buffer(&agent, 32, &mut rng);
        let cfg = PpoConfig {
            clip_range: 1e12,
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..Default::default()
        };
        let idx: Vec<usize> = (0..32).collect();
        let mask = FreezeMask::none(&agent);
        let g = minibatch_loss(&agent, &buf, &idx, &cfg, &mask).unwrap().grad;

        let obs = DMatrix::from_fn(5, 32, |i, j| buf.obs[j][i]);
        let (means, cache) = agent.actor.forward_batch(&obs).unwrap();
        let mut up = DMatrix::zeros(3, 32);
        let mut ds = [0.0; 3];
        for j in 0..32 {
            let mean: Vec<f64> = means.column(j).iter().copied().collect();
            let (gm, gs) = gaussian::log_prob_grad(&mean, agent.log_std.as_slice(), &buf.actions[j]);
            for i in 0..3 {
                up[(i, j)] = -buf.advantages[j] * gm[i] / 32.0;
                ds[i] -= buf.advantages[j] * gs[i] / 32.0;
            }
        }
        let (pg, _) = agent.actor.backward(&cache, &up, &[]).unwrap();
        for (a, b) in g.actor.layers.iter().zip(&pg.layers) {
            assert!((&a.weight - &b.weight).amax() < 1e-8);
            assert!((&a.bias - &b.bias).amax() < 1e-8);
        }
        for i in 0..3 {
            assert!((g.log_std[i] - ds[i]).abs() < 1e-8);
        }
    }
}
