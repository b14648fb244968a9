//! Dense networks with hand-written gradients, the Gaussian actor-critic
//! built from them, Adam, and checkpoint files.

mod checkpoint;
pub mod gaussian;
mod mlp;

pub use checkpoint::{config_hash, AgentCheckpoint, CheckpointMeta, WeightsFile, CHECKPOINT_VERSION};
pub use mlp::{Architecture, Dense, ForwardCache, Mlp, MlpGrad};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::N_PARAMS;

pub const HIDDEN: [usize; 2] = [256, 256];
pub const POLICY_HEAD_GAIN: f64 = 0.01;
pub const VALUE_HEAD_GAIN: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Actor (means + state-independent log-std) and critic networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub log_std: DVector<f64>,
    pub critic: Mlp,
}

/// Per-layer freezing; `log_std` travels with the actor's last layer in the
/// transfer strategies but is tracked separately here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub actor: Vec<bool>,
    pub log_std: bool,
    pub critic: Vec<bool>,
}

impl FreezeMask {
    pub fn none(agent: &ActorCritic) -> Self {
        Self {
            actor: vec![false; agent.actor.layers.len()],
            log_std: false,
            critic: vec![false; agent.critic.layers.len()],
        }
    }

    pub fn is_frozen_everywhere(&self) -> bool {
        self.actor.iter().chain(&self.critic).all(|f| *f) && self.log_std
    }

    /// One flag per tensor in `ActorCritic::tensors` order.
    pub fn tensor_flags(&self) -> Vec<bool> {
        let mut flags = Vec::new();
        for f in &self.actor {
            flags.extend([*f, *f]);
        }
        flags.push(self.log_std);
        for f in &self.critic {
            flags.extend([*f, *f]);
        }
        flags
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentGrad {
    pub actor: MlpGrad,
    pub log_std: DVector<f64>,
    pub critic: MlpGrad,
}

impl AgentGrad {
    pub fn zeros_like(agent: &ActorCritic) -> Self {
        Self {
            actor: MlpGrad::zeros_like(&agent.actor),
            log_std: DVector::zeros(agent.log_std.len()),
            critic: MlpGrad::zeros_like(&agent.critic),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.actor.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.log_std.as_slice());
        for l in &self.critic.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.actor.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.log_std.as_mut_slice());
        for l in &mut self.critic.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

impl ActorCritic {
    /// Fresh agent for `obs_dim` inputs and `act_dim` actions.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        let mut critic_sizes = actor_sizes.clone();
        actor_sizes.push(act_dim);
        critic_sizes.push(1);
        Ok(Self {
            actor: Mlp::new(&actor_sizes, POLICY_HEAD_GAIN, rng)?,
            log_std: DVector::zeros(act_dim),
            critic: Mlp::new(&critic_sizes, VALUE_HEAD_GAIN, rng)?,
        })
    }

    /// The default 18 → [256, 256] → 18 / 1 agent.
    pub fn default_for_airfoils<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(N_PARAMS, N_PARAMS, &HIDDEN, rng).expect("static sizes are valid")
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn same_architecture(&self, other: &ActorCritic) -> bool {
        self.actor.sizes() == other.actor.sizes()
            && self.critic.sizes() == other.critic.sizes()
            && self.log_std.len() == other.log_std.len()
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.actor.forward(obs)?.as_slice().to_vec())
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64, NnError> {
        Ok(self.critic.forward(obs)?[0])
    }

    /// Sampled action, its log-probability, and the critic's value.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64, f64), NnError> {
        let mean = self.mean_action(obs)?;
        let (action, lp) = gaussian::sample(&mean, self.log_std.as_slice(), rng);
        Ok((action, lp, self.value(obs)?))
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.actor.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.log_std.as_slice());
        for l in &self.critic.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.actor.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.log_std.as_mut_slice());
        for l in &mut self.critic.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Adam with bias correction. Frozen tensors are skipped entirely, so
/// neither their values nor their moments change.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(agent: &ActorCritic, lr: f64) -> Self {
        let shapes: Vec<usize> = agent.tensors().iter().map(|t| t.len()).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, agent: &mut ActorCritic, grad: &AgentGrad, mask: &FreezeMask) -> Result<(), NnError> {
        let flags = mask.tensor_flags();
        let grads = grad.tensors();
        let mut params = agent.tensors_mut();
        if params.len() != grads.len() || params.len() != self.m.len() || flags.len() != params.len() {
            return Err(NnError::Shape("optimizer state does not match agent".into()));
        }
        for k in 0..params.len() {
            if params[k].len() != grads[k].len() || params[k].len() != self.m[k].len() {
                return Err(NnError::Shape(format!("tensor {k} length mismatch")));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            if flags[k] {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in params[k].iter_mut().enumerate() {
                let g = grads[k][i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
