//! Binary checkpoints and JSON weight exchange.
//!
//! Checkpoint layout: 8-byte magic, u32 LE format version, u32 LE header
//! length, a JSON header, then every tensor as little-endian f64 (agent
//! tensors, then Adam first moments, then second moments).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ActorCritic, Adam, Dense, FreezeMask, Mlp, NnError};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"AFDRLCKP";

/// Hex SHA-256 of the JSON form of any serializable config.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub timesteps: u64,
    pub updates: u64,
    pub env_config_hash: String,
    /// Thickness-kernel strength the agent was trained with.
    pub sigma: f64,
    pub fidelity: String,
    pub seed: u64,
    /// Solver calls spent on this agent so far, across all training phases.
    #[serde(default)]
    pub solver_calls: u64,
    /// Free-form provenance, e.g. the preset or transfer strategy.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCheckpoint {
    pub agent: ActorCritic,
    pub optimizer: Adam,
    pub freeze: FreezeMask,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    actor_sizes: Vec<usize>,
    critic_sizes: Vec<usize>,
    freeze: FreezeMask,
    adam_lr: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    adam_t: u64,
    payload_len: usize,
    meta: CheckpointMeta,
}

impl AgentCheckpoint {
    pub fn new(agent: ActorCritic, lr: f64, meta: CheckpointMeta) -> Self {
        let optimizer = Adam::new(&agent, lr);
        let freeze = FreezeMask::none(&agent);
        Self {
            agent,
            optimizer,
            freeze,
            meta,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let agent = self.agent.tensors();
        let payload_len: usize = agent.iter().map(|t| t.len()).sum::<usize>() * 3;
        let header = Header {
            actor_sizes: self.agent.actor.sizes(),
            critic_sizes: self.agent.critic.sizes(),
            freeze: self.freeze.clone(),
            adam_lr: self.optimizer.lr,
            adam_beta1: self.optimizer.beta1,
            adam_beta2: self.optimizer.beta2,
            adam_eps: self.optimizer.eps,
            adam_t: self.optimizer.t,
            payload_len,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let moments = self.optimizer.m.iter().chain(&self.optimizer.v).map(|v| v.as_slice());
        for t in agent.into_iter().chain(moments) {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |msg: &str| NnError::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
        let payload = &bytes[16 + hlen..];
        if payload.len() != 8 * header.payload_len {
            return Err(bad("payload length does not match header"));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));

        let mut agent = ActorCritic {
            actor: sized_mlp(&header.actor_sizes)?,
            log_std: DVector::zeros(*header.actor_sizes.last().unwrap()),
            critic: sized_mlp(&header.critic_sizes)?,
        };
        let n: usize = agent.tensors().iter().map(|t| t.len()).sum();
        if header.payload_len != 3 * n {
            return Err(bad("payload length does not match architecture"));
        }
        for t in agent.tensors_mut() {
            t.iter_mut().for_each(|v| *v = values.next().unwrap());
        }
        let mut optimizer = Adam::new(&agent, header.adam_lr);
        optimizer.beta1 = header.adam_beta1;
        optimizer.beta2 = header.adam_beta2;
        optimizer.eps = header.adam_eps;
        optimizer.t = header.adam_t;
        for t in optimizer.m.iter_mut().chain(optimizer.v.iter_mut()) {
            t.iter_mut().for_each(|v| *v = values.next().unwrap());
        }
        let freeze = header.freeze;
        if freeze.actor.len() != agent.actor.layers.len() || freeze.critic.len() != agent.critic.layers.len() {
            return Err(bad("freeze mask does not match architecture"));
        }
        Ok(Self {
            agent,
            optimizer,
            freeze,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut f = std::fs::File::create(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn sized_mlp(sizes: &[usize]) -> Result<Mlp, NnError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(NnError::Checkpoint(format!("bad layer sizes {sizes:?}")));
    }
    Ok(Mlp::zeros(sizes))
}

/// Human-readable weights, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub version: u32,
    pub actor: Vec<LayerWeights>,
    pub log_std: Vec<f64>,
    pub critic: Vec<LayerWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs` rows of `inputs` values each.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

const WEIGHTS_FORMAT: &str = "airfoil-drl-weights";

fn export_mlp(net: &Mlp) -> Vec<LayerWeights> {
    net.layers
        .iter()
        .map(|l| LayerWeights {
            inputs: l.inputs(),
            outputs: l.outputs(),
            weight: l.weight.transpose().as_slice().to_vec(),
            bias: l.bias.as_slice().to_vec(),
        })
        .collect()
}

fn import_mlp(layers: &[LayerWeights]) -> Result<Mlp, NnError> {
    if layers.is_empty() {
        return Err(NnError::Shape("network has no layers".into()));
    }
    let mut out = Vec::with_capacity(layers.len());
    for (k, l) in layers.iter().enumerate() {
        if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
            return Err(NnError::Shape(format!("layer {k} has inconsistent sizes")));
        }
        if k > 0 && layers[k - 1].outputs != l.inputs {
            return Err(NnError::Shape(format!("layer {k} input does not match previous output")));
        }
        out.push(Dense {
            weight: DMatrix::from_row_slice(l.outputs, l.inputs, &l.weight),
            bias: DVector::from_column_slice(&l.bias),
        });
    }
    Ok(Mlp { layers: out })
}

impl WeightsFile {
    pub fn from_agent(agent: &ActorCritic) -> Self {
        Self {
            format: WEIGHTS_FORMAT.into(),
            version: 1,
            actor: export_mlp(&agent.actor),
            log_std: agent.log_std.as_slice().to_vec(),
            critic: export_mlp(&agent.critic),
        }
    }

    pub fn to_agent(&self) -> Result<ActorCritic, NnError> {
        if self.format != WEIGHTS_FORMAT || self.version != 1 {
            return Err(NnError::Checkpoint(format!(
                "unsupported weights format {} v{}",
                self.format, self.version
            )));
        }
        let actor = import_mlp(&self.actor)?;
        let critic = import_mlp(&self.critic)?;
        if self.log_std.len() != actor.output_dim() {
            return Err(NnError::Shape("log_std length does not match actor output".into()));
        }
        if critic.input_dim() != actor.input_dim() || critic.output_dim() != 1 {
            return Err(NnError::Shape("critic does not match actor input or is not scalar".into()));
        }
        Ok(ActorCritic {
            actor,
            log_std: DVector::from_column_slice(&self.log_std),
            critic,
        })
    }
}
