//! Transfer from a low-fidelity pretrained agent to high-fidelity fine-tuning.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::{Fidelity, SolverConfig};
use crate::env::{AeroModel, EnvConfig, ResetPool};
use crate::nn::{
    ActorCritic, AgentCheckpoint, CheckpointMeta, Dense, FreezeMask, NnError, POLICY_HEAD_GAIN, VALUE_HEAD_GAIN,
};
use crate::ppo::{train, PpoConfig, PpoError, TrainSpec, UpdateLog};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("architecture mismatch: {0}")]
    Shape(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which weights travel from the pretrained agent and which stay trainable.
/// "Last layer" is the output affine layer of each network; for the actor it
/// also covers the log-std vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TlStrategy {
    /// #1: copy everything, train everything.
    ShareAll,
    /// #2: copy all but the last layers, which are re-initialized.
    ShareAllButLast,
    /// #3: copy everything, freeze all but the last layers.
    FreezeAllButLast,
    /// #4: copy and freeze all but the last layers, which are re-initialized.
    ShareAllButLastAndFreeze,
}

impl TlStrategy {
    pub const ALL: [TlStrategy; 4] = [
        TlStrategy::ShareAll,
        TlStrategy::ShareAllButLast,
        TlStrategy::FreezeAllButLast,
        TlStrategy::ShareAllButLastAndFreeze,
    ];

    pub fn number(&self) -> u8 {
        match self {
            TlStrategy::ShareAll => 1,
            TlStrategy::ShareAllButLast => 2,
            TlStrategy::FreezeAllButLast => 3,
            TlStrategy::ShareAllButLastAndFreeze => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.number() == n)
    }

    pub fn reinitializes_last(&self) -> bool {
        matches!(self, TlStrategy::ShareAllButLast | TlStrategy::ShareAllButLastAndFreeze)
    }

    pub fn freezes_body(&self) -> bool {
        matches!(self, TlStrategy::FreezeAllButLast | TlStrategy::ShareAllButLastAndFreeze)
    }
}

impl std::str::FromStr for TlStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim_start_matches('#')
            .parse::<u8>()
            .ok()
            .and_then(TlStrategy::from_number)
            .ok_or_else(|| format!("unknown strategy '{s}' (expected 1, 2, 3 or 4)"))
    }
}

/// Build the fine-tuning starting point from `source`. The target
/// architecture is `target`'s; its weights are only used for the shape check.
pub fn apply_strategy<R: Rng + ?Sized>(
    source: &ActorCritic,
    target: &ActorCritic,
    strategy: TlStrategy,
    rng: &mut R,
) -> Result<(ActorCritic, FreezeMask), TransferError> {
    if !source.same_architecture(target) {
        return Err(TransferError::Shape(format!(
            "source actor {:?} / critic {:?}, target actor {:?} / critic {:?}",
            source.actor.sizes(),
            source.critic.sizes(),
            target.actor.sizes(),
            target.critic.sizes()
        )));
    }
    let mut agent = source.clone();
    if strategy.reinitializes_last() {
        reinit_last(&mut agent, rng);
    }
    let mut mask = FreezeMask::none(&agent);
    if strategy.freezes_body() {
        let body = |flags: &mut Vec<bool>| {
            let n = flags.len();
            flags.iter_mut().take(n - 1).for_each(|f| *f = true);
        };
        body(&mut mask.actor);
        body(&mut mask.critic);
    }
    Ok((agent, mask))
}

fn reinit_last<R: Rng + ?Sized>(agent: &mut ActorCritic, rng: &mut R) {
    let fresh = |layer: &Dense, gain: f64, rng: &mut R| Dense::orthogonal(layer.inputs(), layer.outputs(), gain, rng);
    let a = agent.actor.layers.last_mut().expect("non-empty actor");
    *a = fresh(a, POLICY_HEAD_GAIN, rng);
    agent.log_std = DVector::zeros(agent.log_std.len());
    let c = agent.critic.layers.last_mut().expect("non-empty critic");
    *c = fresh(c, VALUE_HEAD_GAIN, rng);
}

/// Nominal solver time of both phases, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferCost {
    pub pretrain_calls: u64,
    pub pretrain_s: f64,
    pub finetune_calls: u64,
    pub finetune_s: f64,
    pub total_s: f64,
}

impl TransferCost {
    /// Pretraining charged at the low-fidelity rate, fine-tuning at the
    /// high-fidelity rate.
    pub fn new(pretrain_calls: u64, finetune_calls: u64) -> Self {
        let pretrain_s = pretrain_calls as f64 * SolverConfig::low().nominal_cost_ms / 1000.0;
        let finetune_s = finetune_calls as f64 * SolverConfig::high().nominal_cost_ms / 1000.0;
        Self {
            pretrain_calls,
            pretrain_s,
            finetune_calls,
            finetune_s,
            total_s: pretrain_s + finetune_s,
        }
    }
}

/// Percentage of solver time saved relative to the baseline.
pub fn time_reduction(tl_free_cost: f64, tl_cost: f64) -> Result<f64, TransferError> {
    if !(tl_free_cost > 0.0) || !tl_cost.is_finite() {
        return Err(TransferError::InvalidParams(format!(
            "baseline cost must be positive, got {tl_free_cost}"
        )));
    }
    Ok(100.0 * (tl_free_cost - tl_cost) / tl_free_cost)
}

pub struct FinetuneSpec {
    pub source: AgentCheckpoint,
    pub strategy: TlStrategy,
    /// Forced to high fidelity.
    pub env: EnvConfig,
    pub pool: Arc<ResetPool>,
    pub ppo: PpoConfig,
    pub seed: u64,
    /// Overrides the high-fidelity solver, e.g. in tests.
    pub model: Option<Arc<dyn AeroModel>>,
}

pub struct FinetuneOutcome {
    pub checkpoint: AgentCheckpoint,
    pub log: Vec<UpdateLog>,
    pub cost: TransferCost,
}

/// Transfer `source` under `strategy` and keep training it on the
/// high-fidelity solver. The optimizer starts fresh: the re-initialized
/// heads have no meaningful moments to inherit.
pub fn finetune(
    spec: FinetuneSpec,
    on_update: &mut dyn FnMut(&UpdateLog, &AgentCheckpoint) -> Result<(), PpoError>,
) -> Result<FinetuneOutcome, TransferError> {
    if !(spec.ppo.entropy_coef > 0.0) {
        return Err(TransferError::InvalidParams(
            "fine-tuning needs a positive entropy coefficient".into(),
        ));
    }
    let pretrain_calls = spec.source.meta.solver_calls;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::ppo::derive_seed(spec.seed, u64::MAX));
    let (agent, mask) = apply_strategy(&spec.source.agent, &spec.source.agent, spec.strategy, &mut rng)?;
    let meta = CheckpointMeta {
        label: format!("finetune-strategy-{}", spec.strategy.number()),
        ..spec.source.meta.clone()
    };
    let mut init = AgentCheckpoint::new(agent, spec.ppo.learning_rate, meta);
    init.freeze = mask;
    let env = EnvConfig {
        fidelity: Fidelity::High,
        ..spec.env
    };
    let label = init.meta.label.clone();
    let mut train_spec = TrainSpec::new(env, spec.pool, spec.ppo, spec.seed);
    train_spec.init = Some(init);
    train_spec.model = spec.model;
    train_spec.label = label;
    let out = train(train_spec, on_update)?;
    let cost = TransferCost::new(pretrain_calls, out.ledger.solver_calls);
    Ok(FinetuneOutcome {
        checkpoint: out.checkpoint,
        log: out.log,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AgentGrad, HIDDEN};

    fn agent(seed: u64) -> ActorCritic {
        ActorCritic::default_for_airfoils(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn share_all_is_identity() {
        let src = agent(1);
        let (a, mask) = apply_strategy(&src, &src, TlStrategy::ShareAll, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, src);
        assert_eq!(mask, FreezeMask::none(&src));
        let obs = [0.3; 18];
        assert_eq!(a.mean_action(&obs).unwrap(), src.mean_action(&obs).unwrap());
    }

    #[test]
    fn share_all_but_last_resets_heads_only() {
        let src = agent(1);
        let (a, mask) =
            apply_strategy(&src, &src, TlStrategy::ShareAllButLast, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let n = src.actor.layers.len();
        for i in 0..n - 1 {
            assert_eq!(a.actor.layers[i], src.actor.layers[i]);
            assert_eq!(a.critic.layers[i], src.critic.layers[i]);
        }
        assert_ne!(a.actor.layers[n - 1].weight, src.actor.layers[n - 1].weight);
        assert_ne!(a.critic.layers[n - 1].weight, src.critic.layers[n - 1].weight);
        assert!(!mask.actor.iter().any(|&f| f));
    }

    #[test]
    fn masks_are_symmetric() {
        let src = agent(1);
        for s in [TlStrategy::FreezeAllButLast, TlStrategy::ShareAllButLastAndFreeze] {
            let (_, mask) = apply_strategy(&src, &src, s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            assert_eq!(mask.actor, vec![true, true, false]);
            assert_eq!(mask.critic, vec![true, true, false]);
            assert!(!mask.log_std);
        }
    }

    #[test]
    fn frozen_body_survives_many_steps() {
        let src = agent(1);
        let (mut a, mask) =
            apply_strategy(&src, &src, TlStrategy::FreezeAllButLast, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut opt = crate::nn::Adam::new(&a, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let mut g = AgentGrad::zeros_like(&a);
            for t in g.tensors_mut() {
                t.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            }
            opt.step(&mut a, &g, &mask).unwrap();
        }
        for i in 0..2 {
            assert_eq!(a.actor.layers[i], src.actor.layers[i]);
            assert_eq!(a.critic.layers[i], src.critic.layers[i]);
        }
        assert_ne!(a.actor.layers[2], src.actor.layers[2]);
        assert_ne!(a.log_std, src.log_std);
    }

    #[test]
    fn architecture_mismatch() {
        let src = agent(1);
        let small = ActorCritic::new(18, 18, &[64, 64], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_ne!(HIDDEN, [64, 64]);
        let r = apply_strategy(&src, &small, TlStrategy::ShareAll, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(matches!(r, Err(TransferError::Shape(_))));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("3".parse::<TlStrategy>().unwrap(), TlStrategy::FreezeAllButLast);
        assert_eq!("#4".parse::<TlStrategy>().unwrap(), TlStrategy::ShareAllButLastAndFreeze);
        assert!("5".parse::<TlStrategy>().is_err());
    }

    #[test]
    fn reduction_values() {
        assert!((time_reduction(5980.0, 853.0).unwrap() - 85.73).abs() < 0.01);
        assert_eq!(time_reduction(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(time_reduction(10.0, 0.0).unwrap(), 100.0);
        assert!(time_reduction(0.0, 1.0).is_err());
        assert!(time_reduction(-5.0, 1.0).is_err());
    }

    #[test]
    fn cost_ledger_matches_phase_rates() {
        let c = TransferCost::new(26312, 10240);
        assert!((c.pretrain_s - 105.248).abs() < 1e-9);
        assert!((c.finetune_s - 747.52).abs() < 1e-9);
        let tl_free = TransferCost::new(0, 81920).total_s;
        let r = time_reduction(tl_free, c.total_s).unwrap();
        assert!((r - 85.7).abs() < 0.05, "{r}");
    }
}
