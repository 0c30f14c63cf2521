//! Soft actor critic: networks, losses and the dual replay store.

mod losses;
mod replay;

pub use losses::{
    policy_head, policy_loss, policy_loss_with_noise, polyak_update, q_loss, q_target, value_loss,
    value_target, value_target_with_noise, LossOutput, QLossOutput,
};
pub use replay::{
    BufferKind, ReplayStore, Ring, Transition, DEFAULT_GATE_CAPACITY, DEFAULT_GENERAL_CAPACITY,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, SsacError};
use crate::features::STATE_FEATURES;
use crate::nn::{Adam, Head, Mlp, NetRecord};

/// Which critic the policy loss differentiates through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyCritic {
    /// The first twin only.
    First,
    /// The per-sample minimum of both twins.
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub discount: f64,
    /// Entropy coefficient.
    pub alpha: f64,
    /// Target-network averaging constant.
    pub polyak: f64,
    pub replay_batch: usize,
    pub minibatch: usize,
    pub updates_per_event: usize,
    /// Probability of drawing from the success buffer.
    pub success_prob: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub q_lr: f64,
    pub policy_critic: PolicyCritic,
    /// Torque scale multiplying the squashed policy output, N·m.
    pub torque_scale: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            discount: 0.95,
            alpha: 0.05,
            polyak: 0.995,
            replay_batch: 4096,
            minibatch: 128,
            updates_per_event: 4,
            success_prob: 0.5,
            policy_lr: 1e-3,
            value_lr: 1e-3,
            q_lr: 1e-3,
            policy_critic: PolicyCritic::Min,
            torque_scale: 10.0,
            hidden_width: 32,
            hidden_layers: 3,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SsacError> {
        let bad = |m: &str| Err(SsacError::Config(m.to_string()));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        if !(self.polyak > 0.0 && self.polyak < 1.0) {
            return bad("polyak must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.success_prob) {
            return bad("success_prob must lie in [0, 1]");
        }
        if !(self.alpha >= 0.0) || !(self.torque_scale > 0.0) {
            return bad("alpha must be non-negative and torque_scale positive");
        }
        if self.minibatch == 0 || self.replay_batch < self.minibatch {
            return bad("need 0 < minibatch <= replay_batch");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        s.push(output);
        s
    }

    pub fn policy_sizes(&self) -> Vec<usize> {
        self.sizes(STATE_FEATURES, 2)
    }

    pub fn value_sizes(&self) -> Vec<usize> {
        self.sizes(STATE_FEATURES, 1)
    }

    pub fn q_sizes(&self) -> Vec<usize> {
        self.sizes(STATE_FEATURES + 1, 1)
    }
}

/// Policy, value, target value and twin Q networks.
#[derive(Debug, Clone, PartialEq)]
pub struct SacNets {
    pub policy: Mlp,
    pub value: Mlp,
    pub target_value: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
}

impl SacNets {
    pub fn new<R: Rng + ?Sized>(cfg: &SacConfig, rng: &mut R) -> Result<Self, NnError> {
        let policy = Mlp::new(&cfg.policy_sizes(), Head::gaussian(), rng)?;
        let value = Mlp::new(&cfg.value_sizes(), Head::Identity, rng)?;
        let q1 = Mlp::new(&cfg.q_sizes(), Head::Identity, rng)?;
        let q2 = Mlp::new(&cfg.q_sizes(), Head::Identity, rng)?;
        Ok(Self {
            target_value: value.clone(),
            policy,
            value,
            q1,
            q2,
        })
    }
}

/// Serialized form of [`SacNets`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacNetsRecord {
    pub policy: NetRecord,
    pub value: NetRecord,
    pub target_value: NetRecord,
    pub q1: NetRecord,
    pub q2: NetRecord,
}

impl From<&SacNets> for SacNetsRecord {
    fn from(n: &SacNets) -> Self {
        Self {
            policy: (&n.policy).into(),
            value: (&n.value).into(),
            target_value: (&n.target_value).into(),
            q1: (&n.q1).into(),
            q2: (&n.q2).into(),
        }
    }
}

impl SacNetsRecord {
    pub fn into_nets(self, cfg: &SacConfig) -> Result<SacNets, NnError> {
        Ok(SacNets {
            policy: self.policy.into_mlp_expecting(&cfg.policy_sizes(), Head::gaussian())?,
            value: self.value.into_mlp_expecting(&cfg.value_sizes(), Head::Identity)?,
            target_value: self
                .target_value
                .into_mlp_expecting(&cfg.value_sizes(), Head::Identity)?,
            q1: self.q1.into_mlp_expecting(&cfg.q_sizes(), Head::Identity)?,
            q2: self.q2.into_mlp_expecting(&cfg.q_sizes(), Head::Identity)?,
        })
    }
}

/// Networks plus one Adam state per trained network.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub nets: SacNets,
    pub policy_opt: Adam,
    pub value_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
}

/// Mean losses of one minibatch update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

impl SacAgent {
    pub fn new(nets: SacNets, cfg: &SacConfig) -> Self {
        Self {
            policy_opt: Adam::new(nets.policy.num_params(), cfg.policy_lr),
            value_opt: Adam::new(nets.value.num_params(), cfg.value_lr),
            q1_opt: Adam::new(nets.q1.num_params(), cfg.q_lr),
            q2_opt: Adam::new(nets.q2.num_params(), cfg.q_lr),
            nets,
        }
    }

    /// One gradient step on each loss family for `batch`, then a target update.
    pub fn update_minibatch<R: Rng + ?Sized>(
        &mut self,
        batch: &[Transition],
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Result<UpdateStats, SsacError> {
        let q = q_loss(batch, &self.nets, cfg)?;
        self.q1_opt.step(self.nets.q1.params_mut(), &q.grads1)?;
        self.q2_opt.step(self.nets.q2.params_mut(), &q.grads2)?;

        let pol = policy_loss(batch, &self.nets, cfg, rng)?;
        self.policy_opt.step(self.nets.policy.params_mut(), &pol.grads)?;

        let targets = value_target(batch, &self.nets, cfg, rng)?;
        let val = value_loss(batch, &self.nets, &targets)?;
        self.value_opt.step(self.nets.value.params_mut(), &val.grads)?;

        polyak_update(&mut self.nets.target_value, &self.nets.value, cfg.polyak)?;
        Ok(UpdateStats {
            q1_loss: q.loss1,
            q2_loss: q.loss2,
            policy_loss: pol.loss,
            value_loss: val.loss,
        })
    }
}
