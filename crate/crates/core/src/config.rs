//! Run configuration: every tunable constant in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AcrobotParams, GoalSpec};
use crate::error::SsacError;
use crate::gate::GateConfig;
use crate::lqr::LqrGains;
use crate::sac::{SacConfig, DEFAULT_GATE_CAPACITY, DEFAULT_GENERAL_CAPACITY};

/// Step budgets and update cadence, all counted in control steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Gate-only phase on balance-controller rollouts.
    pub gate_pretrain_steps: u64,
    /// Joint phase with the hybrid controller.
    pub joint_steps: u64,
    /// Leading part of the joint phase with uniform random swing-up torques
    /// and no policy/value updates.
    pub exploration_steps: u64,
    pub steps_per_update: u64,
    pub general_capacity: usize,
    pub gate_capacity: usize,
    /// Write a checkpoint every this many joint steps (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            gate_pretrain_steps: 1_000_000,
            joint_steps: 1_000_000,
            exploration_steps: 50_000,
            steps_per_update: 500,
            general_capacity: DEFAULT_GENERAL_CAPACITY,
            gate_capacity: DEFAULT_GATE_CAPACITY,
            checkpoint_every: 100_000,
        }
    }
}

/// Grid of zero-velocity initial conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceMapSpec {
    pub n_theta1: usize,
    pub n_theta2: usize,
}

impl Default for BalanceMapSpec {
    fn default() -> Self {
        Self {
            n_theta1: 25,
            n_theta2: 25,
        }
    }
}

impl BalanceMapSpec {
    /// `n` points evenly spaced over `[-π, π)`.
    pub fn axis(n: usize) -> Vec<f64> {
        let step = 2.0 * std::f64::consts::PI / n as f64;
        (0..n).map(|i| -std::f64::consts::PI + i as f64 * step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Plain SAC: no gate, no balance controller, single replay buffer.
    pub vanilla_sac: bool,
    pub dynamics: AcrobotParams,
    pub goal: GoalSpec,
    pub lqr: LqrGains,
    pub sac: SacConfig,
    pub gate: GateConfig,
    pub schedule: TrainSchedule,
    pub balance_map: BalanceMapSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vanilla_sac: false,
            dynamics: AcrobotParams::default(),
            goal: GoalSpec::default(),
            lqr: LqrGains::default(),
            sac: SacConfig::default(),
            gate: GateConfig::default(),
            schedule: TrainSchedule::default(),
            balance_map: BalanceMapSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SsacError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SsacError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SsacError> {
        self.dynamics.validate()?;
        self.sac.validate()?;
        self.gate.validate()?;
        let g = &self.goal;
        if g.episode_len == 0 || g.lookback >= g.episode_len || !(g.eps_thr > 0.0) {
            return Err(SsacError::Config(
                "need episode_len > lookback and eps_thr > 0".into(),
            ));
        }
        let s = &self.schedule;
        if s.steps_per_update == 0 || s.general_capacity == 0 || s.gate_capacity == 0 {
            return Err(SsacError::Config(
                "steps_per_update and buffer capacities must be positive".into(),
            ));
        }
        if self.balance_map.n_theta1 < 2 || self.balance_map.n_theta2 < 2 {
            return Err(SsacError::Config("balance map needs at least 2x2 cells".into()));
        }
        if let Some(limit) = self.lqr.saturation {
            if !(limit > 0.0) {
                return Err(SsacError::Config("lqr saturation must be positive".into()));
            }
        }
        Ok(())
    }
}
