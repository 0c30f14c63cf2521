//! Episode execution with controller switching, and the interleaved
//! training schedule for the policy, critics and gate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dynamics::{self, AcrobotParams, GoalSpec, State};
use crate::error::SsacError;
use crate::gate::{self, GateSample, HysteresisState, JointLabels, PretrainReport};
use crate::lqr::{self, LqrGains};
use crate::nn::{Adam, Mlp, NetRecord};
use crate::sac::{policy_head, ReplayStore, SacAgent, SacNets, SacNetsRecord, Transition, UpdateStats};

/// How the swing-up action is chosen while the gate is disengaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Reparameterized sample with fresh `ε ~ N(0, 1)`.
    Stochastic,
    /// The squashed mean (`ε = 0`).
    Deterministic,
    /// Uniform torque on `(−β, β)`, ignoring the policy.
    Explore,
}

/// Which controller is in charge at each step.
#[derive(Debug, Clone, Copy)]
pub enum Gating<'a> {
    /// A trained gate network passed through hysteresis.
    Learned { net: &'a Mlp, on: f64, off: f64 },
    AlwaysBalance,
    AlwaysSwingUp,
}

/// Everything a rollout reads but does not modify.
#[derive(Debug, Clone, Copy)]
pub struct RolloutCtx<'a> {
    pub policy: &'a Mlp,
    pub gating: Gating<'a>,
    pub gains: &'a LqrGains,
    pub params: &'a AcrobotParams,
    pub goal: &'a GoalSpec,
    pub torque_scale: f64,
}

/// One episode, indexed by control step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Decision states `s_0 .. s_{n-1}`.
    pub states: Vec<State>,
    /// Torque applied at each decision state.
    pub actions: Vec<f64>,
    /// Reward of the state reached after each action.
    pub rewards: Vec<f64>,
    /// Raw gate output at each decision state.
    pub gate_outputs: Vec<f64>,
    /// Whether the balance controller was engaged at each decision state.
    pub engaged: Vec<bool>,
    /// States reached after each action, `s_1 .. s_n`.
    pub next_states: Vec<State>,
    pub success: bool,
    pub episode_return: f64,
    /// The episode was cut short by the divergence guard.
    pub diverged: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn engaged_steps(&self) -> usize {
        self.engaged.iter().filter(|&&e| e).count()
    }

    pub fn final_state(&self) -> Option<State> {
        self.next_states.last().copied()
    }

    pub fn transitions(&self) -> Vec<Transition> {
        let n = self.len();
        (0..n)
            .map(|i| Transition {
                state: self.states[i],
                action: self.actions[i],
                reward: self.rewards[i],
                next_state: self.next_states[i],
                terminal: self.diverged && i + 1 == n,
                gate_active: self.engaged[i],
            })
            .collect()
    }

    /// Decision states labeled with the episode outcome.
    pub fn gate_samples(&self) -> impl Iterator<Item = GateSample> + '_ {
        let label = self.success;
        self.states.iter().map(move |&state| GateSample { state, label })
    }

    /// Decision states at which the balance controller was engaged, labeled
    /// with the episode outcome.
    pub fn engaged_gate_samples(&self) -> impl Iterator<Item = GateSample> + '_ {
        let label = self.success;
        self.states
            .iter()
            .zip(&self.engaged)
            .filter(|(_, &e)| e)
            .map(move |(&state, _)| GateSample { state, label })
    }
}

/// Runs one episode from `s0`.
///
/// The hysteresis starts disengaged. While engaged, the balance command is
/// recomputed at every integration substep and the recorded action is its
/// value at the decision state. A diverging step is recorded as terminal
/// with the lowest possible reward and `next_state = s_t`, and ends the
/// episode unsuccessfully.
pub fn do_rollout<R: Rng + ?Sized>(
    ctx: &RolloutCtx<'_>,
    s0: State,
    mode: RolloutMode,
    rng: &mut R,
) -> Result<EpisodeRecord, SsacError> {
    let n = ctx.goal.episode_len;
    let mut rec = EpisodeRecord {
        states: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        gate_outputs: Vec::with_capacity(n),
        engaged: Vec::with_capacity(n),
        next_states: Vec::with_capacity(n),
        success: false,
        episode_return: 0.0,
        diverged: false,
    };
    let mut hyst = HysteresisState::default();
    let mut s = s0;
    for _ in 0..n {
        let (g, engaged) = match ctx.gating {
            Gating::Learned { net, on, off } => {
                let g = gate::gate_forward(net, &s)?;
                let (e, h) = gate::hysteresis(g, hyst, on, off);
                hyst = h;
                (g, e)
            }
            Gating::AlwaysBalance => (1.0, true),
            Gating::AlwaysSwingUp => (0.0, false),
        };
        let (action, next) = if engaged {
            let a = lqr::lqr_action(&s, ctx.gains, ctx.goal);
            (a, dynamics::step_with(&s, ctx.params, |x| lqr::lqr_action(x, ctx.gains, ctx.goal)))
        } else {
            let beta = ctx.torque_scale;
            let a = match mode {
                RolloutMode::Explore => rng.gen_range(-beta..beta),
                RolloutMode::Deterministic => policy_head(ctx.policy, &s, beta)?.sample(0.0).action,
                RolloutMode::Stochastic => {
                    let eps: f64 = rng.sample(StandardNormal);
                    policy_head(ctx.policy, &s, beta)?.sample(eps).action
                }
            };
            (a, dynamics::step(&s, a, ctx.params))
        };
        let (next, r) = match next {
            Ok(next) => (next, dynamics::reward(&next, ctx.params)),
            Err(crate::error::DynamicsError::Diverged { .. }) => {
                rec.diverged = true;
                (s, -(ctx.params.l1 + ctx.params.l2))
            }
            Err(e) => return Err(e.into()),
        };
        rec.states.push(s);
        rec.actions.push(action);
        rec.rewards.push(r);
        rec.gate_outputs.push(g);
        rec.engaged.push(engaged);
        rec.next_states.push(next);
        rec.episode_return += r;
        if rec.diverged {
            break;
        }
        s = next;
    }
    rec.success = !rec.diverged && dynamics::is_success(&rec.next_states, ctx.goal).unwrap_or(false);
    Ok(rec)
}

/// One row of the training log, written once per joint-phase episode.
/// Loss columns are NaN when no update of that kind ran during the episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: u64,
    pub env_steps: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: bool,
    pub gate_engaged_steps: usize,
    pub general_size: usize,
    pub success_size: usize,
    pub gate_size: usize,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub gate_loss: f64,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Trained networks together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    /// Joint-phase control steps completed when this was written.
    pub env_steps: u64,
    pub nets: Option<SacNetsRecord>,
    pub gate: Option<NetRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SsacError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(SsacError::Config(format!(
                "unsupported checkpoint format version {}",
                ck.format_version
            )));
        }
        ck.config.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SsacError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SsacError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn sac_nets(&self) -> Result<Option<SacNets>, SsacError> {
        Ok(match &self.nets {
            Some(r) => Some(r.clone().into_nets(&self.config.sac)?),
            None => None,
        })
    }

    pub fn gate_net(&self) -> Result<Option<Mlp>, SsacError> {
        Ok(match &self.gate {
            Some(r) => Some(r.clone().into_mlp_expecting(&self.config.gate.sizes(), crate::nn::Head::Sigmoid)?),
            None => None,
        })
    }
}

// Independent random streams, so that e.g. changing the number of update
// draws does not shift the environment's initial states.
const STREAM_ENV: u64 = 1;
const STREAM_UPDATE: u64 = 2;
const STREAM_GATE: u64 = 3;
const STREAM_INIT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Mutable state of a training run.
pub struct Trainer {
    pub cfg: RunConfig,
    pub agent: SacAgent,
    pub gate: Mlp,
    pub gate_opt: Adam,
    pub store: ReplayStore,
    /// Joint-phase control steps so far.
    pub env_steps: u64,
    pub episodes: u64,
    /// Update events run so far (policy/value and gate).
    pub sac_events: u64,
    pub gate_events: u64,
    env_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    gate_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self, SsacError> {
        cfg.validate()?;
        let mut init = stream(cfg.seed, STREAM_INIT);
        let nets = SacNets::new(&cfg.sac, &mut init)?;
        let gate = gate::new_gate_net(&cfg.gate, &mut init)?;
        Ok(Self {
            agent: SacAgent::new(nets, &cfg.sac),
            gate_opt: Adam::new(gate.num_params(), cfg.gate.lr),
            gate,
            store: ReplayStore::new(cfg.schedule.general_capacity, cfg.schedule.gate_capacity),
            env_steps: 0,
            episodes: 0,
            sac_events: 0,
            gate_events: 0,
            env_rng: stream(cfg.seed, STREAM_ENV),
            update_rng: stream(cfg.seed, STREAM_UPDATE),
            gate_rng: stream(cfg.seed, STREAM_GATE),
            cfg,
        })
    }

    /// Replaces the gate with a pretrained one and seeds its buffer.
    pub fn with_pretrained_gate(mut self, net: Mlp, dataset: Vec<GateSample>) -> Result<Self, SsacError> {
        if net.sizes() != self.cfg.gate.sizes().as_slice() {
            return Err(crate::error::NnError::Topology("gate topology differs from config".into()).into());
        }
        self.gate_opt = Adam::new(net.num_params(), self.cfg.gate.lr);
        self.gate = net;
        self.store.push_gate_samples(dataset);
        Ok(self)
    }

    /// Gate-only phase on balance-controller rollouts.
    pub fn pretrain_gate(&mut self) -> Result<PretrainReport, SsacError> {
        let c = &self.cfg;
        gate::pretrain_gate(
            &c.dynamics,
            &c.goal,
            &c.lqr,
            &c.gate,
            &mut self.gate,
            &mut self.gate_opt,
            &mut self.store,
            c.schedule.gate_pretrain_steps,
            &mut self.env_rng,
            &mut self.gate_rng,
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.cfg.clone(),
            env_steps: self.env_steps,
            nets: Some((&self.agent.nets).into()),
            gate: (!self.cfg.vanilla_sac).then(|| (&self.gate).into()),
        }
    }

    pub fn exploring(&self) -> bool {
        self.env_steps < self.cfg.schedule.exploration_steps
    }

    /// One joint-phase episode followed by any update events it triggers.
    pub fn run_episode(&mut self) -> Result<LogRow, SsacError> {
        let mode = if self.exploring() {
            RolloutMode::Explore
        } else {
            RolloutMode::Stochastic
        };
        let c = &self.cfg;
        let gating = if c.vanilla_sac {
            Gating::AlwaysSwingUp
        } else {
            Gating::Learned {
                net: &self.gate,
                on: c.gate.on_threshold,
                off: c.gate.off_threshold,
            }
        };
        let ctx = RolloutCtx {
            policy: &self.agent.nets.policy,
            gating,
            gains: &c.lqr,
            params: &c.dynamics,
            goal: &c.goal,
            torque_scale: c.sac.torque_scale,
        };
        let s0 = dynamics::sample_initial_state(&mut self.env_rng);
        let rec = do_rollout(&ctx, s0, mode, &mut self.env_rng)?;

        self.store
            .push_episode(&rec.transitions(), rec.success && !self.cfg.vanilla_sac);
        if !self.cfg.vanilla_sac {
            match self.cfg.gate.joint_labels {
                JointLabels::All => self.store.push_gate_samples(rec.gate_samples()),
                JointLabels::Engaged => self.store.push_gate_samples(rec.engaged_gate_samples()),
            }
        }
        let before = self.env_steps;
        self.env_steps += rec.len() as u64;
        self.episodes += 1;

        let mut row = LogRow {
            episode: self.episodes,
            env_steps: self.env_steps,
            episode_return: rec.episode_return,
            success: rec.success,
            gate_engaged_steps: rec.engaged_steps(),
            general_size: 0,
            success_size: 0,
            gate_size: 0,
            q1_loss: f64::NAN,
            q2_loss: f64::NAN,
            policy_loss: f64::NAN,
            value_loss: f64::NAN,
            gate_loss: f64::NAN,
        };

        let sched = self.cfg.schedule.clone();
        let mut sac_stats = Vec::new();
        for k in before / sched.steps_per_update + 1..=self.env_steps / sched.steps_per_update {
            if k * sched.steps_per_update > sched.exploration_steps {
                sac_stats.extend(self.sac_update_event()?);
            }
        }
        if !sac_stats.is_empty() {
            let n = sac_stats.len() as f64;
            row.q1_loss = sac_stats.iter().map(|s| s.q1_loss).sum::<f64>() / n;
            row.q2_loss = sac_stats.iter().map(|s| s.q2_loss).sum::<f64>() / n;
            row.policy_loss = sac_stats.iter().map(|s| s.policy_loss).sum::<f64>() / n;
            row.value_loss = sac_stats.iter().map(|s| s.value_loss).sum::<f64>() / n;
        }

        // Engaged-only labeling can leave the gate buffer empty; there is
        // nothing to fit then.
        if !self.cfg.vanilla_sac && self.store.gate_len() > 0 {
            let period = self.cfg.gate.update_period;
            for _ in before / period + 1..=self.env_steps / period {
                if let Some(u) = gate::gate_update(
                    &mut self.gate,
                    &mut self.gate_opt,
                    self.store.gate_samples(),
                    &self.cfg.gate,
                    &mut self.gate_rng,
                )? {
                    self.gate_events += 1;
                    row.gate_loss = u.mean_loss;
                }
            }
        }

        let checks = [
            ("q1", row.q1_loss),
            ("q2", row.q2_loss),
            ("policy", row.policy_loss),
            ("value", row.value_loss),
        ];
        for (what, v) in checks {
            if !sac_stats.is_empty() && !v.is_finite() {
                return Err(SsacError::NonFiniteLoss { what, update: self.sac_events });
            }
        }
        if row.gate_loss.is_infinite() {
            return Err(SsacError::NonFiniteLoss { what: "gate", update: self.gate_events });
        }

        row.general_size = self.store.general_len();
        row.success_size = self.store.success_len();
        row.gate_size = self.store.gate_len();
        Ok(row)
    }

    /// `updates_per_event` rounds, each on a fresh replay batch swept in
    /// minibatches.
    pub fn sac_update_event(&mut self) -> Result<Vec<UpdateStats>, SsacError> {
        let c = &self.cfg.sac;
        let p = if self.cfg.vanilla_sac { 0.0 } else { c.success_prob };
        let mut stats = Vec::with_capacity(c.updates_per_event * c.replay_batch.div_ceil(c.minibatch));
        for _ in 0..c.updates_per_event {
            let batch = self.store.sample_batch(c.replay_batch, p, &mut self.update_rng)?;
            for mb in batch.chunks(c.minibatch) {
                stats.push(self.agent.update_minibatch(mb, c, &mut self.update_rng)?);
            }
        }
        self.sac_events += 1;
        Ok(stats)
    }

    /// Runs the joint phase to its step budget, handing each log row to
    /// `on_row` as it is produced.
    pub fn train_joint<F>(&mut self, mut on_row: F) -> Result<(), SsacError>
    where
        F: FnMut(&Trainer, &LogRow) -> Result<(), SsacError>,
    {
        while self.env_steps < self.cfg.schedule.joint_steps {
            let row = self.run_episode()?;
            on_row(self, &row)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::new_gate_net;
    use crate::nn::Head;
    use std::f64::consts::PI;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.schedule.gate_pretrain_steps = 0;
        cfg.schedule.joint_steps = 1000;
        cfg.schedule.exploration_steps = 500;
        cfg.sac.replay_batch = 256;
        cfg.sac.minibatch = 128;
        cfg.gate.update_period = 500;
        cfg
    }

    fn constant_gate(value: f64) -> Mlp {
        // Zero weights, output bias set so that sigmoid(bias) = value.
        let cfg = crate::gate::GateConfig::default();
        let mut net = Mlp::zeros(&cfg.sizes(), Head::Sigmoid).unwrap();
        let last = net.num_layers() - 1;
        net.layer_mut(last).1[0] = (value / (1.0 - value)).ln();
        net
    }

    fn ctx<'a>(policy: &'a Mlp, gating: Gating<'a>, cfg: &'a RunConfig) -> RolloutCtx<'a> {
        RolloutCtx {
            policy,
            gating,
            gains: &cfg.lqr,
            params: &cfg.dynamics,
            goal: &cfg.goal,
            torque_scale: cfg.sac.torque_scale,
        }
    }

    #[test]
    fn gate_at_one_from_goal_is_a_balance_episode() {
        let cfg = RunConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nets = SacNets::new(&cfg.sac, &mut rng).unwrap();
        let g = constant_gate(0.999);
        let c = ctx(&nets.policy, Gating::Learned { net: &g, on: 0.9, off: 0.5 }, &cfg);
        let rec = do_rollout(&c, State::upright(), RolloutMode::Stochastic, &mut rng).unwrap();
        assert!(rec.engaged.iter().all(|&e| e));
        assert!(rec.success);
        assert_eq!(rec.len(), 50);
    }

    #[test]
    fn gate_at_zero_matches_plain_policy_rollout() {
        let cfg = RunConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nets = SacNets::new(&cfg.sac, &mut rng).unwrap();
        let g = constant_gate(0.001);
        let s0 = State::new(-PI / 2.0, 0.0, 0.0, 0.0);
        let gated = ctx(&nets.policy, Gating::Learned { net: &g, on: 0.9, off: 0.5 }, &cfg);
        let plain = ctx(&nets.policy, Gating::AlwaysSwingUp, &cfg);
        let a = do_rollout(&gated, s0, RolloutMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = do_rollout(&plain, s0, RolloutMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.engaged_steps(), 0);
    }

    #[test]
    fn episode_bookkeeping() {
        let cfg = RunConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nets = SacNets::new(&cfg.sac, &mut rng).unwrap();
        let c = ctx(&nets.policy, Gating::AlwaysSwingUp, &cfg);
        for mode in [RolloutMode::Stochastic, RolloutMode::Deterministic, RolloutMode::Explore] {
            let s0 = dynamics::sample_initial_state(&mut rng);
            let rec = do_rollout(&c, s0, mode, &mut rng).unwrap();
            assert_eq!(rec.len(), cfg.goal.episode_len);
            assert_eq!(rec.rewards.iter().sum::<f64>(), rec.episode_return);
            assert!(rec.episode_return.abs() <= 100.0);
            assert!(rec.actions.iter().all(|a| a.abs() < cfg.sac.torque_scale));
            for w in rec.states.windows(2).zip(&rec.next_states) {
                assert_eq!(w.0[1], *w.1);
            }
        }
    }

    #[test]
    fn explore_actions_are_uniform() {
        let cfg = RunConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nets = SacNets::new(&cfg.sac, &mut rng).unwrap();
        let c = ctx(&nets.policy, Gating::AlwaysSwingUp, &cfg);
        let mut acts = Vec::new();
        for _ in 0..200 {
            let s0 = dynamics::sample_initial_state(&mut rng);
            acts.extend(do_rollout(&c, s0, RolloutMode::Explore, &mut rng).unwrap().actions);
        }
        let n = acts.len() as f64;
        let mean = acts.iter().sum::<f64>() / n;
        let var = acts.iter().map(|a| a * a).sum::<f64>() / n - mean * mean;
        // Uniform(−10, 10): mean 0, variance 100/3; n = 1e4.
        assert!(mean.abs() < 0.2, "mean {mean}");
        assert!((var - 100.0 / 3.0).abs() < 1.5, "var {var}");
    }

    #[test]
    fn zero_steps_leaves_networks_untouched() {
        let mut cfg = small_cfg();
        cfg.schedule.joint_steps = 0;
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.agent.nets.clone();
        let mut rows = 0;
        t.train_joint(|_, _| {
            rows += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(rows, 0);
        assert_eq!(t.agent.nets, before);
    }

    #[test]
    fn no_policy_updates_while_exploring() {
        let mut cfg = small_cfg();
        cfg.schedule.joint_steps = 500;
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.agent.nets.policy.clone();
        t.train_joint(|_, _| Ok(())).unwrap();
        assert_eq!(t.agent.nets.policy, before);
        assert_eq!(t.agent.policy_opt.steps(), 0);
        assert_eq!(t.store.general_len(), 500);
    }

    #[test]
    fn update_cadence_is_exact() {
        let cfg = small_cfg();
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.train_joint(|_, _| Ok(())).unwrap();
        // 1000 steps, updates start after 500: one event at step 1000.
        let per_event = (cfg.sac.updates_per_event * cfg.sac.replay_batch / cfg.sac.minibatch) as u64;
        assert_eq!(t.sac_events, 1);
        assert_eq!(t.agent.policy_opt.steps(), per_event);
        assert_eq!(t.agent.q1_opt.steps(), per_event);
        assert_eq!(t.agent.value_opt.steps(), per_event);
    }

    #[test]
    fn success_buffer_holds_only_successes() {
        let mut cfg = small_cfg();
        cfg.schedule.exploration_steps = 10_000;
        cfg.schedule.joint_steps = 2000;
        let mut t = Trainer::new(cfg).unwrap();
        let mut successes = 0;
        t.train_joint(|_, r| {
            successes += r.success as usize;
            Ok(())
        })
        .unwrap();
        assert_eq!(t.store.success_len(), successes * 50);
        assert_eq!(t.store.gate_len(), 2000);
    }

    #[test]
    fn engaged_labeling_keeps_only_balance_states() {
        let mut cfg = small_cfg();
        cfg.schedule.joint_steps = 500;
        cfg.gate.joint_labels = JointLabels::Engaged;
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.gate = constant_gate(0.001);
        t.train_joint(|_, _| Ok(())).unwrap();
        assert_eq!(t.store.gate_len(), 0);

        let mut t = Trainer::new(cfg).unwrap();
        t.gate = constant_gate(0.999);
        let mut engaged = 0;
        t.train_joint(|_, r| {
            engaged += r.gate_engaged_steps;
            Ok(())
        })
        .unwrap();
        assert_eq!(engaged, 500);
        assert_eq!(t.store.gate_len(), 500);
    }

    #[test]
    fn vanilla_mode_never_gates() {
        let mut cfg = small_cfg();
        cfg.vanilla_sac = true;
        let mut t = Trainer::new(cfg).unwrap();
        t.gate = constant_gate(0.999);
        t.train_joint(|_, r| {
            assert_eq!(r.gate_engaged_steps, 0);
            assert!(r.gate_loss.is_nan());
            Ok(())
        })
        .unwrap();
        assert_eq!(t.store.success_len(), 0);
        assert_eq!(t.store.gate_len(), 0);
        assert!(t.checkpoint().gate.is_none());
    }

    #[test]
    fn same_seed_same_log_different_seed_different_log() {
        let run = |seed| {
            let mut cfg = small_cfg();
            cfg.seed = seed;
            let mut t = Trainer::new(cfg).unwrap();
            let mut rows = Vec::new();
            t.train_joint(|_, r| {
                rows.push(format!("{r:?}"));
                Ok(())
            })
            .unwrap();
            rows
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut t = Trainer::new(small_cfg()).unwrap();
        t.gate = new_gate_net(&t.cfg.gate, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let ck = t.checkpoint();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.sac_nets().unwrap().unwrap(), t.agent.nets);
        assert_eq!(back.gate_net().unwrap().unwrap(), t.gate);
    }

    #[test]
    fn checkpoint_rejects_future_format() {
        let t = Trainer::new(small_cfg()).unwrap();
        let mut ck = t.checkpoint();
        ck.format_version = 99;
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
    }
}
