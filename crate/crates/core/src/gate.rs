//! Learned switch between the swing-up policy and the balance controller.
//!
//! The gate is a sigmoid classifier over the encoded state, trained with a
//! class-weighted cross entropy on states labeled by whether the balance
//! controller succeeded from the episode they came from. Its output passes
//! through a two-threshold hysteresis before it selects a controller.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, AcrobotParams, GoalSpec, State};
use crate::error::{NnError, SsacError};
use crate::features::{encode_state, STATE_FEATURES};
use crate::lqr::{self, LqrGains};
use crate::nn::{Adam, Head, Mlp, Tape};
use crate::sac::{LossOutput, ReplayStore};

/// Probabilities are clamped to this margin inside the logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Manual factor `w` in the positive-class weight `(n_t / n_p)·w`.
    pub class_weight: f64,
    pub lr: f64,
    pub on_threshold: f64,
    pub off_threshold: f64,
    /// Control steps between gate updates.
    pub update_period: u64,
    /// Minibatch size of the sweep; `None` takes one step on the full buffer.
    pub minibatch: Option<usize>,
    /// Passes over the buffer per update event.
    pub epochs: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Which decision states of a joint-phase episode enter the gate buffer.
    pub joint_labels: JointLabels,
}

/// Labeling of joint-phase episodes for the gate buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointLabels {
    /// Every decision state carries the episode outcome.
    All,
    /// Only states where the balance controller was in control carry the
    /// outcome; states driven by the policy say nothing about its basin.
    Engaged,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            class_weight: 0.01,
            lr: 1e-3,
            on_threshold: 0.9,
            off_threshold: 0.5,
            update_period: 50_000,
            minibatch: Some(256),
            epochs: 1,
            hidden_width: 32,
            hidden_layers: 2,
            joint_labels: JointLabels::All,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), SsacError> {
        if !(0.0 <= self.off_threshold
            && self.off_threshold < self.on_threshold
            && self.on_threshold <= 1.0)
        {
            return Err(SsacError::Config(
                "need 0 <= off_threshold < on_threshold <= 1".into(),
            ));
        }
        if !(self.class_weight > 0.0) || self.update_period == 0 || self.minibatch == Some(0) {
            return Err(SsacError::Config(
                "class_weight, update_period and minibatch must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![STATE_FEATURES];
        s.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        s.push(1);
        s
    }
}

/// A state labeled with its episode's success outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSample {
    pub state: State,
    pub label: bool,
}

pub fn new_gate_net<R: Rng + ?Sized>(cfg: &GateConfig, rng: &mut R) -> Result<Mlp, NnError> {
    Mlp::new(&cfg.sizes(), Head::Sigmoid, rng)
}

/// Gate output in `(0, 1)`.
pub fn gate_forward(net: &Mlp, s: &State) -> Result<f64, NnError> {
    Ok(net.forward(&encode_state(s))?[0])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HysteresisState {
    pub engaged: bool,
}

/// Engages above `on`, disengages below `off`, holds otherwise.
pub fn hysteresis(g: f64, h: HysteresisState, on: f64, off: f64) -> (bool, HysteresisState) {
    let engaged = if h.engaged { g >= off } else { g > on };
    (engaged, HysteresisState { engaged })
}

/// `(n_t / n_p)·w`, undefined without positives.
pub fn positive_class_weight(n_total: usize, n_positive: usize, w: f64) -> Option<f64> {
    (n_positive > 0).then(|| n_total as f64 / n_positive as f64 * w)
}

/// Weighted cross entropy over `samples` with a fixed positive weight.
pub fn weighted_bce(net: &Mlp, samples: &[GateSample], pos_weight: f64) -> Result<LossOutput, SsacError> {
    if samples.is_empty() {
        return Err(SsacError::EmptyGateBuffer);
    }
    let n = samples.len() as f64;
    let mut out = LossOutput {
        loss: 0.0,
        grads: vec![0.0; net.num_params()],
    };
    let mut tape = Tape::default();
    for s in samples {
        net.forward_tape_into(&encode_state(&s.state), &mut tape)?;
        let g = tape.output()[0];
        let gc = g.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let inside = g == gc;
        let (loss, dg) = if s.label {
            (-pos_weight * gc.ln(), -pos_weight / gc)
        } else {
            (-(1.0 - gc).ln(), 1.0 / (1.0 - gc))
        };
        out.loss += loss / n;
        if inside {
            net.backward(&tape, &[dg / n], Some(&mut out.grads))?;
        }
    }
    Ok(out)
}

/// Gate loss over the whole buffer; `None` when there is no positive sample.
pub fn gate_loss(samples: &[GateSample], net: &Mlp, cfg: &GateConfig) -> Result<Option<LossOutput>, SsacError> {
    if samples.is_empty() {
        return Err(SsacError::EmptyGateBuffer);
    }
    let n_p = samples.iter().filter(|s| s.label).count();
    match positive_class_weight(samples.len(), n_p, cfg.class_weight) {
        None => Ok(None),
        Some(cw) => weighted_bce(net, samples, cw).map(Some),
    }
}

/// Outcome of one gate update event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateUpdate {
    pub steps: usize,
    pub mean_loss: f64,
}

/// One update event: `cfg.epochs` sweeps over the buffer. The positive
/// weight is fixed from the whole buffer's class balance.
pub fn gate_update<R: Rng + ?Sized>(
    net: &mut Mlp,
    opt: &mut Adam,
    samples: &[GateSample],
    cfg: &GateConfig,
    rng: &mut R,
) -> Result<Option<GateUpdate>, SsacError> {
    if samples.is_empty() {
        return Err(SsacError::EmptyGateBuffer);
    }
    let n_p = samples.iter().filter(|s| s.label).count();
    let Some(cw) = positive_class_weight(samples.len(), n_p, cfg.class_weight) else {
        return Ok(None);
    };
    let mut steps = 0;
    let mut loss_sum = 0.0;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut chunk = Vec::new();
    for _ in 0..cfg.epochs.max(1) {
        match cfg.minibatch {
            None => {
                let out = weighted_bce(net, samples, cw)?;
                opt.step(net.params_mut(), &out.grads)?;
                loss_sum += out.loss;
                steps += 1;
            }
            Some(m) => {
                order.shuffle(rng);
                for idx in order.chunks(m) {
                    chunk.clear();
                    chunk.extend(idx.iter().map(|&i| samples[i]));
                    let out = weighted_bce(net, &chunk, cw)?;
                    opt.step(net.params_mut(), &out.grads)?;
                    loss_sum += out.loss;
                    steps += 1;
                }
            }
        }
    }
    Ok(Some(GateUpdate {
        steps,
        mean_loss: loss_sum / steps as f64,
    }))
}

/// Summary of a gate pretraining run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainReport {
    pub episodes: usize,
    pub positive_episodes: usize,
    pub control_steps: u64,
    pub updates: usize,
    pub last_loss: Option<f64>,
}

/// Labeled states from one balance-controller episode started at `s0`.
///
/// Every decision-time state of the episode receives the episode's label.
pub fn label_lqr_episode(
    s0: &State,
    gains: &LqrGains,
    goal: &GoalSpec,
    params: &AcrobotParams,
) -> (Vec<GateSample>, bool) {
    let mut states = Vec::with_capacity(goal.episode_len);
    let mut s = *s0;
    let mut visited = Vec::with_capacity(goal.episode_len);
    let mut ok = true;
    for _ in 0..goal.episode_len {
        states.push(s);
        match dynamics::step_with(&s, params, |x| lqr::lqr_action(x, gains, goal)) {
            Ok(next) => {
                visited.push(next);
                s = next;
            }
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    let label = ok && dynamics::is_success(&visited, goal).unwrap_or(false);
    (
        states
            .into_iter()
            .map(|state| GateSample { state, label })
            .collect(),
        label,
    )
}

/// Trains the gate alone on balance-controller rollouts from random starts
/// until `steps` control steps have been simulated. Initial states come from
/// `env_rng`, minibatch shuffles from `shuffle_rng`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_gate<R: Rng + ?Sized, S: Rng + ?Sized>(
    params: &AcrobotParams,
    goal: &GoalSpec,
    gains: &LqrGains,
    cfg: &GateConfig,
    net: &mut Mlp,
    opt: &mut Adam,
    store: &mut ReplayStore,
    steps: u64,
    env_rng: &mut R,
    shuffle_rng: &mut S,
) -> Result<PretrainReport, SsacError> {
    let mut report = PretrainReport::default();
    let mut since_update = 0u64;
    while report.control_steps < steps {
        let s0 = dynamics::sample_initial_state(env_rng);
        let (samples, label) = label_lqr_episode(&s0, gains, goal, params);
        let n = samples.len() as u64;
        store.push_gate_samples(samples);
        report.episodes += 1;
        report.positive_episodes += label as usize;
        report.control_steps += n;
        since_update += n;
        if since_update >= cfg.update_period {
            since_update = 0;
            if let Some(u) = gate_update(net, opt, store.gate_samples(), cfg, shuffle_rng)? {
                report.updates += 1;
                report.last_loss = Some(u.mean_loss);
            }
        }
    }
    Ok(report)
}

/// Confusion counts of a binary decision against oracle labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Precision on the positive class; 1 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// Fraction of oracle negatives that were predicted positive.
    pub fn false_positive_rate(&self) -> f64 {
        if self.fp + self.tn == 0 {
            0.0
        } else {
            self.fp as f64 / (self.fp + self.tn) as f64
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn hysteresis_examples() {
        let off = HysteresisState { engaged: false };
        let on = HysteresisState { engaged: true };
        assert!(hysteresis(0.95, off, 0.9, 0.5).0);
        assert!(!hysteresis(0.85, off, 0.9, 0.5).0);
        assert!(hysteresis(0.7, on, 0.9, 0.5).0);
        assert!(!hysteresis(0.4, on, 0.9, 0.5).0);
    }

    #[test]
    fn hysteresis_never_chatters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = HysteresisState::default();
        for _ in 0..100_000 {
            let g: f64 = rng.gen();
            let before = h.engaged;
            let (d, next) = hysteresis(g, h, 0.9, 0.5);
            if d != before {
                if d {
                    assert!(g > 0.9);
                } else {
                    assert!(g < 0.5);
                }
            }
            h = next;
        }
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let cfg = GateConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = new_gate_net(&cfg, &mut rng).unwrap();
        let last = net.num_layers() - 1;
        for v in net.layer_mut(last).0 {
            *v = 0.0;
        }
        assert_eq!(gate_forward(&net, &State::new(0.3, 1.0, 2.0, -1.0)).unwrap(), 0.5);
        for _ in 0..100 {
            let net = new_gate_net(&cfg, &mut rng).unwrap();
            let g = gate_forward(&net, &dynamics::sample_initial_state(&mut rng)).unwrap();
            assert!(g > 0.0 && g < 1.0);
        }
    }

    #[test]
    fn class_weight_arithmetic() {
        assert_eq!(positive_class_weight(1000, 10, 0.01), Some(1.0));
        assert_eq!(positive_class_weight(1000, 0, 0.01), None);
        // w = n_p / n_t makes the positive weight exactly one
        assert_eq!(positive_class_weight(800, 200, 200.0 / 800.0), Some(1.0));
    }

    #[test]
    fn loss_examples() {
        let cfg = GateConfig::default();
        let half = Mlp::zeros(&cfg.sizes(), Head::Sigmoid).unwrap();
        let negatives: Vec<GateSample> = (0..10)
            .map(|i| GateSample {
                state: State::new(i as f64, 0.0, 0.0, 0.0),
                label: false,
            })
            .collect();
        let out = weighted_bce(&half, &negatives, 1.0).unwrap();
        assert!((out.loss - LN_2).abs() < 1e-12);
        assert!(gate_loss(&negatives, &half, &cfg).unwrap().is_none());
        assert!(matches!(gate_loss(&[], &half, &cfg), Err(SsacError::EmptyGateBuffer)));

        // saturated, correct predictions → loss at the clamp floor
        let mut sure = Mlp::zeros(&cfg.sizes(), Head::Sigmoid).unwrap();
        let last = sure.num_layers() - 1;
        sure.layer_mut(last).1[0] = -40.0;
        let out = weighted_bce(&sure, &negatives, 1.0).unwrap();
        assert!(out.loss < 1e-6);
    }

    #[test]
    fn loss_gradient_matches_fd() {
        let h = 1e-5;
        let cfg = GateConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let net = new_gate_net(&cfg, &mut rng).unwrap();
            let samples: Vec<GateSample> = (0..12)
                .map(|_| GateSample {
                    state: dynamics::sample_initial_state(&mut rng),
                    label: rng.gen_bool(0.3),
                })
                .collect();
            let Some(out) = gate_loss(&samples, &net, &cfg).unwrap() else {
                continue;
            };
            for i in (0..net.num_params()).step_by(11) {
                let mut p = net.clone();
                p.params_mut()[i] += h;
                let mut m = net.clone();
                m.params_mut()[i] -= h;
                let fd = (gate_loss(&samples, &p, &cfg).unwrap().unwrap().loss
                    - gate_loss(&samples, &m, &cfg).unwrap().unwrap().loss)
                    / (2.0 * h);
                let (a, b) = (out.grads[i], fd);
                assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()) || (a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn update_skipped_without_positives() {
        let cfg = GateConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = new_gate_net(&cfg, &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(net.num_params(), cfg.lr);
        let samples = vec![
            GateSample {
                state: State::hanging(),
                label: false
            };
            5
        ];
        assert!(gate_update(&mut net, &mut opt, &samples, &cfg, &mut rng).unwrap().is_none());
        assert_eq!(net, before);
    }

    #[test]
    fn confusion_rates() {
        let mut c = Confusion::default();
        for (p, a) in [(true, true), (true, false), (false, false), (false, false), (false, true)] {
            c.record(p, a);
        }
        assert_eq!(c.precision(), 0.5);
        assert_eq!(c.recall(), 0.5);
        assert!((c.false_positive_rate() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lqr_episode_labels_are_broadcast() {
        let (p, g, k) = (AcrobotParams::default(), GoalSpec::default(), LqrGains::default());
        let (samples, label) = label_lqr_episode(&State::upright(), &k, &g, &p);
        assert!(label);
        assert_eq!(samples.len(), g.episode_len);
        assert!(samples.iter().all(|s| s.label));
        let (samples, label) = label_lqr_episode(&State::hanging(), &k, &g, &p);
        assert!(!label && samples.iter().all(|s| !s.label));
    }
}
