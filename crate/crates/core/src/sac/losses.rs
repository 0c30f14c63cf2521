use rand::Rng;
use rand_distr::StandardNormal;

use super::{PolicyCritic, SacConfig, SacNets, Transition};
use crate::dynamics::State;
use crate::error::{NnError, SsacError};
use crate::features::{encode_state, encode_state_action};
use crate::nn::{GaussianHead, Mlp, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLossOutput {
    pub loss1: f64,
    pub loss2: f64,
    pub grads1: Vec<f64>,
    pub grads2: Vec<f64>,
}

fn check_nonempty(batch: &[Transition]) -> Result<(), SsacError> {
    if batch.is_empty() {
        return Err(SsacError::Config("empty batch".into()));
    }
    Ok(())
}

fn scalar(net: &Mlp, x: &[f64]) -> Result<f64, NnError> {
    Ok(net.forward(x)?[0])
}

/// Action distribution of the policy at `s`.
pub fn policy_head(policy: &Mlp, s: &State, torque_scale: f64) -> Result<GaussianHead, NnError> {
    let out = policy.forward(&encode_state(s))?;
    Ok(GaussianHead::new(out[0], out[1], torque_scale))
}

/// `r + γ V̄(s')`, with no bootstrap past a divergence.
pub fn q_target(batch: &[Transition], nets: &SacNets, cfg: &SacConfig) -> Result<Vec<f64>, SsacError> {
    check_nonempty(batch)?;
    batch
        .iter()
        .map(|t| {
            let boot = if t.terminal {
                0.0
            } else {
                scalar(&nets.target_value, &encode_state(&t.next_state))?
            };
            Ok(t.reward + cfg.discount * boot)
        })
        .collect()
}

/// Mean `½(Q − Q̂)²` for both twins, targets held constant.
pub fn q_loss(batch: &[Transition], nets: &SacNets, cfg: &SacConfig) -> Result<QLossOutput, SsacError> {
    let targets = q_target(batch, nets, cfg)?;
    let n = batch.len() as f64;
    let mut out = QLossOutput {
        loss1: 0.0,
        loss2: 0.0,
        grads1: vec![0.0; nets.q1.num_params()],
        grads2: vec![0.0; nets.q2.num_params()],
    };
    let mut tape = Tape::default();
    for (t, target) in batch.iter().zip(&targets) {
        let x = encode_state_action(&t.state, t.action / cfg.torque_scale);
        for (net, loss, grads) in [
            (&nets.q1, &mut out.loss1, &mut out.grads1),
            (&nets.q2, &mut out.loss2, &mut out.grads2),
        ] {
            net.forward_tape_into(&x, &mut tape)?;
            let diff = tape.output()[0] - target;
            *loss += 0.5 * diff * diff / n;
            net.backward(&tape, &[diff / n], Some(grads))?;
        }
    }
    Ok(out)
}

/// `min(Q1, Q2)(s, a) − α log π(a|s)` with `a` drawn from the policy using
/// the given standard-normal noise, one draw per sample.
pub fn value_target_with_noise(
    batch: &[Transition],
    nets: &SacNets,
    cfg: &SacConfig,
    noise: &[f64],
) -> Result<Vec<f64>, SsacError> {
    check_nonempty(batch)?;
    if noise.len() != batch.len() {
        return Err(NnError::Shape {
            expected: batch.len(),
            got: noise.len(),
        }
        .into());
    }
    batch
        .iter()
        .zip(noise)
        .map(|(t, &eps)| {
            let draw = policy_head(&nets.policy, &t.state, cfg.torque_scale)?.sample(eps);
            let x = encode_state_action(&t.state, draw.squashed);
            let q_min = scalar(&nets.q1, &x)?.min(scalar(&nets.q2, &x)?);
            Ok(q_min - cfg.alpha * draw.log_prob)
        })
        .collect()
}

pub fn value_target<R: Rng + ?Sized>(
    batch: &[Transition],
    nets: &SacNets,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<Vec<f64>, SsacError> {
    let noise: Vec<f64> = batch.iter().map(|_| rng.sample(StandardNormal)).collect();
    value_target_with_noise(batch, nets, cfg, &noise)
}

/// Mean `½(V(s) − V̂)²` against precomputed targets.
pub fn value_loss(batch: &[Transition], nets: &SacNets, targets: &[f64]) -> Result<LossOutput, SsacError> {
    check_nonempty(batch)?;
    if targets.len() != batch.len() {
        return Err(NnError::Shape {
            expected: batch.len(),
            got: targets.len(),
        }
        .into());
    }
    let n = batch.len() as f64;
    let mut out = LossOutput {
        loss: 0.0,
        grads: vec![0.0; nets.value.num_params()],
    };
    let mut tape = Tape::default();
    for (t, target) in batch.iter().zip(targets) {
        nets.value.forward_tape_into(&encode_state(&t.state), &mut tape)?;
        let diff = tape.output()[0] - target;
        out.loss += 0.5 * diff * diff / n;
        nets.value.backward(&tape, &[diff / n], Some(&mut out.grads))?;
    }
    Ok(out)
}

/// Mean `α log π(f(ε, s)|s) − Q(s, f(ε, s))` over the batch, differentiated
/// through the reparameterized action into the policy parameters only.
pub fn policy_loss_with_noise(
    batch: &[Transition],
    nets: &SacNets,
    cfg: &SacConfig,
    noise: &[f64],
) -> Result<LossOutput, SsacError> {
    check_nonempty(batch)?;
    if noise.len() != batch.len() {
        return Err(NnError::Shape {
            expected: batch.len(),
            got: noise.len(),
        }
        .into());
    }
    let n = batch.len() as f64;
    let mut out = LossOutput {
        loss: 0.0,
        grads: vec![0.0; nets.policy.num_params()],
    };
    let (mut ptape, mut tape1, mut tape2) = (Tape::default(), Tape::default(), Tape::default());
    for (t, &eps) in batch.iter().zip(noise) {
        nets.policy.forward_tape_into(&encode_state(&t.state), &mut ptape)?;
        let head = GaussianHead::new(ptape.output()[0], ptape.output()[1], cfg.torque_scale);
        let draw = head.sample(eps);
        let x = encode_state_action(&t.state, draw.squashed);
        nets.q1.forward_tape_into(&x, &mut tape1)?;
        let (critic, tape) = match cfg.policy_critic {
            PolicyCritic::First => (&nets.q1, &tape1),
            PolicyCritic::Min => {
                nets.q2.forward_tape_into(&x, &mut tape2)?;
                if tape2.output()[0] < tape1.output()[0] {
                    (&nets.q2, &tape2)
                } else {
                    (&nets.q1, &tape1)
                }
            }
        };
        let q = tape.output()[0];
        out.loss += (cfg.alpha * draw.log_prob - q) / n;

        let dq_dy = critic.backward(tape, &[1.0], None)?[x.len() - 1];
        let (lp_mu, lp_ls) = draw.log_prob_grads();
        let (y_mu, y_ls) = draw.squashed_grads();
        let d_mu = (cfg.alpha * lp_mu - dq_dy * y_mu) / n;
        let d_ls = (cfg.alpha * lp_ls - dq_dy * y_ls) / n;
        nets.policy.backward(&ptape, &[d_mu, d_ls], Some(&mut out.grads))?;
    }
    Ok(out)
}

pub fn policy_loss<R: Rng + ?Sized>(
    batch: &[Transition],
    nets: &SacNets,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<LossOutput, SsacError> {
    let noise: Vec<f64> = batch.iter().map(|_| rng.sample(StandardNormal)).collect();
    policy_loss_with_noise(batch, nets, cfg, &noise)
}

/// `w̄ ← c·w̄ + (1 − c)·w` for every parameter.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, c: f64) -> Result<(), NnError> {
    if !target.same_topology(online) {
        return Err(NnError::TapeMismatch);
    }
    for (t, &w) in target.params_mut().iter_mut().zip(online.params()) {
        *t = c * *t + (1.0 - c) * w;
    }
    Ok(())
}
