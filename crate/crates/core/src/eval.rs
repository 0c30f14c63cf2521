//! Evaluation of trained controllers and the CSV artifacts behind the
//! reported figures and tables.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{BalanceMapSpec, RunConfig};
use crate::dynamics::{self, State};
use crate::error::SsacError;
use crate::gate::{self, Confusion, GateSample};
use crate::lqr;
use crate::nn::Mlp;
use crate::trainer::{do_rollout, Checkpoint, EpisodeRecord, Gating, RolloutCtx, RolloutMode};

/// Which controller an evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    /// Gate, hysteresis, balance controller and policy, as trained.
    Hybrid,
    /// The policy alone.
    PolicyOnly,
    /// The balance controller alone.
    BalanceOnly,
}

/// A frozen controller ready for rollouts.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub config: RunConfig,
    pub policy: Mlp,
    pub gate: Option<Mlp>,
}

impl Evaluator {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, SsacError> {
        let nets = ck
            .sac_nets()?
            .ok_or_else(|| SsacError::Config("checkpoint holds no policy".into()))?;
        Ok(Self {
            config: ck.config.clone(),
            policy: nets.policy,
            gate: ck.gate_net()?,
        })
    }

    /// Hybrid when a gate is present, otherwise the policy alone.
    pub fn default_kind(&self) -> ControllerKind {
        if self.gate.is_some() {
            ControllerKind::Hybrid
        } else {
            ControllerKind::PolicyOnly
        }
    }

    pub fn ctx(&self, kind: ControllerKind) -> Result<RolloutCtx<'_>, SsacError> {
        let c = &self.config;
        let gating = match kind {
            ControllerKind::Hybrid => Gating::Learned {
                net: self
                    .gate
                    .as_ref()
                    .ok_or_else(|| SsacError::Config("checkpoint holds no gate".into()))?,
                on: c.gate.on_threshold,
                off: c.gate.off_threshold,
            },
            ControllerKind::PolicyOnly => Gating::AlwaysSwingUp,
            ControllerKind::BalanceOnly => Gating::AlwaysBalance,
        };
        Ok(RolloutCtx {
            policy: &self.policy,
            gating,
            gains: &c.lqr,
            params: &c.dynamics,
            goal: &c.goal,
            torque_scale: c.sac.torque_scale,
        })
    }

    /// One episode from `s0`. Stochastic rollouts draw from a stream seeded
    /// by `seed`.
    pub fn rollout(
        &self,
        kind: ControllerKind,
        s0: State,
        deterministic: bool,
        seed: u64,
    ) -> Result<EpisodeRecord, SsacError> {
        let mode = if deterministic {
            RolloutMode::Deterministic
        } else {
            RolloutMode::Stochastic
        };
        do_rollout(&self.ctx(kind)?, s0, mode, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Deterministic episodes from every zero-velocity grid cell.
    pub fn balance_map(&self, kind: ControllerKind, spec: &BalanceMapSpec) -> Result<Vec<MapCell>, SsacError> {
        let ctx = self.ctx(kind)?;
        let cells: Vec<(f64, f64)> = BalanceMapSpec::axis(spec.n_theta1)
            .into_iter()
            .flat_map(|t1| BalanceMapSpec::axis(spec.n_theta2).into_iter().map(move |t2| (t1, t2)))
            .collect();
        cells
            .into_par_iter()
            .map(|(theta1, theta2)| {
                // Deterministic mode consumes no randomness.
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let rec = do_rollout(&ctx, State::new(theta1, theta2, 0.0, 0.0), RolloutMode::Deterministic, &mut rng)?;
                Ok(MapCell {
                    theta1,
                    theta2,
                    success: rec.success,
                })
            })
            .collect()
    }
}

/// Gate decisions on held-out states against the basin oracle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GateQuality {
    /// Predicted positive iff the gate would engage from the disengaged
    /// state, i.e. its output exceeds the on-threshold.
    pub engage: Confusion,
    pub states: usize,
}

/// Draws held-out states the way gate pretraining does (decision states of
/// balance-controller episodes from random starts, `stride` apart) and
/// scores the gate against `basin_label` of each state.
pub fn evaluate_gate<R: Rng + ?Sized>(
    net: &Mlp,
    cfg: &RunConfig,
    episodes: usize,
    stride: usize,
    rng: &mut R,
) -> Result<GateQuality, SsacError> {
    let mut starts = Vec::new();
    for _ in 0..episodes {
        let s0 = dynamics::sample_initial_state(rng);
        let (samples, _) = gate::label_lqr_episode(&s0, &cfg.lqr, &cfg.goal, &cfg.dynamics);
        starts.extend(samples.iter().step_by(stride.max(1)).map(|g| g.state));
    }
    let outcomes: Vec<(bool, bool)> = starts
        .par_iter()
        .map(|s| {
            let g = gate::gate_forward(net, s)?;
            let truth = lqr::basin_label(s, &cfg.lqr, &cfg.goal, &cfg.dynamics);
            Ok((g > cfg.gate.on_threshold, truth))
        })
        .collect::<Result<_, SsacError>>()?;
    let mut q = GateQuality {
        states: outcomes.len(),
        ..Default::default()
    };
    for (p, t) in outcomes {
        q.engage.record(p, t);
    }
    Ok(q)
}

/// One row of a rollout trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub dtheta1: f64,
    pub dtheta2: f64,
    pub torque: f64,
    /// 1 while the balance controller is engaged.
    pub gate: u8,
}

/// Trace rows for the decision states of an episode, followed by the final
/// state with the last torque and gate value repeated.
pub fn trace_rows(rec: &EpisodeRecord, dt_ctrl: f64) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = (0..rec.len())
        .map(|i| row(i as f64 * dt_ctrl, &rec.states[i], rec.actions[i], rec.engaged[i]))
        .collect();
    if let (Some(s), Some(&a), Some(&e)) = (rec.final_state(), rec.actions.last(), rec.engaged.last()) {
        rows.push(row(rec.len() as f64 * dt_ctrl, &s, a, e));
    }
    rows
}

fn row(time: f64, s: &State, torque: f64, engaged: bool) -> TraceRow {
    TraceRow {
        time,
        theta1: s.theta1,
        theta2: s.theta2,
        dtheta1: s.dtheta1,
        dtheta2: s.dtheta2,
        torque,
        gate: engaged as u8,
    }
}

/// Number of disengaged-to-engaged switches in a trace.
pub fn gate_switch_ons(rows: &[TraceRow]) -> usize {
    rows.windows(2).filter(|w| w[0].gate == 0 && w[1].gate == 1).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub theta1: f64,
    pub theta2: f64,
    pub success: bool,
}

pub fn success_rate(cells: &[MapCell]) -> f64 {
    if cells.is_empty() {
        return 0.0;
    }
    cells.iter().filter(|c| c.success).count() as f64 / cells.len() as f64
}

/// Flat row of the labeled gate dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub theta1: f64,
    pub theta2: f64,
    pub dtheta1: f64,
    pub dtheta2: f64,
    pub label: u8,
}

impl From<&GateSample> for GateRow {
    fn from(g: &GateSample) -> Self {
        Self {
            theta1: g.state.theta1,
            theta2: g.state.theta2,
            dtheta1: g.state.dtheta1,
            dtheta2: g.state.dtheta2,
            label: g.label as u8,
        }
    }
}

impl From<GateRow> for GateSample {
    fn from(r: GateRow) -> Self {
        Self {
            state: State::new(r.theta1, r.theta2, r.dtheta1, r.dtheta2),
            label: r.label != 0,
        }
    }
}

/// Mean of the last `window` values (all of them when fewer).
pub fn trailing_mean(values: &[f64], window: usize) -> Option<f64> {
    if values.is_empty() || window == 0 {
        return None;
    }
    let tail = &values[values.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Final-performance row of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub run: String,
    pub episodes: usize,
    /// Trailing-100-episode mean return at the end of training.
    pub final_return: f64,
    pub final_success_rate: f64,
}

pub const SMOOTHING_WINDOW: usize = 100;

pub fn summarize_log(run: &str, log: &[crate::trainer::LogRow]) -> Option<SeedSummary> {
    let returns: Vec<f64> = log.iter().map(|r| r.episode_return).collect();
    let succ: Vec<f64> = log.iter().map(|r| r.success as u8 as f64).collect();
    Some(SeedSummary {
        run: run.to_string(),
        episodes: log.len(),
        final_return: trailing_mean(&returns, SMOOTHING_WINDOW)?,
        final_success_rate: trailing_mean(&succ, SMOOTHING_WINDOW)?,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SsacError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, SsacError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(SsacError::from)).collect()
}

/// CSV text for rows, for in-memory comparisons.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, SsacError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SsacError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
