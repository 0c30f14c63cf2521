//! Acrobot model: two links, a motor at the elbow only.
//!
//! `theta1` is measured counter-clockwise from the positive horizontal axis and
//! `theta2` is the elbow angle relative to the first link, so the upright
//! configuration is `(π/2, 0)` and the tip height is `l1 sin θ1 + l2 sin(θ1 + θ2)`.
//! Integration is explicit Euler at `dt_sim` with the control held for `dt_ctrl`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;

/// Any state component beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub theta1: f64,
    pub theta2: f64,
    pub dtheta1: f64,
    pub dtheta2: f64,
}

impl State {
    pub const fn new(theta1: f64, theta2: f64, dtheta1: f64, dtheta2: f64) -> Self {
        Self {
            theta1,
            theta2,
            dtheta1,
            dtheta2,
        }
    }

    /// The upright equilibrium.
    pub const fn upright() -> Self {
        Self::new(PI / 2.0, 0.0, 0.0, 0.0)
    }

    /// The stable equilibrium, both links hanging down.
    pub const fn hanging() -> Self {
        Self::new(-PI / 2.0, 0.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.theta1, self.theta2, self.dtheta1, self.dtheta2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Physical constants and integration steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcrobotParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub gravity: f64,
    pub dt_sim: f64,
    pub dt_ctrl: f64,
}

impl Default for AcrobotParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            lc1: 0.5,
            lc2: 0.5,
            i1: 0.2,
            i2: 1.0,
            gravity: 9.8,
            dt_sim: 0.01,
            dt_ctrl: 0.2,
        }
    }
}

impl AcrobotParams {
    /// Number of Euler substeps per control interval.
    pub fn substeps(&self) -> usize {
        (self.dt_ctrl / self.dt_sim).round() as usize
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let all = [
            self.m1, self.m2, self.l1, self.l2, self.lc1, self.lc2, self.i1, self.i2, self.dt_sim,
            self.dt_ctrl,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !self.gravity.is_finite() {
            return Err(DynamicsError::InvalidParams(
                "masses, lengths, inertias and time steps must be positive and finite".into(),
            ));
        }
        let ratio = self.dt_ctrl / self.dt_sim;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(DynamicsError::InvalidParams(format!(
                "dt_ctrl ({}) must be an integer multiple of dt_sim ({})",
                self.dt_ctrl, self.dt_sim
            )));
        }
        Ok(())
    }

    /// Joint-space inertia matrix `D(q)`.
    pub fn mass_matrix(&self, theta2: f64) -> [[f64; 2]; 2] {
        let c2 = theta2.cos();
        let d11 = self.m1 * self.lc1 * self.lc1
            + self.m2 * (self.l1 * self.l1 + self.lc2 * self.lc2 + 2.0 * self.l1 * self.lc2 * c2)
            + self.i1
            + self.i2;
        let d12 = self.m2 * (self.lc2 * self.lc2 + self.l1 * self.lc2 * c2) + self.i2;
        let d22 = self.m2 * self.lc2 * self.lc2 + self.i2;
        [[d11, d12], [d12, d22]]
    }

    /// Kinetic plus potential energy, zero potential at the shoulder height.
    pub fn energy(&self, s: &State) -> f64 {
        let d = self.mass_matrix(s.theta2);
        let (w1, w2) = (s.dtheta1, s.dtheta2);
        let kinetic = 0.5 * (d[0][0] * w1 * w1 + 2.0 * d[0][1] * w1 * w2 + d[1][1] * w2 * w2);
        let potential = self.gravity
            * (self.m1 * self.lc1 * s.theta1.sin()
                + self.m2 * (self.l1 * s.theta1.sin() + self.lc2 * (s.theta1 + s.theta2).sin()));
        kinetic + potential
    }
}

/// Goal state and the success test applied at the end of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalSpec {
    pub goal_state: State,
    pub eps_thr: f64,
    pub lookback: usize,
    pub episode_len: usize,
}

impl Default for GoalSpec {
    fn default() -> Self {
        Self {
            goal_state: State::upright(),
            eps_thr: 0.1,
            lookback: 10,
            episode_len: 50,
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// `s - g` with both angle components wrapped.
pub fn wrapped_error(s: &State, g: &State) -> [f64; 4] {
    [
        wrap_angle(s.theta1 - g.theta1),
        wrap_angle(s.theta2 - g.theta2),
        s.dtheta1 - g.dtheta1,
        s.dtheta2 - g.dtheta2,
    ]
}

/// Joint accelerations for elbow torque `tau`.
pub fn accel(s: &State, tau: f64, p: &AcrobotParams) -> Result<(f64, f64), DynamicsError> {
    if !s.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !tau.is_finite() {
        return Err(DynamicsError::NonFinite("torque"));
    }
    Ok(accel_unchecked(s, tau, p))
}

#[inline]
fn accel_unchecked(s: &State, tau: f64, p: &AcrobotParams) -> (f64, f64) {
    let [[d11, d12], [_, d22]] = p.mass_matrix(s.theta2);
    let h = p.m2 * p.l1 * p.lc2 * s.theta2.sin();
    let c1 = -h * s.dtheta2 * (2.0 * s.dtheta1 + s.dtheta2);
    let c2 = h * s.dtheta1 * s.dtheta1;
    let g2 = p.m2 * p.lc2 * p.gravity * (s.theta1 + s.theta2).cos();
    let g1 = (p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity * s.theta1.cos() + g2;
    let r1 = -c1 - g1;
    let r2 = tau - c2 - g2;
    let det = d11 * d22 - d12 * d12;
    ((d22 * r1 - d12 * r2) / det, (d11 * r2 - d12 * r1) / det)
}

/// Continuous-time state derivative.
pub fn state_derivative(s: &State, tau: f64, p: &AcrobotParams) -> Result<[f64; 4], DynamicsError> {
    let (a1, a2) = accel(s, tau, p)?;
    Ok([s.dtheta1, s.dtheta2, a1, a2])
}

/// One explicit Euler substep of length `dt`.
#[inline]
pub fn euler_substep(s: &State, tau: f64, p: &AcrobotParams, dt: f64) -> State {
    let (a1, a2) = accel_unchecked(s, tau, p);
    State::new(
        s.theta1 + dt * s.dtheta1,
        s.theta2 + dt * s.dtheta2,
        s.dtheta1 + dt * a1,
        s.dtheta2 + dt * a2,
    )
}

/// Advances one control interval with `tau` held constant.
pub fn step(s: &State, tau: f64, p: &AcrobotParams) -> Result<State, DynamicsError> {
    if !tau.is_finite() {
        return Err(DynamicsError::NonFinite("torque"));
    }
    step_with(s, p, |_| tau)
}

/// Advances one control interval, re-evaluating `control` at every substep.
pub fn step_with<F>(s: &State, p: &AcrobotParams, mut control: F) -> Result<State, DynamicsError>
where
    F: FnMut(&State) -> f64,
{
    if !s.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    let n = p.substeps();
    let mut cur = *s;
    for k in 0..n {
        let tau = control(&cur);
        if !tau.is_finite() {
            return Err(DynamicsError::NonFinite("torque"));
        }
        cur = euler_substep(&cur, tau, p, p.dt_sim);
        if !cur.is_finite() || cur.max_abs() > DIVERGENCE_LIMIT {
            return Err(DynamicsError::Diverged {
                limit: DIVERGENCE_LIMIT,
                substeps: k + 1,
            });
        }
    }
    Ok(cur)
}

/// Tip height of the second link.
pub fn reward(s: &State, p: &AcrobotParams) -> f64 {
    p.l1 * s.theta1.sin() + p.l2 * (s.theta1 + s.theta2).sin()
}

/// Euclidean distance to the goal with wrapped angles.
pub fn goal_error(s: &State, g: &GoalSpec) -> f64 {
    wrapped_error(s, &g.goal_state)
        .iter()
        .map(|e| e * e)
        .sum::<f64>()
        .sqrt()
}

/// True iff the last `lookback + 1` states are all within `eps_thr` of the goal.
pub fn is_success(traj: &[State], g: &GoalSpec) -> Result<bool, DynamicsError> {
    let needed = g.lookback + 1;
    if traj.len() < needed {
        return Err(DynamicsError::TrajectoryTooShort {
            len: traj.len(),
            needed,
        });
    }
    Ok(traj[traj.len() - needed..]
        .iter()
        .all(|s| goal_error(s, g) < g.eps_thr))
}

/// Uniform angles on `[-π, π)`, velocities on `[-1, 1]`.
pub fn sample_initial_state<R: Rng + ?Sized>(rng: &mut R) -> State {
    State::new(
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
    )
}
