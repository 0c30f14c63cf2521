//! Balance controller `u = -K·(s - gs)` around the upright equilibrium, plus a
//! Newton–Kleinman Riccati solver used to cross-check the stored gains.

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, wrapped_error, AcrobotParams, GoalSpec, State};
use crate::error::{DynamicsError, LqrError};

/// Stored balance gains with the cost matrices they were designed for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrGains {
    pub k: [f64; 4],
    pub q: [[f64; 4]; 4],
    pub r: f64,
    /// Optional symmetric torque limit on the balance command; written as
    /// `"none"` in config files when absent.
    #[serde(with = "limit_or_none")]
    pub saturation: Option<f64>,
}

impl Default for LqrGains {
    fn default() -> Self {
        Self {
            k: [-1649.8, -460.2, -716.1, -278.2],
            q: [
                [1000.0, -500.0, 0.0, 0.0],
                [-500.0, 1000.0, 0.0, 0.0],
                [0.0, 0.0, 1000.0, -500.0],
                [0.0, 0.0, -500.0, 1000.0],
            ],
            r: 0.5,
            saturation: Some(DEFAULT_LQR_SATURATION),
        }
    }
}

/// Default torque limit on the balance command, N·m.
pub const DEFAULT_LQR_SATURATION: f64 = 2.0;

impl LqrGains {
    pub fn unsaturated(mut self) -> Self {
        self.saturation = None;
        self
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(4, 4, |i, j| self.q[i][j])
    }
}

mod limit_or_none {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Option<f64>;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a torque limit or \"none\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                Ok(Some(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                Ok(Some(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(Some(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == "none" {
                    Ok(None)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Balance torque for state `s`.
pub fn lqr_action(s: &State, gains: &LqrGains, goal: &GoalSpec) -> f64 {
    let e = wrapped_error(s, &goal.goal_state);
    let u = -gains.k.iter().zip(&e).map(|(k, e)| k * e).sum::<f64>();
    match gains.saturation {
        Some(limit) => u.clamp(-limit, limit),
        None => u,
    }
}

/// Continuous-time Jacobians `(A, B)` of the acrobot at the goal with zero torque.
///
/// The goal must be a zero-velocity equilibrium.
pub fn linearize(p: &AcrobotParams, g: &GoalSpec) -> Result<(Matrix4<f64>, Vector4<f64>), LqrError> {
    let gs = g.goal_state;
    if gs.dtheta1 != 0.0 || gs.dtheta2 != 0.0 {
        return Err(LqrError::Dimension("goal must have zero velocity".into()));
    }
    let [[d11, d12], [_, d22]] = p.mass_matrix(gs.theta2);
    let det = d11 * d22 - d12 * d12;
    if det.abs() < 1e-12 {
        return Err(LqrError::Singular("mass matrix"));
    }
    let dinv = [[d22 / det, -d12 / det], [-d12 / det, d11 / det]];
    let mul = |m: [[f64; 2]; 2], v: [f64; 2]| {
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    };

    // q̈ = D⁻¹ (e₂τ - G(q)) at zero velocity; Coriolis terms are quadratic in q̇.
    let s12 = (gs.theta1 + gs.theta2).sin();
    let dg2 = -p.m2 * p.lc2 * p.gravity * s12;
    let dg1_dt1 = -(p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity * gs.theta1.sin() + dg2;
    let grav = {
        let g2 = p.m2 * p.lc2 * p.gravity * (gs.theta1 + gs.theta2).cos();
        [(p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity * gs.theta1.cos() + g2, g2]
    };
    let rhs = [-grav[0], -grav[1]];
    // ∂(D⁻¹ r)/∂θ₂ = D⁻¹ (∂r/∂θ₂ − ∂D/∂θ₂ · D⁻¹ r)
    let qdd = mul(dinv, rhs);
    let dd12 = -p.m2 * p.l1 * p.lc2 * gs.theta2.sin();
    let dd11 = 2.0 * dd12;
    let dd_qdd = [dd11 * qdd[0] + dd12 * qdd[1], dd12 * qdd[0]];
    let col_t1 = mul(dinv, [-dg1_dt1, -dg2]);
    let col_t2 = mul(dinv, [-dg2 - dd_qdd[0], -dg2 - dd_qdd[1]]);
    let b = mul(dinv, [0.0, 1.0]);

    let a = Matrix4::new(
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        col_t1[0], col_t2[0], 0.0, 0.0, //
        col_t1[1], col_t2[1], 0.0, 0.0,
    );
    Ok((a, Vector4::new(0.0, 0.0, b[0], b[1])))
}

/// Riccati solution and the associated optimal gain.
#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of `AᵀP + PA − PBR⁻¹BᵀP + Q`.
    pub residual: f64,
}

const CARE_TOL: f64 = 1e-9;
const CARE_MAX_ITERS: usize = 200;

/// Solves `AᵀX + XA = -M` through the Kronecker form.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>, LqrError> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(n * n, 1, (-m).as_slice());
    let x = op.lu().solve(&rhs).ok_or(LqrError::Singular("Lyapunov equation"))?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// True iff every eigenvalue has strictly negative real part.
pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.clone().complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

/// Bass's method: a stabilizing gain for a controllable pair.
fn initial_stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LqrError> {
    let n = a.nrows();
    if is_hurwitz(a) {
        return Ok(DMatrix::zeros(b.ncols(), n));
    }
    // β above every |Re λ(A)|, so −(A + βI) is Hurwitz.
    let beta = a.norm() + 1.0;
    let shifted = a + DMatrix::<f64>::identity(n, n) * beta;
    // (A+βI)Z + Z(A+βI)ᵀ = 2BBᵀ, i.e. the Lyapunov form with Ã = (A+βI)ᵀ, M = -2BBᵀ.
    let z = solve_lyapunov(&shifted.transpose(), &(-(b * b.transpose()) * 2.0))?;
    let z_inv = z.try_inverse().ok_or(LqrError::NotStabilizable)?;
    let k = b.transpose() * z_inv;
    if !is_hurwitz(&(a - b * &k)) {
        return Err(LqrError::NotStabilizable);
    }
    Ok(k)
}

/// Continuous algebraic Riccati equation by Newton–Kleinman iteration.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CareSolution, LqrError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(LqrError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let r_inv = r.clone().try_inverse().ok_or(LqrError::Singular("R"))?;
    let mut k = initial_stabilizing_gain(a, b)?;
    let mut p_prev: Option<DMatrix<f64>> = None;
    let mut change = f64::INFINITY;
    for it in 1..=CARE_MAX_ITERS {
        let closed = a - b * &k;
        let cost = q + k.transpose() * r * &k;
        let p = solve_lyapunov(&closed, &cost)?;
        k = &r_inv * b.transpose() * &p;
        if let Some(prev) = &p_prev {
            change = (&p - prev).norm() / p.norm().max(1.0);
            if change < CARE_TOL * 1e-3 {
                let residual = care_residual(a, b, q, &r_inv, &p);
                if residual / q.norm().max(1.0) > CARE_TOL {
                    return Err(LqrError::NoConvergence {
                        iterations: it,
                        change: residual,
                    });
                }
                return Ok(CareSolution {
                    p,
                    k,
                    iterations: it,
                    residual,
                });
            }
        }
        p_prev = Some(p);
    }
    Err(LqrError::NoConvergence {
        iterations: CARE_MAX_ITERS,
        change,
    })
}

fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    (a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q).norm()
}

/// Gains derived from the linearization with the stored Q and R.
pub fn design_gains(p: &AcrobotParams, g: &GoalSpec, gains: &LqrGains) -> Result<CareSolution, LqrError> {
    let (a, b) = linearize(p, g)?;
    let a = DMatrix::from_fn(4, 4, |i, j| a[(i, j)]);
    let b = DMatrix::from_column_slice(4, 1, b.as_slice());
    solve_care(&a, &b, &gains.q_matrix(), &DMatrix::from_element(1, 1, gains.r))
}

/// States visited by the balance controller over one episode, excluding `s0`.
///
/// The command is recomputed at every integration substep.
pub fn lqr_rollout(
    s0: &State,
    gains: &LqrGains,
    g: &GoalSpec,
    p: &AcrobotParams,
) -> Result<Vec<State>, DynamicsError> {
    let mut traj = Vec::with_capacity(g.episode_len);
    let mut s = *s0;
    for _ in 0..g.episode_len {
        s = dynamics::step_with(&s, p, |x| lqr_action(x, gains, g))?;
        traj.push(s);
    }
    Ok(traj)
}

/// Whether the balance controller alone satisfies the success test from `s0`.
pub fn basin_label(s0: &State, gains: &LqrGains, g: &GoalSpec, p: &AcrobotParams) -> bool {
    match lqr_rollout(s0, gains, g, p) {
        Ok(traj) => dynamics::is_success(&traj, g).unwrap_or(false),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn goal() -> GoalSpec {
        GoalSpec::default()
    }

    fn offset(d: [f64; 4]) -> State {
        let g = State::upright();
        State::new(g.theta1 + d[0], g.theta2 + d[1], d[2], d[3])
    }

    #[test]
    fn zero_at_goal_and_linear_in_error() {
        let gains = LqrGains::default().unsaturated();
        assert_eq!(lqr_action(&State::upright(), &gains, &goal()), 0.0);
        assert_abs_diff_eq!(lqr_action(&offset([0.01, 0.0, 0.0, 0.0]), &gains, &goal()), 16.498, epsilon = 1e-9);
        assert_abs_diff_eq!(lqr_action(&offset([0.0, 0.0, 0.01, 0.0]), &gains, &goal()), 7.161, epsilon = 1e-9);
        let a = lqr_action(&offset([0.01, -0.02, 0.03, 0.04]), &gains, &goal());
        let b = lqr_action(&offset([0.02, -0.04, 0.06, 0.08]), &gains, &goal());
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-9);
        // wrapping: a full turn on either joint gives the same command
        let c = lqr_action(&offset([0.01 + 2.0 * PI, -0.02 - 2.0 * PI, 0.03, 0.04]), &gains, &goal());
        assert_abs_diff_eq!(a, c, epsilon = 1e-9);
    }

    #[test]
    fn saturation_limits_command() {
        let gains = LqrGains {
            saturation: Some(5.0),
            ..LqrGains::default()
        };
        assert_eq!(lqr_action(&offset([0.01, 0.0, 0.0, 0.0]), &gains, &goal()), 5.0);
        assert_eq!(lqr_action(&offset([-0.01, 0.0, 0.0, 0.0]), &gains, &goal()), -5.0);
    }

    #[test]
    fn linearization_structure_and_finite_differences() {
        let p = AcrobotParams::default();
        let (a, b) = linearize(&p, &goal()).unwrap();
        assert_eq!(a[(0, 2)], 1.0);
        assert_eq!(a[(1, 3)], 1.0);
        assert_eq!(a[(0, 3)], 0.0);
        assert_eq!(a[(1, 2)], 0.0);
        assert_eq!((b[0], b[1]), (0.0, 0.0));
        let h = 1e-6;
        let gs = State::upright().to_array();
        for j in 0..4 {
            let mut xp = gs;
            xp[j] += h;
            let mut xm = gs;
            xm[j] -= h;
            let fp = dynamics::state_derivative(&State::from_array(xp), 0.0, &p).unwrap();
            let fm = dynamics::state_derivative(&State::from_array(xm), 0.0, &p).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(a[(i, j)], (fp[i] - fm[i]) / (2.0 * h), epsilon = 1e-6);
            }
        }
        let fp = dynamics::state_derivative(&State::upright(), h, &p).unwrap();
        let fm = dynamics::state_derivative(&State::upright(), -h, &p).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(b[i], (fp[i] - fm[i]) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn linearization_at_hanging_matches_finite_differences() {
        let p = AcrobotParams::default();
        let g = GoalSpec {
            goal_state: State::hanging(),
            ..GoalSpec::default()
        };
        let (a, _) = linearize(&p, &g).unwrap();
        let h = 1e-6;
        let gs = State::hanging().to_array();
        for j in 0..2 {
            let mut xp = gs;
            xp[j] += h;
            let mut xm = gs;
            xm[j] -= h;
            let fp = dynamics::state_derivative(&State::from_array(xp), 0.0, &p).unwrap();
            let fm = dynamics::state_derivative(&State::from_array(xm), 0.0, &p).unwrap();
            for i in 2..4 {
                assert_abs_diff_eq!(a[(i, j)], (fp[i] - fm[i]) / (2.0 * h), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn scalar_care_closed_form() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_care(&DMatrix::from_element(1, 1, -1.0), &one, &one, &one).unwrap();
        assert_abs_diff_eq!(sol.p[(0, 0)], 2f64.sqrt() - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.k[(0, 0)], 2f64.sqrt() - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unstable_scalar_care() {
        // a = 1: p² − 2p − 1 = 0 → p = 1 + √2
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_care(&one, &one, &one, &one).unwrap();
        assert_abs_diff_eq!(sol.p[(0, 0)], 1.0 + 2f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn designed_gain_reproduces_stored_gain() {
        let gains = LqrGains::default();
        let sol = design_gains(&AcrobotParams::default(), &goal(), &gains).unwrap();
        for (i, stored) in gains.k.iter().enumerate() {
            let derived = sol.k[(0, i)];
            assert_eq!(derived.signum(), stored.signum());
            assert!((derived - stored).abs() / stored.abs() < 1e-3, "K[{i}] = {derived}");
        }
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::<f64>::zeros(3, 1);
        let q = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::<f64>::identity(1, 1);
        assert!(matches!(solve_care(&a, &b, &q, &r), Err(LqrError::Dimension(_))));
    }

    #[test]
    fn uncontrollable_unstable_pair_reports_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::<f64>::identity(1, 1);
        assert!(solve_care(&a, &b, &q, &r).is_err());
    }

    #[test]
    fn basin_label_examples() {
        let (p, g, gains) = (AcrobotParams::default(), goal(), LqrGains::default());
        assert!(basin_label(&State::upright(), &gains, &g, &p));
        assert!(!basin_label(&State::hanging(), &gains, &g, &p));
        assert!(basin_label(&offset([0.05, -0.05, 0.0, 0.0]), &gains, &g, &p));
        let s = offset([0.3, -0.2, 0.5, 0.0]);
        assert_eq!(basin_label(&s, &gains, &g, &p), basin_label(&s, &gains, &g, &p));
    }
}
