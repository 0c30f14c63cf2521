//! Tanh-squashed Gaussian action distribution.
//!
//! With `u = mu + sigma * eps` the action is `scale * tanh(u)` and the log
//! density is taken over the squashed variable `y = tanh(u)`:
//! `log N(u; mu, sigma²) - log(1 - tanh²(u))`.

use std::f64::consts::{LN_2, PI};

/// Largest representable `|tanh(u)|` kept strictly below one.
const MAX_SQUASH: f64 = 1.0 - f64::EPSILON;

/// Per-state output of the policy network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mu: f64,
    pub log_sigma: f64,
    pub scale: f64,
}

/// A reparameterized draw and the partial derivatives needed to backprop
/// through it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    /// Pre-squash value `u`.
    pub pre_tanh: f64,
    /// `tanh(u)`, the action in units of `scale`.
    pub squashed: f64,
    /// `scale * tanh(u)`.
    pub action: f64,
    pub log_prob: f64,
    pub eps: f64,
    pub sigma: f64,
}

/// `log(1 - tanh²(u))` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (LN_2 - a - softplus(-2.0 * a))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl GaussianHead {
    pub fn new(mu: f64, log_sigma: f64, scale: f64) -> Self {
        Self {
            mu,
            log_sigma,
            scale,
        }
    }

    pub fn sample(&self, eps: f64) -> SquashedSample {
        let sigma = self.log_sigma.exp();
        let u = self.mu + sigma * eps;
        let y = u.tanh().clamp(-MAX_SQUASH, MAX_SQUASH);
        let log_normal = -0.5 * eps * eps - self.log_sigma - 0.5 * (2.0 * PI).ln();
        SquashedSample {
            pre_tanh: u,
            squashed: y,
            action: self.scale * y,
            log_prob: log_normal - log_one_minus_tanh_sq(u),
            eps,
            sigma,
        }
    }

    /// Log density of the squashed value `y ∈ (-1, 1)`.
    pub fn log_prob_of_squashed(&self, y: f64) -> f64 {
        let u = y.atanh();
        let eps = (u - self.mu) / self.log_sigma.exp();
        -0.5 * eps * eps - self.log_sigma - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u)
    }
}

impl SquashedSample {
    /// `(∂ log_prob/∂mu, ∂ log_prob/∂log_sigma)` with `eps` held fixed.
    pub fn log_prob_grads(&self) -> (f64, f64) {
        let two_tanh = 2.0 * self.squashed;
        (two_tanh, -1.0 + two_tanh * self.sigma * self.eps)
    }

    /// `(∂y/∂mu, ∂y/∂log_sigma)` for the squashed action `y = tanh(u)`.
    pub fn squashed_grads(&self) -> (f64, f64) {
        let dy_du = 1.0 - self.squashed * self.squashed;
        (dy_du, dy_du * self.sigma * self.eps)
    }
}
