//! Network input encoding shared by every network.

use std::f64::consts::PI;

use crate::dynamics::State;

/// Velocity normalization constant.
pub const OMEGA_MAX: f64 = 4.0 * PI;

pub const STATE_FEATURES: usize = 6;

/// `(cos θ1, sin θ1, cos θ2, sin θ2, θ̇1/ω_max, θ̇2/ω_max)`.
pub fn encode_state(s: &State) -> [f64; STATE_FEATURES] {
    [
        s.theta1.cos(),
        s.theta1.sin(),
        s.theta2.cos(),
        s.theta2.sin(),
        s.dtheta1 / OMEGA_MAX,
        s.dtheta2 / OMEGA_MAX,
    ]
}

/// State features followed by the action in units of the torque scale,
/// clipped to `[-1, 1]`.
pub fn encode_state_action(s: &State, squashed_action: f64) -> [f64; STATE_FEATURES + 1] {
    let f = encode_state(s);
    [f[0], f[1], f[2], f[3], f[4], f[5], squashed_action.clamp(-1.0, 1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_is_periodic_in_angles() {
        let a = encode_state(&State::new(0.3, -1.2, 2.0, -3.0));
        let b = encode_state(&State::new(0.3 + 2.0 * PI, -1.2 - 4.0 * PI, 2.0, -3.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn action_is_clipped() {
        assert_eq!(encode_state_action(&State::upright(), 7.5)[6], 1.0);
        assert_eq!(encode_state_action(&State::upright(), -0.25)[6], -0.25);
    }
}
