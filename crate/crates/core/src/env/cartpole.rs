//! Classic pole-balancing dynamics with Euler integration.

use rand::Rng;

use crate::error::{Error, Result};

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const HALF_POLE_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_POLE_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

/// `[x, x_dot, theta, theta_dot]`
pub type CartPoleState = [f64; 4];

/// One integration step under an arbitrary horizontal force.
pub fn cartpole_dynamics(state: &CartPoleState, force: f64) -> CartPoleState {
    let [x, x_dot, theta, theta_dot] = *state;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    [
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    ]
}

/// Push left (0) or right (1). Reward is +1 for every step, including the
/// one that ends the episode.
pub fn cartpole_step(state: &CartPoleState, action: usize) -> Result<(CartPoleState, f64, bool)> {
    let force = match action {
        0 => -FORCE_MAG,
        1 => FORCE_MAG,
        _ => {
            return Err(Error::InvalidAction {
                action,
                action_count: 2,
            })
        }
    };
    let next = cartpole_dynamics(state, force);
    let terminal = next[0].abs() > X_THRESHOLD || next[2].abs() > THETA_THRESHOLD;
    Ok((next, 1.0, terminal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartPole {
    pub state: CartPoleState,
}

impl CartPole {
    pub const OBS_DIM: usize = 4;
    pub const ACTIONS: usize = 2;
    pub const DEFAULT_TIMEOUT: usize = 500;

    pub fn new() -> Self {
        Self { state: [0.0; 4] }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        for s in self.state.iter_mut() {
            *s = rng.random_range(-0.05..0.05);
        }
        self.state.to_vec()
    }

    pub fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let (next, reward, terminal) = cartpole_step(&self.state, action)?;
        self.state = next;
        Ok((next.to_vec(), reward, terminal))
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}
