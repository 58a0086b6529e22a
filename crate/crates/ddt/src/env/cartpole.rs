//! Fixed-horizon CartPole with Euler integration.
//!
//! The pole is never "done": episodes always run the full horizon, even after
//! the pole falls, so no termination signal can leak into preference data.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    /// Reward-model observation: (cart position, pole angle).
    pub fn observation(&self) -> [f64; 2] {
        [self.x, self.theta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CartPoleAction {
    PushLeft,
    PushRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    InDistribution,
    OutOfDistribution,
}

#[derive(Debug, Clone, Copy)]
pub struct CartPoleEnv {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub horizon: usize,
}

impl Default for CartPoleEnv {
    fn default() -> Self {
        CartPoleEnv {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            horizon: 200,
        }
    }
}

impl CartPoleEnv {
    /// One Euler step. Never terminates or clamps.
    pub fn step(&self, state: CartPoleState, action: CartPoleAction) -> CartPoleState {
        let force = match action {
            CartPoleAction::PushLeft => -self.force_mag,
            CartPoleAction::PushRight => self.force_mag,
        };
        let total_mass = self.mass_cart + self.mass_pole;
        let polemass_length = self.mass_pole * self.half_length;
        let (sin_t, cos_t) = state.theta.sin_cos();
        let temp = (force + polemass_length * state.theta_dot * state.theta_dot * sin_t)
            / total_mass;
        let theta_acc = (self.gravity * sin_t - cos_t * temp)
            / (self.half_length * (4.0 / 3.0 - self.mass_pole * cos_t * cos_t / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;
        CartPoleState {
            x: state.x + self.tau * state.x_dot,
            x_dot: state.x_dot + self.tau * x_acc,
            theta: state.theta + self.tau * state.theta_dot,
            theta_dot: state.theta_dot + self.tau * theta_acc,
        }
    }

    /// Draws a start state. In-distribution: all four variables uniform in
    /// [-0.05, 0.05]. Out-of-distribution: cart position uniform in
    /// [2.35, 2.45] instead.
    pub fn reset<R: Rng>(&self, mode: StartMode, rng: &mut R) -> CartPoleState {
        let x = match mode {
            StartMode::InDistribution => rng.gen_range(-0.05..=0.05),
            StartMode::OutOfDistribution => rng.gen_range(2.35..=2.45),
        };
        CartPoleState {
            x,
            x_dot: rng.gen_range(-0.05..=0.05),
            theta: rng.gen_range(-0.05..=0.05),
            theta_dot: rng.gen_range(-0.05..=0.05),
        }
    }
}
