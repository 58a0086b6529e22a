//! Fixed-horizon CartPole and the MNIST gridworld family.

pub mod cartpole;
pub mod gridworld;

pub use cartpole::{CartPoleAction, CartPoleEnv, CartPoleState, StartMode};
pub use gridworld::{Action, Cell, GridworldMdp};
