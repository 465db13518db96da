//! Simulation-backed density control for a turbidostat.
//!
//! - [`model`]: one-state growth dynamics, zero-order-hold stepping, noisy OD sensor.
//! - [`calibration`]: open-loop protocol and least-squares fit of growth rate and dilution scale.
//! - [`controllers`]: PI with two integrators, particle-swarm MPC.
//! - [`dqn`]: value network, Adam, replay, training loop and greedy policy.
//! - [`bench`]: setpoint and temperature protocols, ISE/ITAE, controller comparison.
//! - [`config`]: key = value run configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod calibration;
pub mod config;
pub mod controllers;
pub mod dqn;
pub mod error;
pub mod model;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{GrowthParams, SimState, U_MAX};
pub use trajectory::{Sample, Trajectory};
