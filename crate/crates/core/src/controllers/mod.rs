//! Feedback controllers sharing one contract: measured OD and setpoint in,
//! bounded pump rate out.

mod mpc;
mod pi;
mod pso;

pub use mpc::{mpc_cost, MpcConfig, MpcController, DEFAULT_PENALTY};
pub use pi::{pi_step, PiController, PiGains, PiState, SLOW_INTEGRATOR_RATE};
pub use pso::{pso_minimize, PsoConfig, PsoResult};

use crate::error::{Error, Result};
use crate::model::U_MAX;

pub const SETPOINT_MIN: f64 = 0.2;
pub const SETPOINT_MAX: f64 = 1.0;

/// A pump rate guaranteed to lie in `[0, U_MAX]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct ControlDecision(f64);

impl ControlDecision {
    /// Clamp a raw controller output into the admissible range.
    pub fn clamped(raw: f64) -> Result<Self> {
        if raw.is_nan() {
            return Err(Error::NonFinite("controller output".into()));
        }
        Ok(Self(raw.clamp(0.0, U_MAX)))
    }

    pub fn u(self) -> f64 {
        self.0
    }
}

pub fn check_setpoint(setpoint: f64) -> Result<()> {
    if (SETPOINT_MIN..=SETPOINT_MAX).contains(&setpoint) {
        Ok(())
    } else {
        Err(Error::SetpointOutOfRange(setpoint))
    }
}

pub trait Controller {
    fn name(&self) -> &str;

    /// Compute the pump rate for the next control interval.
    fn step(&mut self, y_meas: f64, setpoint: f64) -> Result<ControlDecision>;
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn step(&mut self, y_meas: f64, setpoint: f64) -> Result<ControlDecision> {
        (**self).step(y_meas, setpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decisions_are_clamped() {
        assert_eq!(ControlDecision::clamped(-0.003).unwrap().u(), 0.0);
        assert_eq!(ControlDecision::clamped(0.05).unwrap().u(), 0.02);
        assert_eq!(ControlDecision::clamped(0.011).unwrap().u(), 0.011);
        assert!(ControlDecision::clamped(f64::NAN).is_err());
        assert_eq!(ControlDecision::clamped(f64::INFINITY).unwrap().u(), 0.02);
    }

    #[test]
    fn setpoint_range() {
        assert!(check_setpoint(0.2).is_ok());
        assert!(check_setpoint(1.0).is_ok());
        assert!(check_setpoint(0.19).is_err());
        assert!(check_setpoint(1.01).is_err());
    }
}
