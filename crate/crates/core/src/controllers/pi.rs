use super::{check_setpoint, ControlDecision, Controller};
use crate::error::Result;
use crate::model::U_MAX;

/// Accumulation rate of the slow integrator relative to the main one.
pub const SLOW_INTEGRATOR_RATE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiGains {
    pub kp: f64,
    pub ki1: f64,
    pub ki2: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self {
            kp: 0.08,
            ki1: 0.01,
            ki2: 0.001,
        }
    }
}

/// Proportional action plus two parallel integrators: a standard one for
/// steady-state error and a slow one acting as a bias estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiState {
    pub gains: PiGains,
    pub integral1: f64,
    pub integral2: f64,
    /// Set when the last output hit a bound and the integrators were held.
    pub saturated: bool,
}

impl PiState {
    pub fn new(gains: PiGains) -> Self {
        Self {
            gains,
            integral1: 0.0,
            integral2: 0.0,
            saturated: false,
        }
    }

    fn raw(&self, e: f64, i1: f64, i2: f64) -> f64 {
        self.gains.kp * e + self.gains.ki1 * i1 + self.gains.ki2 * i2
    }
}

/// One PI update. The error is `y_meas - setpoint`: a culture that is too
/// dense calls for more dilution. Integrators are held whenever the output
/// would leave `[0, U_MAX]`.
pub fn pi_step(
    state: PiState,
    y_meas: f64,
    setpoint: f64,
    dt: f64,
) -> Result<(ControlDecision, PiState)> {
    let e = y_meas - setpoint;
    let i1 = state.integral1 + e * dt;
    let i2 = state.integral2 + SLOW_INTEGRATOR_RATE * e * dt;
    let tentative = state.raw(e, i1, i2);
    if (0.0..=U_MAX).contains(&tentative) {
        let next = PiState {
            integral1: i1,
            integral2: i2,
            saturated: false,
            ..state
        };
        return Ok((ControlDecision::clamped(tentative)?, next));
    }
    let held = state.raw(e, state.integral1, state.integral2);
    Ok((
        ControlDecision::clamped(held)?,
        PiState {
            saturated: true,
            ..state
        },
    ))
}

#[derive(Clone, Debug)]
pub struct PiController {
    state: PiState,
    dt: f64,
}

impl PiController {
    pub fn new(gains: PiGains, dt: f64) -> Self {
        Self {
            state: PiState::new(gains),
            dt,
        }
    }

    pub fn state(&self) -> &PiState {
        &self.state
    }
}

impl Controller for PiController {
    fn name(&self) -> &str {
        "PI"
    }

    fn step(&mut self, y_meas: f64, setpoint: f64) -> Result<ControlDecision> {
        check_setpoint(setpoint)?;
        let (d, next) = pi_step(self.state, y_meas, setpoint, self.dt)?;
        self.state = next;
        Ok(d)
    }
}
