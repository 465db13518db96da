use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_setpoint, pso_minimize, ControlDecision, Controller, PsoConfig};
use crate::error::{Error, Result};
use crate::model::{step_zoh, GrowthParams, SimState, U_MAX};

/// Stage cost charged for an input outside the pump range.
pub const DEFAULT_PENALTY: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MpcConfig {
    pub horizon_steps: usize,
    pub penalty: f64,
    /// Prediction model; noise terms are ignored.
    pub model: GrowthParams,
    pub pso: PsoConfig,
    /// Control interval and prediction substep, min.
    pub dt: f64,
    pub substep: f64,
}

impl MpcConfig {
    pub fn new(model: GrowthParams) -> Self {
        let horizon_steps = 5;
        Self {
            horizon_steps,
            penalty: DEFAULT_PENALTY,
            model: model.noise_free(),
            pso: PsoConfig::new(vec![(-0.005, 0.025); horizon_steps]),
            dt: 1.0,
            substep: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps < 1 {
            return Err(Error::InvalidParameter("MPC horizon must be >= 1".into()));
        }
        if !(self.penalty > 0.0) {
            return Err(Error::InvalidParameter("MPC penalty must be > 0".into()));
        }
        if self.pso.bounds.len() != self.horizon_steps {
            return Err(Error::ShapeMismatch {
                expected: self.horizon_steps,
                got: self.pso.bounds.len(),
            });
        }
        self.pso.validate()
    }
}

/// Finite-horizon cost of an input sequence on the noise-free model.
///
/// Stage `k` costs `penalty` when `u_k` leaves `[0, U_MAX]` and
/// `(x_k - setpoint)^2` otherwise; the terminal state adds `(x_N - setpoint)^2`.
/// Out-of-range inputs are saturated before they reach the model.
pub fn mpc_cost(
    u_seq: &[f64],
    x0: f64,
    setpoint: f64,
    model: &GrowthParams,
    penalty: f64,
    dt: f64,
    substep: f64,
) -> f64 {
    let model = model.noise_free();
    // noise-free stepping never draws from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = SimState::new(x0);
    let mut cost = 0.0;
    for &u in u_seq {
        cost += if (0.0..=U_MAX).contains(&u) {
            (s.x - setpoint).powi(2)
        } else {
            penalty
        };
        s = match step_zoh(s, u.clamp(0.0, U_MAX), dt, substep, &model, &mut rng) {
            Ok(s) => s,
            Err(_) => return f64::NAN,
        };
    }
    cost + (s.x - setpoint).powi(2)
}

/// Receding-horizon controller: optimizes the whole input sequence by PSO and
/// applies the first element.
#[derive(Clone, Debug)]
pub struct MpcController {
    cfg: MpcConfig,
    rng: ChaCha8Rng,
}

impl MpcController {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.pso.seed);
        Ok(Self { cfg, rng })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// Optimal input sequence for the current measurement.
    pub fn plan(&mut self, y_meas: f64, setpoint: f64) -> Result<Vec<f64>> {
        check_setpoint(setpoint)?;
        let x0 = y_meas / self.cfg.model.alpha();
        let pso = PsoConfig {
            seed: self.rng.random(),
            ..self.cfg.pso.clone()
        };
        let c = &self.cfg;
        let r = pso_minimize(
            |u| mpc_cost(u, x0, setpoint, &c.model, c.penalty, c.dt, c.substep),
            &pso,
        )?;
        Ok(r.argmin)
    }
}

impl Controller for MpcController {
    fn name(&self) -> &str {
        "MPC"
    }

    fn step(&mut self, y_meas: f64, setpoint: f64) -> Result<ControlDecision> {
        let plan = self.plan(y_meas, setpoint)?;
        ControlDecision::clamped(plan[0])
    }
}
