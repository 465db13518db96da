//! One-state growth model of a diluted culture.
//!
//! The culture density `x` follows `dx/dt = (mu * g(T) - u / tau) * x`, where
//! `g(T)` scales the growth rate with temperature and `u` is the pump rate held
//! constant over each control interval. The optical sensor reports
//! `clamp(alpha * x + noise, 0, 1)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Largest admissible pump rate.
pub const U_MAX: f64 = 0.02;

/// Culture temperature at which the growth factor is exactly one.
pub const NOMINAL_TEMP_C: f64 = 37.0;

/// Piecewise-linear map from temperature to a multiplicative growth factor.
#[derive(Clone, Debug, PartialEq)]
pub struct TempResponse {
    anchors: Vec<(f64, f64)>,
}

impl TempResponse {
    pub fn new(mut anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::InvalidParameter("temperature map is empty".into()));
        }
        anchors.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in anchors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidParameter(format!(
                    "duplicate temperature anchor {}",
                    w[0].0
                )));
            }
        }
        for &(t, f) in &anchors {
            if !t.is_finite() || !f.is_finite() || f <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "temperature anchor {t}:{f} must be finite with a positive factor"
                )));
            }
        }
        if !anchors.contains(&(NOMINAL_TEMP_C, 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "temperature map must contain {NOMINAL_TEMP_C}:1.0"
            )));
        }
        Ok(Self { anchors })
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    pub fn range(&self) -> (f64, f64) {
        (self.anchors[0].0, self.anchors[self.anchors.len() - 1].0)
    }

    pub fn factor(&self, temp_c: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&temp_c) {
            return Err(Error::TemperatureOutOfRange(temp_c, lo, hi));
        }
        for w in self.anchors.windows(2) {
            let ((t0, f0), (t1, f1)) = (w[0], w[1]);
            if temp_c == t0 {
                return Ok(f0);
            }
            if temp_c == t1 {
                return Ok(f1);
            }
            if temp_c > t0 && temp_c < t1 {
                return Ok(f0 + (f1 - f0) * (temp_c - t0) / (t1 - t0));
            }
        }
        // single-anchor map
        Ok(self.anchors[0].1)
    }

    pub fn max_factor(&self) -> f64 {
        self.anchors.iter().map(|a| a.1).fold(f64::MIN, f64::max)
    }
}

impl Default for TempResponse {
    fn default() -> Self {
        Self {
            anchors: vec![(30.0, 0.9), (NOMINAL_TEMP_C, 1.0)],
        }
    }
}

/// Ground-truth parameters of the simulated culture.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthParams {
    mu: f64,
    tau: f64,
    alpha: f64,
    process_noise_sd: f64,
    meas_noise_sd: f64,
    temp_response: TempResponse,
}

impl GrowthParams {
    pub const DEFAULT_MU: f64 = 0.0231;
    pub const DEFAULT_TAU: f64 = 0.3;
    pub const DEFAULT_PROCESS_NOISE_SD: f64 = 0.002;
    pub const DEFAULT_MEAS_NOISE_SD: f64 = 0.005;

    /// Noise-free parameters with unit output gain and the default temperature map.
    pub fn new(mu: f64, tau: f64) -> Result<Self> {
        Self::from_parts(mu, tau, 1.0, 0.0, 0.0, TempResponse::default())
    }

    pub fn from_parts(
        mu: f64,
        tau: f64,
        alpha: f64,
        process_noise_sd: f64,
        meas_noise_sd: f64,
        temp_response: TempResponse,
    ) -> Result<Self> {
        let p = Self {
            mu,
            tau,
            alpha,
            process_noise_sd,
            meas_noise_sd,
            temp_response,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let positive = [("mu", self.mu), ("tau", self.tau), ("alpha", self.alpha)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        let sds = [
            ("process_noise_sd", self.process_noise_sd),
            ("meas_noise_sd", self.meas_noise_sd),
        ];
        for (name, v) in sds {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        let max_growth = self.mu * self.temp_response.max_factor();
        if U_MAX / self.tau <= max_growth {
            return Err(Error::InvalidParameter(format!(
                "uncontrollable: max dilution {:.5}/min does not exceed max growth {:.5}/min",
                U_MAX / self.tau,
                max_growth
            )));
        }
        Ok(())
    }

    pub fn with_rates(&self, mu: f64, tau: f64) -> Result<Self> {
        let p = Self {
            mu,
            tau,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_noise(mut self, process_noise_sd: f64, meas_noise_sd: f64) -> Result<Self> {
        self.process_noise_sd = process_noise_sd;
        self.meas_noise_sd = meas_noise_sd;
        self.validate()?;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_temp_response(mut self, temp_response: TempResponse) -> Result<Self> {
        self.temp_response = temp_response;
        self.validate()?;
        Ok(self)
    }

    /// Same dynamics with both noise sources switched off.
    pub fn noise_free(&self) -> Self {
        Self {
            process_noise_sd: 0.0,
            meas_noise_sd: 0.0,
            ..self.clone()
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn process_noise_sd(&self) -> f64 {
        self.process_noise_sd
    }
    pub fn meas_noise_sd(&self) -> f64 {
        self.meas_noise_sd
    }
    pub fn temp_response(&self) -> &TempResponse {
        &self.temp_response
    }

    /// Effective growth rate at `temp_c`.
    pub fn growth_rate(&self, temp_c: f64) -> Result<f64> {
        Ok(self.mu * self.temp_response.factor(temp_c)?)
    }
}

impl Default for GrowthParams {
    fn default() -> Self {
        Self {
            mu: Self::DEFAULT_MU,
            tau: Self::DEFAULT_TAU,
            alpha: 1.0,
            process_noise_sd: Self::DEFAULT_PROCESS_NOISE_SD,
            meas_noise_sd: Self::DEFAULT_MEAS_NOISE_SD,
            temp_response: TempResponse::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimState {
    /// True density, OD-equivalent units.
    pub x: f64,
    /// Elapsed time, min.
    pub t: f64,
    pub temp_c: f64,
}

impl SimState {
    pub fn new(x: f64) -> Self {
        Self {
            x,
            t: 0.0,
            temp_c: NOMINAL_TEMP_C,
        }
    }
}

pub fn growth_rhs(x: f64, u: f64, p: &GrowthParams, temp_c: f64) -> Result<f64> {
    Ok((p.growth_rate(temp_c)? - u / p.tau) * x)
}

/// One classical fourth-order Runge-Kutta step of size `h`.
#[inline]
pub fn rk4<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let k1 = f(x);
    let k2 = f(x + 0.5 * h * k1);
    let k3 = f(x + 0.5 * h * k2);
    let k4 = f(x + h * k3);
    x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Number of substeps of length `substep` in `dt`, rejecting grids that do not divide evenly.
pub fn substep_count(dt: f64, substep: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(substep > 0.0 && substep.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dt ({dt}) and substep ({substep}) must be positive"
        )));
    }
    let n = (dt / substep).round();
    if n < 1.0 || (n * substep - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "substep {substep} does not divide dt {dt}"
        )));
    }
    Ok(n as usize)
}

/// Advance the culture over one zero-order-hold interval.
///
/// The interval is split into equal RK4 substeps; after each substep the
/// density is multiplied by `1 + xi`, `xi ~ N(0, process_noise_sd)`, and floored at zero.
pub fn step_zoh<R: Rng + ?Sized>(
    s: SimState,
    u: f64,
    dt: f64,
    substep: f64,
    p: &GrowthParams,
    rng: &mut R,
) -> Result<SimState> {
    if !(0.0..=U_MAX).contains(&u) {
        return Err(Error::InvalidParameter(format!(
            "pump rate {u} outside [0, {U_MAX}]"
        )));
    }
    if !s.x.is_finite() || s.x < 0.0 {
        return Err(Error::NonFinite(format!("state x = {}", s.x)));
    }
    let n = substep_count(dt, substep)?;
    let h = dt / n as f64;
    let rate = p.growth_rate(s.temp_c)? - u / p.tau;
    let noise = if p.process_noise_sd > 0.0 {
        Some(Normal::new(0.0, p.process_noise_sd).expect("validated sd"))
    } else {
        None
    };

    let mut x = s.x;
    for _ in 0..n {
        x = rk4(|x| rate * x, x, h);
        if let Some(noise) = &noise {
            x *= 1.0 + noise.sample(rng);
        }
        x = x.max(0.0);
    }
    if !x.is_finite() {
        return Err(Error::NonFinite(format!(
            "state after step from x = {}",
            s.x
        )));
    }
    Ok(SimState {
        x,
        t: s.t + dt,
        temp_c: s.temp_c,
    })
}

/// Noisy optical density reading, saturating at the sensor range [0, 1].
pub fn measure<R: Rng + ?Sized>(s: &SimState, p: &GrowthParams, rng: &mut R) -> f64 {
    let mut y = p.alpha * s.x;
    if p.meas_noise_sd > 0.0 {
        y += Normal::new(0.0, p.meas_noise_sd)
            .expect("validated sd")
            .sample(rng);
    }
    y.clamp(0.0, 1.0)
}

/// Pump rate that holds any density constant at `temp_c`.
pub fn equilibrium_input(p: &GrowthParams, temp_c: f64) -> Result<f64> {
    let u = p.growth_rate(temp_c)? * p.tau;
    if u > U_MAX {
        return Err(Error::Unholdable {
            required: u,
            limit: U_MAX,
        });
    }
    Ok(u)
}
