use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Search box, one `(lo, hi)` pair per dimension.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl PsoConfig {
    /// Constriction-coefficient defaults over the given box.
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self {
            swarm_size: 30,
            iterations: 40,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            bounds,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::InvalidParameter("swarm_size must be >= 2".into()));
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "inertia must lie in (0, 1), got {}",
                self.inertia
            )));
        }
        if !(self.cognitive >= 0.0 && self.social >= 0.0) {
            return Err(Error::InvalidParameter(
                "acceleration coefficients must be >= 0".into(),
            ));
        }
        if self.bounds.is_empty() {
            return Err(Error::InvalidParameter(
                "search box has no dimensions".into(),
            ));
        }
        for &(lo, hi) in &self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!("bad bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsoResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    /// Global-best value after initialization and after every iteration.
    pub history: Vec<f64>,
}

/// Global-best particle swarm minimization.
///
/// Particles are evaluated and compared in index order, and the global best
/// only moves on a strict improvement, so the lowest index wins exact ties.
pub fn pso_minimize<F>(objective: F, cfg: &PsoConfig) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let dim = cfg.bounds.len();
    let n = cfg.swarm_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let eval = |z: &[f64]| -> Result<f64> {
        let v = objective(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!(
                "PSO objective returned {v} at {z:?}"
            )))
        }
    };

    let mut pos = vec![0.0; n * dim];
    let mut vel = vec![0.0; n * dim];
    for i in 0..n {
        for (d, &(lo, hi)) in cfg.bounds.iter().enumerate() {
            let x = rng.random_range(lo..=hi);
            let target = rng.random_range(lo..=hi);
            pos[i * dim + d] = x;
            vel[i * dim + d] = 0.5 * (target - x);
        }
    }
    let mut pbest = pos.clone();
    let mut pbest_val = Vec::with_capacity(n);
    for i in 0..n {
        pbest_val.push(eval(&pos[i * dim..(i + 1) * dim])?);
    }
    let mut g = 0;
    for i in 1..n {
        if pbest_val[i] < pbest_val[g] {
            g = i;
        }
    }
    let mut gbest = pbest[g * dim..(g + 1) * dim].to_vec();
    let mut gbest_val = pbest_val[g];
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    history.push(gbest_val);

    for _ in 0..cfg.iterations {
        for i in 0..n {
            for (d, &(lo, hi)) in cfg.bounds.iter().enumerate() {
                let k = i * dim + d;
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let vmax = hi - lo;
                let v = cfg.inertia * vel[k]
                    + cfg.cognitive * r1 * (pbest[k] - pos[k])
                    + cfg.social * r2 * (gbest[d] - pos[k]);
                let v = v.clamp(-vmax, vmax);
                let x = pos[k] + v;
                if x < lo || x > hi {
                    pos[k] = x.clamp(lo, hi);
                    vel[k] = 0.0;
                } else {
                    pos[k] = x;
                    vel[k] = v;
                }
            }
        }
        for i in 0..n {
            let z = &pos[i * dim..(i + 1) * dim];
            let v = eval(z)?;
            if v < pbest_val[i] {
                pbest_val[i] = v;
                pbest[i * dim..(i + 1) * dim].copy_from_slice(z);
            }
            if v < gbest_val {
                gbest_val = v;
                gbest.copy_from_slice(z);
            }
        }
        history.push(gbest_val);
    }

    Ok(PsoResult {
        argmin: gbest,
        value: gbest_val,
        history,
    })
}
