//! Open-loop identification of the growth rate and dilution scale.
//!
//! Data come from a three-phase protocol: free growth, maximal dilution until
//! the culture thins out, then a random staircase of pump rates. The model is
//! fitted by output-error least squares: the noise-free model is simulated
//! under the recorded inputs and compared sample by sample with the measured
//! OD. Each replicate's initial density is estimated alongside the rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{measure, step_zoh, GrowthParams, SimState, U_MAX};
use crate::trajectory::{Sample, Trajectory};

/// Integration substep used by the protocol runner and the fit model, min.
pub const SUBSTEP: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum InputRule {
    Fixed(f64),
    /// Apply `u` until a measurement falls below `threshold`.
    DiluteUntilBelow {
        u: f64,
        threshold: f64,
    },
    /// Hold `levels[i]` during the i-th block of `period` minutes.
    RandomStaircase {
        period: f64,
        levels: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    /// Phase length in minutes; an upper bound for [`InputRule::DiluteUntilBelow`].
    pub duration: f64,
    pub rule: InputRule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopProtocol {
    pub phases: Vec<Phase>,
    pub seed: u64,
}

/// Starting density of a synthetic protocol run; grows to about 0.8 in the first phase.
pub const PROTOCOL_INITIAL_OD: f64 = 0.2;
pub const GROWTH_PHASE_MIN: f64 = 60.0;
pub const DILUTION_THRESHOLD: f64 = 0.3;
pub const DILUTION_PHASE_CAP_MIN: f64 = 240.0;
pub const RANDOM_PERIOD_MIN: f64 = 30.0;
pub const DEFAULT_RANDOM_TOTAL_MIN: f64 = 300.0;

/// The default protocol with a 300-minute random phase.
pub fn generate_protocol(seed: u64) -> OpenLoopProtocol {
    generate_protocol_with(seed, DEFAULT_RANDOM_TOTAL_MIN)
}

pub fn generate_protocol_with(seed: u64, random_total_min: f64) -> OpenLoopProtocol {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = (random_total_min / RANDOM_PERIOD_MIN).ceil().max(1.0) as usize;
    let levels = (0..blocks).map(|_| rng.random_range(0.0..=U_MAX)).collect();
    OpenLoopProtocol {
        phases: vec![
            Phase {
                duration: GROWTH_PHASE_MIN,
                rule: InputRule::Fixed(0.0),
            },
            Phase {
                duration: DILUTION_PHASE_CAP_MIN,
                rule: InputRule::DiluteUntilBelow {
                    u: U_MAX,
                    threshold: DILUTION_THRESHOLD,
                },
            },
            Phase {
                duration: random_total_min,
                rule: InputRule::RandomStaircase {
                    period: RANDOM_PERIOD_MIN,
                    levels,
                },
            },
        ],
        seed,
    }
}

impl OpenLoopProtocol {
    pub fn validate(&self) -> Result<()> {
        for (i, ph) in self.phases.iter().enumerate() {
            if !(ph.duration > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "phase {i} has non-positive duration"
                )));
            }
            let ok = match &ph.rule {
                InputRule::Fixed(u) => (0.0..=U_MAX).contains(u),
                InputRule::DiluteUntilBelow { u, .. } => (0.0..=U_MAX).contains(u),
                InputRule::RandomStaircase { period, levels } => {
                    *period > 0.0
                        && !levels.is_empty()
                        && levels.iter().all(|u| (0.0..=U_MAX).contains(u))
                }
            };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "phase {i} has an input outside [0, {U_MAX}]"
                )));
            }
        }
        Ok(())
    }
}

/// Run the protocol on the simulator at a 1-minute sampling cadence.
pub fn run_protocol(
    protocol: &OpenLoopProtocol,
    params: &GrowthParams,
    x0: f64,
    noise_seed: u64,
) -> Result<Trajectory> {
    protocol.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut state = SimState::new(x0);
    let mut traj = Trajectory::new();
    let mut last_u = 0.0;
    // a reading that ended a threshold phase is reused by the next phase
    let mut pending: Option<f64> = None;

    for phase in &protocol.phases {
        let start = state.t;
        let mut elapsed = 0usize;
        while (elapsed as f64) < phase.duration {
            let y = pending
                .take()
                .unwrap_or_else(|| measure(&state, params, &mut rng));
            let u = match &phase.rule {
                InputRule::Fixed(u) => *u,
                InputRule::DiluteUntilBelow { u, threshold } => {
                    if y < *threshold {
                        pending = Some(y);
                        break;
                    }
                    *u
                }
                InputRule::RandomStaircase { period, levels } => {
                    let block = ((state.t - start) / period).floor() as usize;
                    levels[block.min(levels.len() - 1)]
                }
            };
            traj.push(Sample {
                x_true: Some(state.x),
                ..Sample::measured(state.t, y, u)
            })?;
            state = step_zoh(state, u, 1.0, SUBSTEP, params, &mut rng)?;
            last_u = u;
            elapsed += 1;
        }
    }
    let y = pending.unwrap_or_else(|| measure(&state, params, &mut rng));
    traj.push(Sample {
        x_true: Some(state.x),
        ..Sample::measured(state.t, y, last_u)
    })?;
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitResult {
    pub mu_hat: f64,
    pub tau_hat: f64,
    pub residual_sse: f64,
    pub pmse_percent: f64,
}

impl FitResult {
    pub fn to_key_values(&self) -> String {
        format!(
            "mu_hat = {}\ntau_hat = {}\nresidual_sse = {}\npmse_percent = {}\n",
            self.mu_hat, self.tau_hat, self.residual_sse, self.pmse_percent
        )
    }
}

/// Noise-free model outputs on the grid of `data`, started from its first
/// measurement and driven by its recorded inputs.
///
/// Inputs are held between samples, so each interval is advanced with the
/// exact exponential solution.
pub fn model_outputs(data: &Trajectory, mu: f64, tau: f64) -> Vec<f64> {
    let s = data.samples();
    let mut out = Vec::with_capacity(s.len());
    let Some(first) = s.first() else {
        return out;
    };
    let mut x = first.y_meas;
    out.push(x.clamp(0.0, 1.0));
    for w in s.windows(2) {
        x *= ((mu - w[0].u / tau) * (w[1].t - w[0].t)).exp();
        out.push(x.clamp(0.0, 1.0));
    }
    out
}

/// Model trajectory on the same grid as `data`, for scoring with [`pmse`].
pub fn simulate_model(data: &Trajectory, mu: f64, tau: f64) -> Result<Trajectory> {
    let ys = model_outputs(data, mu, tau);
    Trajectory::from_samples(
        data.samples()
            .iter()
            .zip(ys)
            .map(|(s, y)| Sample {
                x_true: None,
                y_meas: y,
                ..*s
            })
            .collect(),
    )
}

/// Percentage mean square error, normalized by the mean squared data value.
pub fn pmse(model: &Trajectory, data: &Trajectory) -> Result<f64> {
    if !model.same_grid(data) {
        return Err(Error::GridMismatch(format!(
            "model has {} samples, data has {}",
            model.len(),
            data.len()
        )));
    }
    pmse_of(model.outputs(), data.outputs())
}

fn pmse_of(model: impl Iterator<Item = f64>, data: impl Iterator<Item = f64>) -> Result<f64> {
    let (mut err, mut energy, mut n) = (0.0, 0.0, 0usize);
    for (m, d) in model.zip(data) {
        err += (m - d).powi(2);
        energy += d * d;
        n += 1;
    }
    if n == 0 || energy == 0.0 {
        return Err(Error::NonFinite(
            "PMSE undefined for empty or all-zero data".into(),
        ));
    }
    Ok(100.0 * err / energy)
}

fn check_identifiable(data: &[Trajectory]) -> Result<()> {
    let n: usize = data.iter().map(Trajectory::len).sum();
    if n < 20 {
        return Err(Error::Identifiability(format!(
            "{n} samples, need at least 20"
        )));
    }
    let mut levels: Vec<f64> = data
        .iter()
        .flat_map(|t| {
            let k = t.len().saturating_sub(1);
            t.inputs().take(k).collect::<Vec<_>>()
        })
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() < 2 {
        return Err(Error::Identifiability(
            "inputs take a single level; mu and tau cannot be separated".into(),
        ));
    }
    let first = data
        .iter()
        .find_map(|t| t.samples().first())
        .map(|s| s.y_meas)
        .unwrap_or_default();
    if data.iter().all(|t| t.outputs().all(|y| y == first)) {
        return Err(Error::Identifiability("measured OD is constant".into()));
    }
    Ok(())
}

/// Growth factors `x_k / x_0` of the noise-free model on the grid of `t`.
fn unit_response(t: &Trajectory, mu: f64, tau: f64) -> Vec<f64> {
    let s = t.samples();
    let mut g = Vec::with_capacity(s.len());
    let mut x = 1.0;
    g.push(x);
    for w in s.windows(2) {
        x *= ((mu - w[0].u / tau) * (w[1].t - w[0].t)).exp();
        g.push(x);
    }
    g
}

/// Residual of one replicate with its initial density profiled out.
///
/// The first reading carries measurement noise, and starting the simulation
/// from it biases the rate estimates; instead the initial density minimizing
/// the clamped residual is found by a few Gauss-Newton steps.
fn profiled_residuals(t: &Trajectory, mu: f64, tau: f64) -> Vec<f64> {
    let g = unit_response(t, mu, tau);
    let ys: Vec<f64> = t.outputs().collect();
    let mut x0 = ys[0].max(1e-6);
    for _ in 0..4 {
        let (mut num, mut den) = (0.0, 0.0);
        for (gk, yk) in g.iter().zip(&ys) {
            let m = x0 * gk;
            // saturated predictions have zero slope
            if m < 1.0 {
                num += (yk - m) * gk;
                den += gk * gk;
            }
        }
        if den > 0.0 {
            x0 = (x0 + num / den).max(1e-9);
        }
    }
    g.iter()
        .zip(&ys)
        .map(|(gk, yk)| (x0 * gk).clamp(0.0, 1.0) - yk)
        .collect()
}

fn sse(data: &[Trajectory], mu: f64, tau: f64) -> f64 {
    data.iter()
        .flat_map(|t| profiled_residuals(t, mu, tau))
        .map(|r| r * r)
        .sum()
}

pub fn fit_parameters(traj: &Trajectory, init_guess: (f64, f64)) -> Result<FitResult> {
    fit_replicates(std::slice::from_ref(traj), init_guess)
}

const START_FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Joint least-squares fit over several replicate trajectories.
///
/// Local simplex searches in `(ln mu, ln tau)` start from a 5×5 grid around
/// the initial guess; the lowest residual wins, earliest start on ties.
pub fn fit_replicates(data: &[Trajectory], init_guess: (f64, f64)) -> Result<FitResult> {
    let (mu0, tau0) = init_guess;
    if !(mu0 > 0.0 && tau0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "initial guess must be positive, got ({mu0}, {tau0})"
        )));
    }
    check_identifiable(data)?;

    let objective = |theta: &[f64; 2]| {
        let v = sse(data, theta[0].exp(), theta[1].exp());
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };
    let starts: Vec<[f64; 2]> = START_FACTORS
        .iter()
        .flat_map(|fm| {
            START_FACTORS
                .iter()
                .map(move |ft| [(mu0 * fm).ln(), (tau0 * ft).ln()])
        })
        .collect();
    let results: Vec<([f64; 2], f64)> = starts
        .par_iter()
        .map(|s| nelder_mead(&objective, *s, 0.2, 600))
        .collect();

    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.1 < results[best].1 {
            best = i;
        }
    }
    let (theta, residual_sse) = results[best];
    let (mu_hat, tau_hat) = (theta[0].exp(), theta[1].exp());
    if !(mu_hat.is_finite() && tau_hat.is_finite()) {
        return Err(Error::NonFinite("fitted parameters".into()));
    }
    let energy: f64 = data.iter().flat_map(|t| t.outputs()).map(|y| y * y).sum();
    let pmse_percent = 100.0 * residual_sse / energy;
    Ok(FitResult {
        mu_hat,
        tau_hat,
        residual_sse,
        pmse_percent,
    })
}

/// Minimal 2-D Nelder–Mead with standard reflection/expansion/contraction/shrink coefficients.
fn nelder_mead<F>(f: &F, start: [f64; 2], step: f64, max_iter: usize) -> ([f64; 2], f64)
where
    F: Fn(&[f64; 2]) -> f64,
{
    let mut simplex = [
        start,
        [start[0] + step, start[1]],
        [start[0], start[1] + step],
    ];
    let mut values = simplex.map(|p| f(&p));

    let lerp =
        |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for _ in 0..max_iter {
        // order best -> worst
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.map(|i| simplex[i]);
        values = idx.map(|i| values[i]);

        let spread = (values[2] - values[0]).abs();
        let size = (1..3)
            .map(|i| {
                (simplex[i][0] - simplex[0][0])
                    .abs()
                    .max((simplex[i][1] - simplex[0][1]).abs())
            })
            .fold(0.0, f64::max);
        if size < 1e-10 || spread <= 1e-16 * values[0].abs().max(1e-300) && size < 1e-6 {
            break;
        }

        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(centroid, simplex[2], -1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = lerp(centroid, simplex[2], -2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] {
                lerp(centroid, reflected, 0.5)
            } else {
                lerp(centroid, simplex[2], 0.5)
            };
            let fc = f(&contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..3 {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best], values[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(points: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory::from_samples(
            points
                .iter()
                .map(|&(t, y, u)| Sample::measured(t, y, u))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn protocol_phases() {
        let p = generate_protocol(5);
        assert_eq!(p.phases.len(), 3);
        assert_eq!(p.phases[0].rule, InputRule::Fixed(0.0));
        assert_eq!(p.phases[0].duration, 60.0);
        match &p.phases[2].rule {
            InputRule::RandomStaircase { period, levels } => {
                assert_eq!(*period, 30.0);
                assert_eq!(levels.len(), 10);
                assert!(levels.iter().all(|u| (0.0..=U_MAX).contains(u)));
            }
            other => panic!("unexpected rule {other:?}"),
        }
        assert_eq!(generate_protocol(5), p);
        assert_ne!(generate_protocol(6), p);
    }

    #[test]
    fn protocol_run_follows_rules() {
        let params = GrowthParams::default();
        let proto = generate_protocol(3);
        let tr = run_protocol(&proto, &params, 0.2, 9).unwrap();
        let s = tr.samples();
        assert!(s[..60].iter().all(|s| s.u == 0.0));
        // maximal dilution until the first reading below the threshold
        let end = 60
            + s[60..]
                .iter()
                .position(|s| s.y_meas < DILUTION_THRESHOLD)
                .unwrap();
        assert!(
            end > 60,
            "culture should exceed the threshold after growing"
        );
        assert!(s[60..end].iter().all(|s| s.u == U_MAX));
        assert!(s[end].u != U_MAX);
        assert_eq!(tr.len(), end + 300 + 1);
    }

    #[test]
    fn pmse_hand_values() {
        let a = traj(&[(0.0, 1.0, 0.0), (1.0, 1.0, 0.0), (2.0, 1.0, 0.0)]);
        assert_eq!(pmse(&a, &a).unwrap(), 0.0);
        let b = traj(&[(0.0, 1.1, 0.0), (1.0, 1.1, 0.0), (2.0, 1.1, 0.0)]);
        assert!((pmse(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = traj(&[(0.0, 1.0, 0.0), (1.5, 1.0, 0.0), (2.0, 1.0, 0.0)]);
        assert!(matches!(pmse(&c, &a), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn zero_input_is_not_identifiable() {
        let pts: Vec<_> = (0..40)
            .map(|k| (k as f64, 0.1 * (0.02 * k as f64).exp(), 0.0))
            .collect();
        let err = fit_parameters(&traj(&pts), (0.02, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Identifiability(_)));
    }

    #[test]
    fn short_or_flat_data_is_rejected() {
        assert!(matches!(
            fit_parameters(&Trajectory::new(), (0.02, 0.5)),
            Err(Error::Identifiability(_))
        ));
        let flat: Vec<_> = (0..40)
            .map(|k| (k as f64, 0.4, if k % 2 == 0 { 0.0 } else { 0.01 }))
            .collect();
        assert!(matches!(
            fit_parameters(&traj(&flat), (0.02, 0.5)),
            Err(Error::Identifiability(_))
        ));
    }

    #[test]
    fn noise_free_round_trip() {
        let truth = GrowthParams::new(0.0231, 0.5).unwrap();
        let tr = run_protocol(&generate_protocol(1), &truth, 0.15, 1).unwrap();
        let fit = fit_parameters(&tr, (0.015, 0.8)).unwrap();
        assert!((fit.mu_hat / 0.0231 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.tau_hat / 0.5 - 1.0).abs() < 0.01, "{fit:?}");
        assert!(fit.pmse_percent < 1e-6);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |p: &[f64; 2]| (p[0] - 1.5).powi(2) + 3.0 * (p[1] + 0.5).powi(2);
        let (x, v) = nelder_mead(&f, [0.0, 0.0], 0.2, 500);
        assert!((x[0] - 1.5).abs() < 1e-6 && (x[1] + 0.5).abs() < 1e-6);
        assert!(v < 1e-10);
    }
}
