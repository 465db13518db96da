use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use turbidostat::calibration::pmse;
use turbidostat::controllers::{
    mpc_cost, Controller, MpcConfig, MpcController, PiController, PiGains, DEFAULT_PENALTY,
};
use turbidostat::model::{step_zoh, GrowthParams, SimState, U_MAX};
use turbidostat::{Sample, Trajectory};

fn quiet(mu: f64, tau: f64) -> GrowthParams {
    GrowthParams::new(mu, tau).unwrap()
}

fn step(x0: f64, u: f64, dt: f64, h: f64, p: &GrowthParams) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    step_zoh(SimState::new(x0), u, dt, h, p, &mut rng)
        .unwrap()
        .x
}

fn series(values: &[f64]) -> Trajectory {
    let mut t = Trajectory::new();
    for (k, v) in values.iter().enumerate() {
        t.push(Sample::measured(k as f64, *v, 0.0)).unwrap();
    }
    t
}

#[test]
fn integrator_error_shrinks_with_fourth_order() {
    // a fast mode over a long step, so the truncation error dominates rounding
    let p = quiet(0.3, 0.05);
    let (x0, u, dt) = (0.5, 0.0, 10.0);
    let exact = x0 * (0.3f64 * dt).exp();
    let mut orders = Vec::new();
    let mut prev = None;
    for h in [1.0, 0.5, 0.25, 0.125] {
        let err = (step(x0, u, dt, h, &p) - exact).abs();
        if let Some(e) = prev {
            orders.push(f64::log2(e / err));
        }
        prev = Some(err);
    }
    assert!(
        orders.iter().all(|o| *o >= 3.8),
        "observed orders {orders:?}"
    );
}

proptest! {
    #[test]
    fn extinct_culture_stays_extinct(mu in 0.005f64..0.04, u in 0.0..=U_MAX, dt in 1usize..5) {
        let p = GrowthParams::new(mu, 0.3).unwrap().with_noise(0.01, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = step_zoh(SimState::new(0.0), u, dt as f64, 0.1, &p, &mut rng).unwrap();
        prop_assert_eq!(s.x, 0.0);
    }

    #[test]
    fn more_dilution_never_raises_density(x0 in 0.05f64..1.0, a in 0.0..=U_MAX, b in 0.0..=U_MAX) {
        let p = quiet(0.0231, 0.3);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(step(x0, hi, 1.0, 0.1, &p) <= step(x0, lo, 1.0, 0.1, &p));
    }

    #[test]
    fn noise_free_step_is_positive_and_finite(x0 in 1e-6f64..2.0, u in 0.0..=U_MAX) {
        let x = step(x0, u, 1.0, 0.1, &quiet(0.0231, 0.3));
        prop_assert!(x.is_finite() && x > 0.0);
    }

    #[test]
    fn pmse_is_zero_on_identity_and_grows_with_offset(
        data in prop::collection::vec(0.05f64..1.0, 3..40),
        d1 in 0.001f64..0.1,
        extra in 0.001f64..0.1,
    ) {
        let t = series(&data);
        prop_assert_eq!(pmse(&t, &t).unwrap(), 0.0);
        let near: Vec<f64> = data.iter().map(|v| v + d1).collect();
        let far: Vec<f64> = data.iter().map(|v| v + d1 + extra).collect();
        prop_assert!(pmse(&series(&near), &t).unwrap() < pmse(&series(&far), &t).unwrap());
    }

    #[test]
    fn pmse_ignores_error_sign(
        data in prop::collection::vec(0.1f64..0.9, 3..40),
        errs in prop::collection::vec(0.0f64..0.1, 40),
    ) {
        let up: Vec<f64> = data.iter().zip(&errs).map(|(v, e)| v + e).collect();
        let down: Vec<f64> = data.iter().zip(&errs).map(|(v, e)| v - e).collect();
        let t = series(&data);
        let a = pmse(&series(&up), &t).unwrap();
        let b = pmse(&series(&down), &t).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }

    #[test]
    fn pi_output_stays_in_range(ys in prop::collection::vec(0.0f64..=1.0, 1..200), sp in 0.2f64..=1.0) {
        let mut c = PiController::new(PiGains::default(), 1.0);
        for y in ys {
            let u = c.step(y, sp).unwrap().u();
            prop_assert!((0.0..=U_MAX).contains(&u));
        }
    }

    #[test]
    fn aggressive_pi_output_stays_in_range(ys in prop::collection::vec(0.0f64..=1.0, 1..100), sp in 0.2f64..=1.0) {
        let mut c = PiController::new(PiGains { kp: 5.0, ki1: 2.0, ki2: 1.0 }, 1.0);
        for y in ys {
            let u = c.step(y, sp).unwrap().u();
            prop_assert!((0.0..=U_MAX).contains(&u));
        }
    }

    #[test]
    fn mpc_output_stays_in_range(ys in prop::collection::vec(0.0f64..=1.0, 1..6), sp in 0.2f64..=1.0, seed in 0u64..1000) {
        let mut cfg = MpcConfig::new(GrowthParams::default());
        cfg.pso.seed = seed;
        cfg.pso.iterations = 10;
        let mut c = MpcController::new(cfg).unwrap();
        for y in ys {
            let u = c.step(y, sp).unwrap().u();
            prop_assert!((0.0..=U_MAX).contains(&u));
        }
    }

    #[test]
    fn feasible_mpc_cost_is_nonnegative(
        u in prop::collection::vec(0.0..=U_MAX, 5),
        x0 in 0.0f64..1.0,
        sp in 0.2f64..=1.0,
    ) {
        let c = mpc_cost(&u, x0, sp, &GrowthParams::default(), DEFAULT_PENALTY, 1.0, 0.1);
        prop_assert!(c >= 0.0);
        prop_assert!(c > 0.0 || x0 == sp);
    }

    #[test]
    fn infeasible_input_costs_at_least_the_penalty(
        mut u in prop::collection::vec(0.0..=U_MAX, 5),
        k in 0usize..5,
        over in 1e-6f64..0.01,
        below in any::<bool>(),
    ) {
        u[k] = if below { -over } else { U_MAX + over };
        let c = mpc_cost(&u, 0.5, 0.5, &GrowthParams::default(), DEFAULT_PENALTY, 1.0, 0.1);
        prop_assert!(c >= DEFAULT_PENALTY);
    }
}
