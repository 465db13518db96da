use crate::error::{Error, Result};

/// Bias-corrected first/second moment estimates for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for len in [grads.len(), state.m.len(), state.v.len()] {
        if len != params.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                got: len,
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = [1.0];
        let mut st = AdamState::new(1);
        adam_update(&mut w, &[2.0], &mut st, 0.001).unwrap();
        assert!((w[0] - 0.999).abs() < 1e-6);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut w = [0.3, -2.0];
        let mut st = AdamState::new(2);
        adam_update(&mut w, &[0.0, 0.0], &mut st, 0.01).unwrap();
        assert_eq!(w, [0.3, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn descends_scalar_quadratic() {
        let mut w = [1.0];
        let mut st = AdamState::new(1);
        for _ in 0..200 {
            let g = 2.0 * (w[0] - 0.3);
            adam_update(&mut w, &[g], &mut st, 0.01).unwrap();
        }
        assert!((w[0] - 0.3).abs() < 0.05, "w = {}", w[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut w = [0.0; 3];
        let mut st = AdamState::new(3);
        assert!(adam_update(&mut w, &[0.0; 2], &mut st, 0.1).is_err());
        let mut st = AdamState::new(2);
        assert!(adam_update(&mut w, &[0.0; 3], &mut st, 0.1).is_err());
    }
}
