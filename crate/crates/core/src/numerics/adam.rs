use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Moment buffers and hyper-parameters of a bias-corrected Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Fresh state with zero moments and the default betas and epsilon.
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            learning_rate,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::Config(format!(
            "adam_step: params {n}, grads {}, moments {}/{}",
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3, 1e-3);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // At t = 1: m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps).
        let lr = 1e-5;
        let g = [0.5, -3.0, 40.0];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3, lr);
        adam_step(&mut p, &g, &mut s).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expect).abs() <= 1e-15, "{pi} vs {expect}");
            assert!((pi.abs() - lr).abs() < 1e-12);
        }
    }

    #[test]
    fn second_step_matches_scalar_trace() {
        let (lr, g) = (0.01, 2.0);
        let mut p = vec![1.0];
        let mut s = AdamState::new(1, lr);
        adam_step(&mut p, &[g], &mut s).unwrap();
        let after_one = p[0];
        adam_step(&mut p, &[g], &mut s).unwrap();
        // hand trace: m1 = 0.2, v1 = 0.004; m2 = 0.38, v2 = 0.007996
        let m2: f64 = 0.9 * 0.2 + 0.1 * 2.0;
        let v2: f64 = 0.999 * 0.004 + 0.001 * 4.0;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.998001);
        let expect = after_one - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15);
        assert_eq!(s.step_count, 2);
        assert!(s.second_moment[0] >= 0.0);
    }

    #[test]
    fn zero_learning_rate_never_moves() {
        let mut p = vec![0.25, -7.0];
        let mut s = AdamState::new(2, 0.0);
        for _ in 0..5 {
            adam_step(&mut p, &[1.5, -0.1], &mut s).unwrap();
        }
        assert_eq!(p, vec![0.25, -7.0]);
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2, 0.1);
        assert!(matches!(
            adam_step(&mut p, &[0.0], &mut s),
            Err(Error::Config(_))
        ));
    }
}
