use serde::{Deserialize, Serialize};

use crate::error::{FclError, Result};

/// Hyperparameters for decoupled-weight-decay Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one parameter tensor, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamWState {
    pub fn new(len: usize, config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }
}

/// Applies one AdamW update to `params` in place.
///
/// Weight decay is decoupled: `p <- p - lr * wd * p` happens before the
/// adaptive step and does not enter the moment estimates.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamWState) -> Result<()> {
    let n = params.len();
    if grads.len() != n {
        return Err(FclError::shape("adamw gradient", n, grads.len()));
    }
    if state.first_moment.len() != n {
        return Err(FclError::shape("adamw state", n, state.first_moment.len()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(FclError::NonFinite("adamw gradient"));
    }
    let AdamWConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
        weight_decay,
    } = state.config;

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        if weight_decay != 0.0 {
            *p -= lr * weight_decay * *p;
        }
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut st = AdamWState::new(3, AdamWConfig::default());
        adamw_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_on_square() {
        // f(x) = x^2 at x = 1: g = 2, m_hat = 2, v_hat = 4, step = lr * 2 / (2 + eps).
        let mut x = vec![1.0];
        let mut st = AdamWState::new(1, AdamWConfig::default());
        adamw_step(&mut x, &[2.0], &mut st).unwrap();
        let expected = 1.0 - 0.002 * 2.0 / (2.0 + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15);
        assert!((x[0] - 0.998).abs() < 1e-10);
    }

    #[test]
    fn decoupled_weight_decay() {
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut x = vec![2.0];
        let mut st = AdamWState::new(1, cfg);
        adamw_step(&mut x, &[0.0], &mut st).unwrap();
        assert!((x[0] - (2.0 - 0.002 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let mut p = vec![0.3, -0.7];
            let mut st = AdamWState::new(2, AdamWConfig::default());
            for _ in 0..20 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + 0.1).collect();
                adamw_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn convex_quadratic_descends_after_warmup() {
        for lr in [0.001, 0.005, 0.01] {
            let cfg = AdamWConfig {
                learning_rate: lr,
                ..Default::default()
            };
            let f = |p: &[f64]| 3.0 * p[0] * p[0] + 0.5 * p[1] * p[1];
            let mut p = vec![1.5, -2.0];
            let mut st = AdamWState::new(2, cfg);
            let mut prev = f(&p);
            for step in 0..200 {
                let g = vec![6.0 * p[0], p[1]];
                adamw_step(&mut p, &g, &mut st).unwrap();
                let cur = f(&p);
                if step >= 3 {
                    assert!(cur <= prev, "lr {lr} step {step}: {cur} > {prev}");
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = vec![0.0; 2];
        let mut st = AdamWState::new(2, AdamWConfig::default());
        assert!(adamw_step(&mut p, &[1.0], &mut st).is_err());
        assert!(adamw_step(&mut p, &[f64::NAN, 0.0], &mut st).is_err());
        let mut st3 = AdamWState::new(3, AdamWConfig::default());
        assert!(adamw_step(&mut p, &[0.0, 0.0], &mut st3).is_err());
    }
}
