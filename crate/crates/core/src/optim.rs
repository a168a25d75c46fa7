use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled: applied to the parameter directly, scaled by the learning rate.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay.
///
/// Parameters whose gradient is `None` are frozen: neither their moments nor
/// their values change, and weight decay is not applied to them.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Option<Tensor>],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape(
            "adam_step",
            &[params.len(), state.first.len()],
            &[grads.len()],
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != state.first[i].shape() {
            return Err(Error::shape("adam_step", p.shape(), state.first[i].shape()));
        }
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * *pv);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(cfg(0.1, 0.0), &params);
        for _ in 0..5 {
            adam_step(&mut params, &[Some(Tensor::zeros(&[3]))], &mut state).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let lr = 0.01;
        let mut params = vec![Tensor::zeros(&[4])];
        let grad = Tensor::new(vec![4], vec![3.0, -0.2, 1e-3, -50.0]).unwrap();
        let mut state = AdamState::new(cfg(lr, 0.0), &params);
        adam_step(&mut params, &[Some(grad.clone())], &mut state).unwrap();
        for (p, g) in params[0].data().iter().zip(grad.data()) {
            // |g| / (|g| + eps) differs from 1 by at most eps / |g|
            assert!((p + lr * g.signum()).abs() <= lr * 1e-8 / g.abs() + 1e-15);
        }
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut params = vec![Tensor::ones(&[2]), Tensor::ones(&[2])];
        let mut state = AdamState::new(cfg(0.1, 0.5), &params);
        adam_step(&mut params, &[None, Some(Tensor::ones(&[2]))], &mut state).unwrap();
        assert_eq!(params[0], Tensor::ones(&[2]));
        assert_ne!(params[1], Tensor::ones(&[2]));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let err = adam_step(&mut params, &[Some(Tensor::zeros(&[3]))], &mut state);
        assert!(matches!(err, Err(Error::Shape { .. })));
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_times_rate() {
        let mut params = vec![Tensor::full(&[1], 2.0)];
        let mut state = AdamState::new(cfg(0.1, 1e-4), &params);
        adam_step(&mut params, &[Some(Tensor::zeros(&[1]))], &mut state).unwrap();
        assert!((params[0].item() - (2.0 - 0.1 * 1e-4 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent_is_monotone_for_ten_steps() {
        // Oracle: scalar simulation of the same recurrence, written out by hand.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            expected.push(x);
        }

        let mut params = vec![Tensor::full(&[1], 1.0)];
        let mut state = AdamState::new(cfg(lr, 0.0), &params);
        let mut prev = 1.0f64;
        for want in expected {
            let g = Tensor::full(&[1], 2.0 * params[0].item());
            adam_step(&mut params, &[Some(g)], &mut state).unwrap();
            let x = params[0].item();
            assert!(x.abs() < prev.abs(), "|x| must shrink: {x} vs {prev}");
            assert!((x - want).abs() < 1e-14);
            prev = x;
        }
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let run = || {
            let mut params = vec![Tensor::new(vec![2], vec![0.3, -0.7]).unwrap()];
            let mut state = AdamState::new(AdamConfig::default(), &params);
            for k in 0..20 {
                let g = params[0].map(|x| x * 3.0 + k as f64 * 0.01);
                adam_step(&mut params, &[Some(g)], &mut state).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}
