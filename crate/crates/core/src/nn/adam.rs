use super::Parameter;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Settings used for adversarial training: no first-moment momentum.
    pub fn gan() -> Self {
        AdamConfig {
            beta1: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param.value` from `param.grad`.
pub fn adam_step(param: &mut Parameter, cfg: &AdamConfig, lr: f64) {
    let state = &mut param.adam;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let values = param.value.data_mut();
    let grads = param.grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..values.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64, grad: f64) -> Parameter {
        let mut p = Parameter::new("theta", Tensor::scalar(value));
        p.grad = Tensor::scalar(grad);
        p
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.value.clone();
        adam_step(&mut p, &AdamConfig::default(), 0.1);
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut p = scalar_param(0.0, 1.0);
        adam_step(&mut p, &AdamConfig::default(), 0.0002);
        let want = -0.0002 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - want).abs() < 1e-18);
    }

    #[test]
    fn two_steps_match_scripted_oracle() {
        // Independent scalar transcription of the update rule.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.0002f64);
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = scalar_param(0.0, 1.0);
        adam_step(&mut p, &AdamConfig::default(), lr);
        adam_step(&mut p, &AdamConfig::default(), lr);
        assert!((p.value.data()[0] - theta).abs() < 1e-12);
        assert_eq!(p.adam.t, 2);
    }

    #[test]
    fn gan_preset_has_no_momentum() {
        let mut p = scalar_param(1.0, 0.5);
        adam_step(&mut p, &AdamConfig::gan(), 0.01);
        assert_eq!(p.adam.m.data()[0], 0.5);
    }
}
