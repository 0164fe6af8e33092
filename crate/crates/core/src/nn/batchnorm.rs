use super::{take_cache, Mode, Module, Parameter};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over every axis except the last.
#[derive(Clone)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    name: String,
    normalized: Option<Tensor>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            name: name.to_string(),
            normalized: None,
            inv_std: Vec::new(),
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl Module for BatchNorm {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels();
        if x.shape().last() != Some(&c) {
            return Err(shape_err!("batchnorm expects {c} channels, got shape {:?}", x.shape()));
        }
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        match mode {
            Mode::Eval => {
                let rm = self.running_mean.data();
                let rv = self.running_var.data();
                let inv: Vec<f64> = rv.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
                let mut y = x;
                for px in y.data_mut().chunks_mut(c) {
                    for k in 0..c {
                        px[k] = gamma[k] * (px[k] - rm[k]) * inv[k] + beta[k];
                    }
                }
                Ok(y)
            }
            Mode::Train => {
                if x.batch() < 2 {
                    return Err(Error::Parameter(format!(
                        "{}: training-mode batch norm needs a batch of at least 2",
                        self.name
                    )));
                }
                let n = x.len() / c;
                let mut mean = vec![0.0; c];
                for px in x.data().chunks(c) {
                    for k in 0..c {
                        mean[k] += px[k];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for px in x.data().chunks(c) {
                    for k in 0..c {
                        let d = px[k] - mean[k];
                        var[k] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
                let mut xhat = x;
                for px in xhat.data_mut().chunks_mut(c) {
                    for k in 0..c {
                        px[k] = (px[k] - mean[k]) * inv[k];
                    }
                }
                let mut y = xhat.clone();
                for px in y.data_mut().chunks_mut(c) {
                    for k in 0..c {
                        px[k] = gamma[k] * px[k] + beta[k];
                    }
                }
                let unbias = n as f64 / (n as f64 - 1.0).max(1.0);
                for k in 0..c {
                    let rm = &mut self.running_mean.data_mut()[k];
                    *rm = MOMENTUM * *rm + (1.0 - MOMENTUM) * mean[k];
                    let rv = &mut self.running_var.data_mut()[k];
                    *rv = MOMENTUM * *rv + (1.0 - MOMENTUM) * var[k] * unbias;
                }
                self.normalized = Some(xhat);
                self.inv_std = inv;
                Ok(y)
            }
        }
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let xhat = take_cache(&mut self.normalized, "batchnorm")?;
        grad.ensure_shape(xhat.shape())?;
        let c = self.channels();
        let n = (xhat.len() / c) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (g, xh) in grad.data().chunks(c).zip(xhat.data().chunks(c)) {
            for k in 0..c {
                sum_g[k] += g[k];
                sum_gx[k] += g[k] * xh[k];
            }
        }
        for k in 0..c {
            self.gamma.grad.data_mut()[k] += sum_gx[k];
            self.beta.grad.data_mut()[k] += sum_g[k];
        }
        let gamma = self.gamma.value.data();
        let mut dx = grad;
        for (g, xh) in dx.data_mut().chunks_mut(c).zip(xhat.data().chunks(c)) {
            for k in 0..c {
                g[k] = gamma[k] * self.inv_std[k] / n * (n * g[k] - sum_g[k] - xh[k] * sum_gx[k]);
            }
        }
        Ok(dx)
    }

    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn params(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.running_mean", self.name), &mut self.running_mean),
            (format!("{}.running_var", self.name), &mut self.running_var),
        ]
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.running_mean", self.name), &self.running_mean),
            (format!("{}.running_var", self.name), &self.running_var),
        ]
    }
}
