use rand::Rng;

use super::{he_normal, take_cache, Mode, Module, Parameter, SpectralNormState};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Tensor};

/// Fully connected layer `y = x W + b`, `W: [in, out]`.
///
/// With spectral normalization the forward pass uses `W / sigma`, where `sigma`
/// is the estimate from the last [`refresh_spectral_norm`](Module::refresh_spectral_norm)
/// and is treated as a constant by the backward pass.
#[derive(Clone)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
    pub sn: Option<SpectralNormState>,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize, spectral: bool, rng: &mut impl Rng) -> Self {
        let weight = Parameter::new(format!("{name}.w"), he_normal(&[inputs, outputs], inputs, rng));
        let bias = Parameter::new(format!("{name}.b"), Tensor::zeros(&[outputs]));
        let sn = spectral.then(|| {
            let mut st = SpectralNormState::new(outputs, rng);
            st.refresh(&weight.value);
            st
        });
        Dense {
            weight,
            bias,
            sn,
            input: None,
        }
    }

    pub fn from_parts(weight: Parameter, bias: Parameter) -> Result<Self> {
        let (_, outputs) = weight.value.dims2()?;
        bias.value.ensure_shape(&[outputs])?;
        Ok(Dense {
            weight,
            bias,
            sn: None,
            input: None,
        })
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1])
    }

    fn inv_sigma(&self) -> f64 {
        self.sn.as_ref().map_or(1.0, |s| 1.0 / s.sigma())
    }
}

impl Module for Dense {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let (inputs, outputs) = self.dims();
        let (batch, features) = x.dims2()?;
        if features != inputs {
            return Err(shape_err!("dense expects {inputs} input features, got {features}"));
        }
        let mut y = vec![0.0; batch * outputs];
        gemm(
            batch,
            inputs,
            outputs,
            x.data(),
            (inputs as isize, 1),
            self.weight.value.data(),
            (outputs as isize, 1),
            0.0,
            &mut y,
        );
        let scale = self.inv_sigma();
        let b = self.bias.value.data();
        for row in y.chunks_mut(outputs) {
            for (v, bias) in row.iter_mut().zip(b) {
                *v = *v * scale + bias;
            }
        }
        if mode == Mode::Train {
            self.input = Some(x);
        }
        Tensor::from_vec(&[batch, outputs], y)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let x = take_cache(&mut self.input, "dense")?;
        let (inputs, outputs) = self.dims();
        let batch = x.batch();
        grad.ensure_shape(&[batch, outputs])?;
        let scale = self.inv_sigma();
        // dW += x^T g / sigma
        let mut dw = vec![0.0; inputs * outputs];
        gemm(
            inputs,
            batch,
            outputs,
            x.data(),
            (1, inputs as isize),
            grad.data(),
            (outputs as isize, 1),
            0.0,
            &mut dw,
        );
        accumulate_scaled(&mut self.weight.grad, &dw, scale);
        for row in grad.data().chunks(outputs) {
            for (gb, g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *gb += g;
            }
        }
        // dx = g W^T / sigma
        let mut dx = vec![0.0; batch * inputs];
        gemm(
            batch,
            outputs,
            inputs,
            grad.data(),
            (outputs as isize, 1),
            self.weight.value.data(),
            (1, outputs as isize),
            0.0,
            &mut dx,
        );
        if scale != 1.0 {
            dx.iter_mut().for_each(|v| *v *= scale);
        }
        Tensor::from_vec(&[batch, inputs], dx)
    }

    fn kind(&self) -> &'static str {
        "dense"
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match &mut self.sn {
            Some(sn) => vec![
                (format!("{}.sn_u", self.weight.name), &mut sn.u),
                (format!("{}.sn_sigma", self.weight.name), &mut sn.sigma),
            ],
            None => Vec::new(),
        }
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        match &self.sn {
            Some(sn) => vec![
                (format!("{}.sn_u", self.weight.name), &sn.u),
                (format!("{}.sn_sigma", self.weight.name), &sn.sigma),
            ],
            None => Vec::new(),
        }
    }

    fn refresh_spectral_norm(&mut self) {
        if let Some(sn) = &mut self.sn {
            sn.refresh(&self.weight.value);
        }
    }
}

pub(super) fn accumulate_scaled(grad: &mut Tensor, delta: &[f64], scale: f64) {
    for (g, d) in grad.data_mut().iter_mut().zip(delta) {
        *g += d * scale;
    }
}
