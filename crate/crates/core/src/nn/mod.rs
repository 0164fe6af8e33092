//! Explicit forward/backward layers.
//!
//! There is no graph capture: a [`Stack`] runs its layers forward and feeds the
//! upstream gradient back through them in reverse order. Every layer caches
//! what it needs from the most recent training-mode forward pass.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod dense;
mod init;
mod pool;
mod resblock;
mod spectral;

pub use activation::{sigmoid, Relu, Sigmoid};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::BatchNorm;
pub use conv::Conv2d;
pub use dense::Dense;
pub use init::he_normal;
pub use pool::{AvgPool2x, GlobalSumPool, Reshape, Upsample2x};
pub use resblock::{Direction, ResBlock};
pub use spectral::{spectral_norm_apply, SpectralNormState};

use crate::error::Result;
use crate::tensor::Tensor;
use crate::wavelet_deconv::WaveletDeconvLayer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches for backward, running-stat updates.
    Train,
    /// Running statistics, no caching.
    Eval,
}

/// A named learnable tensor with its gradient and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam: AdamState,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let adam = AdamState::new(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            adam,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub trait Module {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor>;

    /// Consumes the gradient of the loss with respect to this module's output and
    /// returns the gradient with respect to its input, accumulating parameter
    /// gradients along the way.
    fn backward(&mut self, grad: Tensor) -> Result<Tensor>;

    fn kind(&self) -> &'static str;

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        Vec::new()
    }

    fn params(&self) -> Vec<&Parameter> {
        Vec::new()
    }

    /// Non-learnable persistent state (running statistics, power-iteration vectors).
    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Vec::new()
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        Vec::new()
    }

    /// One power-iteration update for every spectrally normalized weight.
    fn refresh_spectral_norm(&mut self) {}

    /// Called after an optimizer step has modified parameter values.
    fn after_update(&mut self) {}
}

#[derive(Clone)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    Sigmoid(Sigmoid),
    Upsample(Upsample2x),
    AvgPool(AvgPool2x),
    GlobalSumPool(GlobalSumPool),
    Reshape(Reshape),
    ResBlock(Box<ResBlock>),
    Wavelet(WaveletDeconvLayer),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::Dense($l) => $body,
            Layer::Conv($l) => $body,
            Layer::BatchNorm($l) => $body,
            Layer::Relu($l) => $body,
            Layer::Sigmoid($l) => $body,
            Layer::Upsample($l) => $body,
            Layer::AvgPool($l) => $body,
            Layer::GlobalSumPool($l) => $body,
            Layer::Reshape($l) => $body,
            Layer::ResBlock($l) => $body,
            Layer::Wavelet($l) => $body,
        }
    };
}

impl Module for Layer {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        dispatch!(self, l => l.forward(x, mode))
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.backward(grad))
    }

    fn kind(&self) -> &'static str {
        dispatch!(self, l => l.kind())
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        dispatch!(self, l => l.params_mut())
    }

    fn params(&self) -> Vec<&Parameter> {
        dispatch!(self, l => l.params())
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        dispatch!(self, l => l.buffers_mut())
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        dispatch!(self, l => l.buffers())
    }

    fn refresh_spectral_norm(&mut self) {
        dispatch!(self, l => l.refresh_spectral_norm())
    }

    fn after_update(&mut self) {
        dispatch!(self, l => l.after_update())
    }
}

/// An ordered list of layers run front to back.
#[derive(Clone, Default)]
pub struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Stack { layers }
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(|l| l.kind()).collect()
    }

    /// Forward through `layers[range]`.
    pub fn forward_range(
        &mut self,
        range: std::ops::Range<usize>,
        mut x: Tensor,
        mode: Mode,
    ) -> Result<Tensor> {
        for layer in &mut self.layers[range] {
            x = layer.forward(x, mode)?;
        }
        Ok(x)
    }

    pub fn backward_range(
        &mut self,
        range: std::ops::Range<usize>,
        mut grad: Tensor,
    ) -> Result<Tensor> {
        for layer in self.layers[range].iter_mut().rev() {
            grad = layer.backward(grad)?;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params()
            .iter()
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

impl Module for Stack {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let n = self.layers.len();
        self.forward_range(0..n, x, mode)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        self.backward_range(0..n, grad)
    }

    fn kind(&self) -> &'static str {
        "stack"
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn refresh_spectral_norm(&mut self) {
        self.layers.iter_mut().for_each(|l| l.refresh_spectral_norm());
    }

    fn after_update(&mut self) {
        self.layers.iter_mut().for_each(|l| l.after_update());
    }
}

pub(crate) fn take_cache(cache: &mut Option<Tensor>, what: &str) -> Result<Tensor> {
    cache
        .take()
        .ok_or_else(|| crate::Error::State(format!("{what}: backward called without a training forward pass")))
}
