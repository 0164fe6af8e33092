use super::{take_cache, Mode, Module};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Relu {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let y = x.map(|v| v.max(0.0));
        if mode == Mode::Train {
            self.input = Some(x);
        }
        Ok(y)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let x = take_cache(&mut self.input, "relu")?;
        grad.zip_with(&x, |g, v| if v > 0.0 { g } else { 0.0 })
    }

    fn kind(&self) -> &'static str {
        "relu"
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Default)]
pub struct Sigmoid {
    output: Option<Tensor>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Sigmoid {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let y = x.map(sigmoid);
        if mode == Mode::Train {
            self.output = Some(y.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let y = take_cache(&mut self.output, "sigmoid")?;
        grad.zip_with(&y, |g, s| g * s * (1.0 - s))
    }

    fn kind(&self) -> &'static str {
        "sigmoid"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        let mut r = Relu::new();
        let y = r.forward(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap(), Mode::Eval).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
