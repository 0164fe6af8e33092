//! Pre-activation residual blocks.
//!
//! * `Up` (generator): `BN -> ReLU -> up2x -> conv3 -> BN -> ReLU -> conv3`,
//!   skip `up2x -> conv1`.
//! * `Down` (discriminator): `ReLU -> conv3 -> ReLU -> conv3 -> pool2x`,
//!   skip `conv1 -> pool2x`. The first block of a discriminator sees raw
//!   pixels and drops the leading ReLU, with skip `pool2x -> conv1`.
//! * `Flat` (discriminator): `ReLU -> conv3 -> ReLU -> conv3`, identity skip
//!   when the channel count is unchanged.

use rand::Rng;

use super::{AvgPool2x, BatchNorm, Conv2d, Layer, Mode, Module, Parameter, Relu, Stack, Upsample2x};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Flat,
}

#[derive(Clone)]
pub struct ResBlock {
    pub direction: Direction,
    pub main: Stack,
    pub skip: Stack,
}

impl ResBlock {
    pub fn up(name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        let main = vec![
            Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn1"), cin)),
            Layer::Relu(Relu::new()),
            Layer::Upsample(Upsample2x::new()),
            Layer::Conv(Conv2d::new(&format!("{name}.conv1"), 3, cin, cout, 1, false, rng)?),
            Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn2"), cout)),
            Layer::Relu(Relu::new()),
            Layer::Conv(Conv2d::new(&format!("{name}.conv2"), 3, cout, cout, 1, false, rng)?),
        ];
        let skip = vec![
            Layer::Upsample(Upsample2x::new()),
            Layer::Conv(Conv2d::new(&format!("{name}.skip"), 1, cin, cout, 1, false, rng)?),
        ];
        Ok(ResBlock {
            direction: Direction::Up,
            main: Stack::new(main),
            skip: Stack::new(skip),
        })
    }

    pub fn down(
        name: &str,
        cin: usize,
        cout: usize,
        first: bool,
        spectral: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut main = Vec::new();
        if !first {
            main.push(Layer::Relu(Relu::new()));
        }
        main.push(Layer::Conv(Conv2d::new(&format!("{name}.conv1"), 3, cin, cout, 1, spectral, rng)?));
        main.push(Layer::Relu(Relu::new()));
        main.push(Layer::Conv(Conv2d::new(&format!("{name}.conv2"), 3, cout, cout, 1, spectral, rng)?));
        main.push(Layer::AvgPool(AvgPool2x::new()));
        let shortcut = Layer::Conv(Conv2d::new(&format!("{name}.skip"), 1, cin, cout, 1, spectral, rng)?);
        let skip = if first {
            vec![Layer::AvgPool(AvgPool2x::new()), shortcut]
        } else {
            vec![shortcut, Layer::AvgPool(AvgPool2x::new())]
        };
        Ok(ResBlock {
            direction: Direction::Down,
            main: Stack::new(main),
            skip: Stack::new(skip),
        })
    }

    pub fn flat(name: &str, cin: usize, cout: usize, spectral: bool, rng: &mut impl Rng) -> Result<Self> {
        let main = vec![
            Layer::Relu(Relu::new()),
            Layer::Conv(Conv2d::new(&format!("{name}.conv1"), 3, cin, cout, 1, spectral, rng)?),
            Layer::Relu(Relu::new()),
            Layer::Conv(Conv2d::new(&format!("{name}.conv2"), 3, cout, cout, 1, spectral, rng)?),
        ];
        let skip = if cin == cout {
            Vec::new()
        } else {
            vec![Layer::Conv(Conv2d::new(&format!("{name}.skip"), 1, cin, cout, 1, spectral, rng)?)]
        };
        Ok(ResBlock {
            direction: Direction::Flat,
            main: Stack::new(main),
            skip: Stack::new(skip),
        })
    }
}

impl Module for ResBlock {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let residual = self.main.forward(x.clone(), mode)?;
        let shortcut = self.skip.forward(x, mode)?;
        let mut out = residual;
        out.add_assign(&shortcut)?;
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let mut dx = self.main.backward(grad.clone())?;
        let dskip = self.skip.backward(grad)?;
        dx.add_assign(&dskip)?;
        Ok(dx)
    }

    fn kind(&self) -> &'static str {
        match self.direction {
            Direction::Up => "resblock_up",
            Direction::Down => "resblock_down",
            Direction::Flat => "resblock",
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.main.params_mut();
        p.extend(self.skip.params_mut());
        p
    }

    fn params(&self) -> Vec<&Parameter> {
        let mut p = self.main.params();
        p.extend(self.skip.params());
        p
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut b = self.main.buffers_mut();
        b.extend(self.skip.buffers_mut());
        b
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut b = self.main.buffers();
        b.extend(self.skip.buffers());
        b
    }

    fn refresh_spectral_norm(&mut self) {
        self.main.refresh_spectral_norm();
        self.skip.refresh_spectral_norm();
    }
}
