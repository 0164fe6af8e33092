use super::{Mode, Module};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block.
#[derive(Clone, Default)]
pub struct Upsample2x {
    input_shape: Option<Vec<usize>>,
}

impl Upsample2x {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Upsample2x {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = x.data();
        let mut out = vec![0.0; b * oh * ow * c];
        for n in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    let s = ((n * h + y / 2) * w + xx / 2) * c;
                    let d = ((n * oh + y) * ow + xx) * c;
                    out[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        if mode == Mode::Train {
            self.input_shape = Some(x.shape().to_vec());
        }
        Tensor::from_vec(&[b, oh, ow, c], out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::State("upsample2x: backward without forward".into()))?;
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = (2 * h, 2 * w);
        grad.ensure_shape(&[b, oh, ow, c])?;
        let g = grad.data();
        let mut dx = vec![0.0; b * h * w * c];
        for n in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    let s = ((n * oh + y) * ow + xx) * c;
                    let d = ((n * h + y / 2) * w + xx / 2) * c;
                    for k in 0..c {
                        dx[d + k] += g[s + k];
                    }
                }
            }
        }
        Tensor::from_vec(&shape, dx)
    }

    fn kind(&self) -> &'static str {
        "upsample2x"
    }
}

/// 2x2 mean pooling with stride 2. Height and width must be even.
#[derive(Clone, Default)]
pub struct AvgPool2x {
    input_shape: Option<Vec<usize>>,
}

impl AvgPool2x {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for AvgPool2x {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("avgpool2x needs even height and width, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = x.data();
        let mut out = vec![0.0; b * oh * ow * c];
        for n in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    let d = ((n * oh + y) * ow + xx) * c;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let s = ((n * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                        for k in 0..c {
                            out[d + k] += src[s + k];
                        }
                    }
                    for v in &mut out[d..d + c] {
                        *v *= 0.25;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.input_shape = Some(x.shape().to_vec());
        }
        Tensor::from_vec(&[b, oh, ow, c], out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::State("avgpool2x: backward without forward".into()))?;
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        grad.ensure_shape(&[b, oh, ow, c])?;
        let g = grad.data();
        let mut dx = vec![0.0; b * h * w * c];
        for n in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let s = ((n * oh + y / 2) * ow + xx / 2) * c;
                    let d = ((n * h + y) * w + xx) * c;
                    for k in 0..c {
                        dx[d + k] = 0.25 * g[s + k];
                    }
                }
            }
        }
        Tensor::from_vec(&shape, dx)
    }

    fn kind(&self) -> &'static str {
        "avgpool2x"
    }
}

/// Sums over height and width: `[B, H, W, C] -> [B, C]`.
#[derive(Clone, Default)]
pub struct GlobalSumPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalSumPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for GlobalSumPool {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        let mut out = vec![0.0; b * c];
        for (n, sample) in x.data().chunks(h * w * c).enumerate() {
            for px in sample.chunks(c) {
                for k in 0..c {
                    out[n * c + k] += px[k];
                }
            }
        }
        if mode == Mode::Train {
            self.input_shape = Some(x.shape().to_vec());
        }
        Tensor::from_vec(&[b, c], out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::State("global_sum_pool: backward without forward".into()))?;
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        grad.ensure_shape(&[b, c])?;
        let g = grad.data();
        let mut dx = Vec::with_capacity(b * h * w * c);
        for n in 0..b {
            for _ in 0..h * w {
                dx.extend_from_slice(&g[n * c..(n + 1) * c]);
            }
        }
        Tensor::from_vec(&shape, dx)
    }

    fn kind(&self) -> &'static str {
        "global_sum_pool"
    }
}

/// Reinterprets each sample with a new per-sample shape.
#[derive(Clone)]
pub struct Reshape {
    per_sample: Vec<usize>,
    input_shape: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(per_sample: &[usize]) -> Self {
        Reshape {
            per_sample: per_sample.to_vec(),
            input_shape: None,
        }
    }
}

impl Module for Reshape {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let mut shape = vec![x.batch()];
        shape.extend_from_slice(&self.per_sample);
        if mode == Mode::Train {
            self.input_shape = Some(x.shape().to_vec());
        }
        x.reshape(&shape)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::State("reshape: backward without forward".into()))?;
        grad.reshape(&shape)
    }

    fn kind(&self) -> &'static str {
        "reshape"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_replicates() {
        let mut up = Upsample2x::new();
        let y = up.forward(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap(), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[1.0; 4]);
        let y = up.forward(Tensor::zeros(&[2, 14, 14, 3]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 28, 28, 3]);
    }

    #[test]
    fn avgpool_means_quad() {
        let mut p = AvgPool2x::new();
        let y = p
            .forward(Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap(), Mode::Eval)
            .unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert!(matches!(p.forward(Tensor::zeros(&[1, 3, 2, 1]), Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn global_sum_counts() {
        let mut p = GlobalSumPool::new();
        let y = p.forward(Tensor::full(&[1, 2, 2, 3], 1.0), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        assert_eq!(y.data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut p = Upsample2x::new();
        assert!(matches!(p.backward(Tensor::zeros(&[1, 2, 2, 1])), Err(Error::State(_))));
    }
}
