use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::arch::{build_discriminator, build_generator, ArchConfig, GenMode};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Layer, Mode, Module, Parameter, Stack};
use crate::tensor::Tensor;
use crate::wavelet_deconv::WaveletDeconvLayer;

/// RNG streams derived from the model seed.
pub(crate) const STREAM_GENERATOR_INIT: u64 = 1;
pub(crate) const STREAM_DISCRIMINATOR_INIT: u64 = 2;
pub(crate) const STREAM_TRAINING: u64 = 3;

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Residual-mode bookkeeping between forward and backward.
#[derive(Clone)]
struct ResidualCache {
    /// `alpha` where the clamp was inactive, 0 elsewhere.
    pass: Vec<f64>,
}

#[derive(Clone)]
pub struct GanModel {
    pub arch: ArchConfig,
    pub generator: Stack,
    pub discriminator: Stack,
    pub seed: u64,
    residual: Option<ResidualCache>,
}

impl GanModel {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        let generator = build_generator(&arch, &mut seeded_rng(seed, STREAM_GENERATOR_INIT))?;
        let discriminator = build_discriminator(&arch, &mut seeded_rng(seed, STREAM_DISCRIMINATOR_INIT))?;
        Ok(GanModel {
            arch,
            generator,
            discriminator,
            seed,
            residual: None,
        })
    }

    pub fn wavelet(&self) -> Option<&WaveletDeconvLayer> {
        self.generator.layers.iter().find_map(|l| match l {
            Layer::Wavelet(w) => Some(w),
            _ => None,
        })
    }

    pub fn wavelet_scales(&self) -> Vec<f64> {
        self.wavelet().map(|w| w.scale_values().to_vec()).unwrap_or_default()
    }

    /// Draws a `[n, z_dim]` standard normal noise batch.
    pub fn sample_noise(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..n * self.arch.z_dim).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::from_vec(&[n, self.arch.z_dim], data).expect("noise shape")
    }

    pub fn sample_labels(&self, n: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        self.arch
            .conditional
            .then(|| (0..n).map(|_| rng.random_range(0..self.arch.n_classes)).collect())
    }

    fn check_labels(&self, labels: Option<&[usize]>, n: usize) -> Result<()> {
        if !self.arch.conditional {
            return Ok(());
        }
        let labels = labels.ok_or_else(|| Error::Parameter("conditional model needs labels".into()))?;
        if labels.len() != n {
            return Err(shape_err!("{} labels for a batch of {n}", labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= self.arch.n_classes) {
            return Err(Error::Parameter(format!(
                "label {bad} out of range for {} classes",
                self.arch.n_classes
            )));
        }
        Ok(())
    }

    fn generator_input(&self, z: Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        let (n, d) = z.dims2()?;
        if d != self.arch.z_dim {
            return Err(shape_err!("noise has {d} features, expected {}", self.arch.z_dim));
        }
        self.check_labels(labels, n)?;
        match labels.filter(|_| self.arch.conditional) {
            None => Ok(z),
            Some(labels) => {
                let k = self.arch.n_classes;
                let mut data = Vec::with_capacity(n * (d + k));
                for (row, &label) in z.data().chunks(d).zip(labels) {
                    data.extend_from_slice(row);
                    data.extend((0..k).map(|c| if c == label { 1.0 } else { 0.0 }));
                }
                Tensor::from_vec(&[n, d + k], data)
            }
        }
    }

    /// Generated images for noise `z`. Residual mode needs `real`, the images the
    /// homogenized noise is added to.
    pub fn generate(
        &mut self,
        z: Tensor,
        labels: Option<&[usize]>,
        real: Option<&Tensor>,
        mode: Mode,
    ) -> Result<Tensor> {
        let input = self.generator_input(z, labels)?;
        match self.arch.mode {
            GenMode::Direct => self.generator.forward(input, mode),
            GenMode::Residual => {
                let real = real.ok_or_else(|| Error::Parameter("residual generation needs a real batch".into()))?;
                let last = self.generator.layers.len() - 1;
                let noise = self.generator.forward_range(0..last, input, mode)?;
                noise.ensure_shape(real.shape())?;
                let alpha = self.arch.residual_alpha;
                let mut pass = Vec::with_capacity(noise.len());
                let out: Vec<f64> = real
                    .data()
                    .iter()
                    .zip(noise.data())
                    .map(|(x, n)| {
                        let v = x + alpha * n;
                        pass.push(if (0.0..=1.0).contains(&v) { alpha } else { 0.0 });
                        v.clamp(0.0, 1.0)
                    })
                    .collect();
                if mode == Mode::Train {
                    self.residual = Some(ResidualCache { pass });
                }
                Tensor::from_vec(real.shape(), out)
            }
        }
    }

    /// Backpropagates the gradient of the generated images into the generator.
    pub fn generator_backward(&mut self, grad: Tensor) -> Result<()> {
        match self.arch.mode {
            GenMode::Direct => {
                self.generator.backward(grad)?;
            }
            GenMode::Residual => {
                let cache = self
                    .residual
                    .take()
                    .ok_or_else(|| Error::State("residual backward without a training forward pass".into()))?;
                if cache.pass.len() != grad.len() {
                    return Err(shape_err!("residual gradient has {} values, expected {}", grad.len(), cache.pass.len()));
                }
                let shape = grad.shape().to_vec();
                let g = grad.data().iter().zip(&cache.pass).map(|(g, p)| g * p).collect();
                let last = self.generator.layers.len() - 1;
                self.generator.backward_range(0..last, Tensor::from_vec(&shape, g)?)?;
            }
        }
        Ok(())
    }

    /// Appends one constant map per class to the images when conditional.
    pub fn discriminator_input(&self, images: Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        let (n, h, w, c) = images.dims4()?;
        self.check_labels(labels, n)?;
        let Some(labels) = labels.filter(|_| self.arch.conditional) else {
            return Ok(images);
        };
        let k = self.arch.n_classes;
        let mut data = Vec::with_capacity(n * h * w * (c + k));
        for (sample, &label) in images.data().chunks(h * w * c).zip(labels) {
            for px in sample.chunks(c) {
                data.extend_from_slice(px);
                data.extend((0..k).map(|j| if j == label { 1.0 } else { 0.0 }));
            }
        }
        Tensor::from_vec(&[n, h, w, c + k], data)
    }

    /// Discriminator-input gradient restricted to the image channels.
    pub fn strip_label_gradient(&self, grad: Tensor) -> Result<Tensor> {
        if !self.arch.conditional {
            return Ok(grad);
        }
        let (n, h, w, ck) = grad.dims4()?;
        let c = self.arch.variant.image_channels();
        let data = grad.data().chunks(ck).flat_map(|px| px[..c].iter().copied()).collect();
        Tensor::from_vec(&[n, h, w, c], data)
    }

    /// Evaluation-mode images from a seeded noise stream, generated in chunks.
    ///
    /// `real` supplies the base images in residual mode (cycled if shorter than `n`)
    /// and is ignored in direct mode.
    pub fn sample(&self, n: usize, seed: u64, real: Option<&Tensor>) -> Result<Tensor> {
        const CHUNK: usize = 64;
        let mut snapshot = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parts = Vec::new();
        let mut done = 0;
        while done < n {
            let m = CHUNK.min(n - done);
            let z = snapshot.sample_noise(m, &mut rng);
            let labels = snapshot.sample_labels(m, &mut rng);
            let base = match (snapshot.arch.mode, real) {
                (GenMode::Residual, Some(r)) => {
                    let idx: Vec<usize> = (done..done + m).map(|i| i % r.batch()).collect();
                    Some(r.gather_batch(&idx)?)
                }
                _ => None,
            };
            parts.push(snapshot.generate(z, labels.as_deref(), base.as_ref(), Mode::Eval)?);
            done += m;
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_batch(&refs)
    }

    pub fn generator_params(&self) -> Vec<&Parameter> {
        self.generator.params()
    }

    pub fn discriminator_params(&self) -> Vec<&Parameter> {
        self.discriminator.params()
    }

    pub fn parameter_count(&self) -> usize {
        self.generator_params()
            .iter()
            .chain(self.discriminator_params().iter())
            .map(|p| p.value.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::arch::Variant;

    fn tiny(mode: GenMode, conditional: bool) -> ArchConfig {
        ArchConfig {
            variant: Variant::Mnist28,
            base_width: 4,
            disc_width: 4,
            z_dim: 8,
            mode,
            conditional,
            n_classes: 3,
            ..ArchConfig::default()
        }
    }

    #[test]
    fn direct_output_in_unit_interval_and_reproducible() {
        let model = GanModel::new(tiny(GenMode::Direct, false), 5).unwrap();
        let a = model.sample(3, 11, None).unwrap();
        let b = model.sample(3, 11, None).unwrap();
        assert_eq!(a.shape(), &[3, 28, 28, 1]);
        assert!(a.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(a, b);
    }

    #[test]
    fn residual_needs_real_batch() {
        let mut model = GanModel::new(tiny(GenMode::Residual, false), 5).unwrap();
        let z = Tensor::zeros(&[2, 8]);
        assert!(matches!(model.generate(z, None, None, Mode::Eval), Err(Error::Parameter(_))));
    }

    #[test]
    fn residual_with_zero_noise_is_identity() {
        let mut model = GanModel::new(
            ArchConfig {
                residual_alpha: 0.0,
                ..tiny(GenMode::Residual, false)
            },
            5,
        )
        .unwrap();
        let real = Tensor::full(&[2, 28, 28, 1], 0.25);
        let out = model.generate(Tensor::zeros(&[2, 8]), None, Some(&real), Mode::Eval).unwrap();
        assert_eq!(out, real);
    }

    #[test]
    fn residual_stays_clamped() {
        let model = GanModel::new(
            ArchConfig {
                residual_alpha: 50.0,
                ..tiny(GenMode::Residual, false)
            },
            5,
        )
        .unwrap();
        let real = Tensor::full(&[2, 28, 28, 1], 0.5);
        let out = model.sample(4, 1, Some(&real)).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn conditional_inputs() {
        let model = GanModel::new(tiny(GenMode::Direct, true), 5).unwrap();
        let x = model
            .discriminator_input(Tensor::full(&[2, 28, 28, 1], 0.5), Some(&[0, 2]))
            .unwrap();
        assert_eq!(x.shape(), &[2, 28, 28, 4]);
        assert_eq!(&x.data()[..4], &[0.5, 1.0, 0.0, 0.0]);
        assert_eq!(&x.data()[784 * 4..784 * 4 + 4], &[0.5, 0.0, 0.0, 1.0]);
        let g = model.strip_label_gradient(x).unwrap();
        assert_eq!(g.shape(), &[2, 28, 28, 1]);
        assert!(model.discriminator_input(Tensor::zeros(&[1, 28, 28, 1]), Some(&[3])).is_err());
        assert!(model.discriminator_input(Tensor::zeros(&[1, 28, 28, 1]), None).is_err());
        let s = model.sample(2, 3, None).unwrap();
        assert_eq!(s.shape(), &[2, 28, 28, 1]);
    }
}
