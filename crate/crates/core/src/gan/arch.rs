//! Generator and discriminator stacks for 28x28x1 and 32x32x3 images.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, Conv2d, Dense, GlobalSumPool, Layer, Relu, ResBlock, Reshape, Sigmoid, Stack,
};
use crate::wavelet::{Envelope, MotherWavelet};
use crate::wavelet_deconv::WaveletDeconvLayer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// 28x28 grayscale, 7x7 seed, two up-blocks.
    Mnist28,
    /// 32x32 RGB, 4x4 seed, three up-blocks.
    Rgb32,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mnist28" => Some(Variant::Mnist28),
            "rgb32" => Some(Variant::Rgb32),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mnist28 => "mnist28",
            Variant::Rgb32 => "rgb32",
        }
    }

    pub fn image_size(self) -> usize {
        match self {
            Variant::Mnist28 => 28,
            Variant::Rgb32 => 32,
        }
    }

    pub fn image_channels(self) -> usize {
        match self {
            Variant::Mnist28 => 1,
            Variant::Rgb32 => 3,
        }
    }

    fn seed_size(self) -> usize {
        match self {
            Variant::Mnist28 => 7,
            Variant::Rgb32 => 4,
        }
    }

    fn up_blocks(self) -> usize {
        match self {
            Variant::Mnist28 => 2,
            Variant::Rgb32 => 3,
        }
    }
}

/// How generated images are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenMode {
    /// The full stack, ending in the sigmoid.
    Direct,
    /// `clamp(x + alpha * W(g(z)))` around a real image `x`, where `g` is the
    /// stack without its sigmoid.
    Residual,
}

impl GenMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(GenMode::Direct),
            "residual" => Some(GenMode::Residual),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenMode::Direct => "direct",
            GenMode::Residual => "residual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub variant: Variant,
    /// Channel width of the generator blocks.
    pub base_width: usize,
    /// Channel width of the discriminator blocks.
    pub disc_width: usize,
    pub z_dim: usize,
    pub wavelet_enabled: bool,
    pub wavelet_channels: usize,
    pub wavelet_kernel: usize,
    pub wavelet_sigma: f64,
    pub wavelet_envelope: Envelope,
    /// Initial scales, one per wavelet channel.
    pub wavelet_scales: Vec<f64>,
    pub mode: GenMode,
    pub residual_alpha: f64,
    pub conditional: bool,
    pub n_classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            variant: Variant::Mnist28,
            base_width: 32,
            disc_width: 32,
            z_dim: 128,
            wavelet_enabled: true,
            wavelet_channels: 5,
            wavelet_kernel: 9,
            wavelet_sigma: 1.0,
            wavelet_envelope: Envelope::default(),
            wavelet_scales: WaveletDeconvLayer::dyadic_scales(5),
            mode: GenMode::Direct,
            residual_alpha: 0.1,
            conditional: false,
            n_classes: 10,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.base_width == 0 || self.disc_width == 0 {
            return bad("network widths must be positive".into());
        }
        if self.z_dim == 0 {
            return bad("z_dim must be positive".into());
        }
        if self.wavelet_enabled {
            if self.wavelet_channels == 0 {
                return bad("wavelet_channels must be at least 1".into());
            }
            if self.wavelet_scales.len() != self.wavelet_channels {
                return bad(format!(
                    "{} wavelet scales given for {} channels",
                    self.wavelet_scales.len(),
                    self.wavelet_channels
                ));
            }
            if self.wavelet_kernel < 3 || self.wavelet_kernel.is_multiple_of(2) {
                return bad(format!("wavelet_K must be odd and at least 3, got {}", self.wavelet_kernel));
            }
            if self.wavelet_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad("wavelet scales must be positive".into());
            }
            if self.wavelet_sigma.is_nan() || self.wavelet_sigma <= 0.0 {
                return bad("sigma must be positive".into());
            }
        }
        if self.conditional && self.n_classes < 2 {
            return bad("conditional models need at least 2 classes".into());
        }
        if !(self.residual_alpha.is_finite()) {
            return bad("residual_alpha must be finite".into());
        }
        Ok(())
    }

    /// Width of the generator input: noise plus the one-hot label when conditional.
    pub fn generator_input(&self) -> usize {
        self.z_dim + if self.conditional { self.n_classes } else { 0 }
    }

    /// Channels seen by the discriminator: image plus label maps when conditional.
    pub fn discriminator_input(&self) -> usize {
        self.variant.image_channels() + if self.conditional { self.n_classes } else { 0 }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.variant.image_size();
        [s, s, self.variant.image_channels()]
    }

    pub fn mother_wavelet(&self) -> Result<MotherWavelet> {
        MotherWavelet::with_envelope(self.wavelet_sigma, self.wavelet_envelope)
    }
}

/// `dense -> reshape -> up-blocks -> BN -> ReLU -> conv3 -> [wavelet] -> sigmoid`.
pub fn build_generator(cfg: &ArchConfig, rng: &mut impl Rng) -> Result<Stack> {
    cfg.validate()?;
    let w = cfg.base_width;
    let seed = cfg.variant.seed_size();
    let mut layers = vec![
        Layer::Dense(Dense::new("g.dense", cfg.generator_input(), seed * seed * w, false, rng)),
        Layer::Reshape(Reshape::new(&[seed, seed, w])),
    ];
    for i in 0..cfg.variant.up_blocks() {
        layers.push(Layer::ResBlock(Box::new(ResBlock::up(&format!("g.up{i}"), w, w, rng)?)));
    }
    layers.push(Layer::BatchNorm(BatchNorm::new("g.bn", w)));
    layers.push(Layer::Relu(Relu::new()));
    layers.push(Layer::Conv(Conv2d::new(
        "g.out",
        3,
        w,
        cfg.variant.image_channels(),
        1,
        false,
        rng,
    )?));
    if cfg.wavelet_enabled {
        layers.push(Layer::Wavelet(WaveletDeconvLayer::new(
            "g.wavelet",
            cfg.mother_wavelet()?,
            &cfg.wavelet_scales,
            cfg.wavelet_kernel,
        )?));
    }
    layers.push(Layer::Sigmoid(Sigmoid::new()));
    Ok(Stack::new(layers))
}

/// Spectrally normalized down-blocks (plus two flat blocks for 32x32),
/// `ReLU -> global sum pool -> dense -> 1`.
pub fn build_discriminator(cfg: &ArchConfig, rng: &mut impl Rng) -> Result<Stack> {
    cfg.validate()?;
    let w = cfg.disc_width;
    let mut layers = vec![
        Layer::ResBlock(Box::new(ResBlock::down("d.down0", cfg.discriminator_input(), w, true, true, rng)?)),
        Layer::ResBlock(Box::new(ResBlock::down("d.down1", w, w, false, true, rng)?)),
    ];
    if cfg.variant == Variant::Rgb32 {
        layers.push(Layer::ResBlock(Box::new(ResBlock::flat("d.flat0", w, w, true, rng)?)));
        layers.push(Layer::ResBlock(Box::new(ResBlock::flat("d.flat1", w, w, true, rng)?)));
    }
    layers.push(Layer::Relu(Relu::new()));
    layers.push(Layer::GlobalSumPool(GlobalSumPool::new()));
    layers.push(Layer::Dense(Dense::new("d.dense", w, 1, true, rng)));
    Ok(Stack::new(layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Module};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(variant: Variant) -> ArchConfig {
        ArchConfig {
            variant,
            base_width: 8,
            disc_width: 8,
            z_dim: 16,
            ..ArchConfig::default()
        }
    }

    #[test]
    fn generator_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small(Variant::Mnist28);
        let mut g = build_generator(&cfg, &mut rng).unwrap();
        let y = g.forward(Tensor::full(&[2, 16], 0.3), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 28, 28, 1]);
        assert!(y.data().iter().all(|v| *v > 0.0 && *v < 1.0));

        let cfg = small(Variant::Rgb32);
        let mut g = build_generator(&cfg, &mut rng).unwrap();
        let y = g.forward(Tensor::full(&[2, 16], 0.3), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 32, 32, 3]);
    }

    #[test]
    fn wavelet_sits_between_conv_and_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let with = build_generator(&small(Variant::Mnist28), &mut rng).unwrap().kinds();
        let cfg = ArchConfig {
            wavelet_enabled: false,
            ..small(Variant::Mnist28)
        };
        let without = build_generator(&cfg, &mut rng).unwrap().kinds();
        assert_eq!(with.len(), without.len() + 1);
        let n = with.len();
        assert_eq!(&with[n - 3..], &["conv2d", "wavelet_deconv", "sigmoid"]);
        let mut stripped = with.clone();
        stripped.remove(n - 2);
        assert_eq!(stripped, without);
    }

    #[test]
    fn discriminator_outputs_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = build_discriminator(&small(Variant::Mnist28), &mut rng).unwrap();
        let y = d.forward(Tensor::full(&[3, 28, 28, 1], 0.5), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[3, 1]);
        let d = build_discriminator(&small(Variant::Rgb32), &mut rng).unwrap();
        assert_eq!(d.kinds().iter().filter(|k| k.starts_with("resblock")).count(), 4);
    }

    #[test]
    fn validation() {
        let cfg = ArchConfig {
            wavelet_channels: 0,
            wavelet_scales: vec![],
            ..ArchConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Parameter(_))));
        let cfg = ArchConfig {
            wavelet_kernel: 8,
            ..ArchConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
