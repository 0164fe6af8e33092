//! Alternating discriminator/generator updates.
//!
//! One [`Trainer::train_step`] runs `n_disc` discriminator updates, each on a
//! fresh real sub-batch and fresh noise, followed by a single generator update.
//! Spectral-norm estimates are refreshed once before every discriminator update
//! and held fixed during the generator update.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::loss::LossKind;
use super::model::{seeded_rng, GanModel, STREAM_TRAINING};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, Layer, Mode, Module, Stack};
use crate::tensor::Tensor;

/// How the wavelet scales are optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleUpdate {
    /// Same Adam optimizer and learning rate as every other generator parameter.
    Adam,
    /// Plain gradient descent with `scale_lr`, clamped at the minimum scale.
    Sgd,
}

impl ScaleUpdate {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(ScaleUpdate::Adam),
            "sgd" => Some(ScaleUpdate::Sgd),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScaleUpdate::Adam => "adam",
            ScaleUpdate::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub n_disc: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub scale_update: ScaleUpdate,
    pub scale_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            n_disc: 5,
            lr: 2e-4,
            adam: AdamConfig::gan(),
            loss: LossKind::Hinge,
            scale_update: ScaleUpdate::Adam,
            scale_lr: 2e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Parameter("batch must be at least 2 for batch norm".into()));
        }
        if self.n_disc == 0 {
            return Err(Error::Parameter("n_disc must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.scale_lr > 0.0) {
            return Err(Error::Parameter("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Mean discriminator loss over the sub-updates of this step.
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_grad_norm: f64,
    pub g_grad_norm: f64,
    pub scales: Vec<f64>,
    pub proxy_fid: Option<f64>,
    pub wall_ms: f64,
}

/// Instrumentation of what the optimizer actually did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProtocolCounters {
    pub d_updates: u64,
    pub g_updates: u64,
    pub real_samples: u64,
    pub noise_samples: u64,
    /// Real batch size of the most recent discriminator update.
    pub last_real_batch: usize,
    /// Noise rows and width of the most recent generator input.
    pub last_noise_shape: (usize, usize),
    pub last_lr: f64,
}

pub trait Callback {
    /// Runs after every completed step; may fill in fields such as `proxy_fid`.
    fn after_step(&mut self, trainer: &Trainer, metrics: &mut StepMetrics) -> Result<()>;
}

pub struct Trainer {
    pub model: GanModel,
    pub cfg: TrainConfig,
    /// Completed steps.
    pub step: u64,
    pub counters: ProtocolCounters,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) order: Vec<usize>,
    pub(crate) cursor: usize,
}

impl Trainer {
    /// A fresh trainer whose noise and shuffling stream derives from the model seed.
    pub fn new(model: GanModel, cfg: TrainConfig, dataset_len: usize) -> Result<Self> {
        cfg.validate()?;
        if dataset_len < cfg.batch {
            return Err(Error::Parameter(format!(
                "dataset of {dataset_len} images is smaller than the batch of {}",
                cfg.batch
            )));
        }
        let mut rng = seeded_rng(model.seed, STREAM_TRAINING);
        let mut order: Vec<usize> = (0..dataset_len).collect();
        order.shuffle(&mut rng);
        Ok(Trainer {
            model,
            cfg,
            step: 0,
            counters: ProtocolCounters::default(),
            rng,
            order,
            cursor: 0,
        })
    }

    fn next_indices(&mut self) -> Vec<usize> {
        let n = self.cfg.batch;
        if self.cursor + n > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        idx
    }

    fn real_batch(&mut self, data: &Dataset) -> Result<(Tensor, Option<Vec<usize>>)> {
        if data.len() != self.order.len() {
            return Err(Error::State(format!(
                "trainer was set up for {} images, dataset has {}",
                self.order.len(),
                data.len()
            )));
        }
        let idx = self.next_indices();
        let images = data.images.gather_batch(&idx)?;
        let labels = if self.model.arch.conditional {
            let labels = data
                .labels
                .as_ref()
                .ok_or_else(|| Error::Parameter("conditional training needs a labelled dataset".into()))?;
            Some(idx.iter().map(|&i| labels[i]).collect())
        } else {
            None
        };
        Ok((images, labels))
    }

    fn fake_batch(&mut self, real: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        let n = self.cfg.batch;
        let z = self.model.sample_noise(n, &mut self.rng);
        let labels = self.model.sample_labels(n, &mut self.rng);
        self.counters.noise_samples += n as u64;
        self.counters.last_noise_shape = (z.shape()[0], z.shape()[1]);
        let fake = self.model.generate(z, labels.as_deref(), Some(real), Mode::Train)?;
        Ok((fake, labels))
    }

    fn diagnostic(&self, phase: &str, loss: f64, logits: &Tensor) -> Error {
        let finite = logits.data().iter().filter(|v| v.is_finite()).count();
        Error::Numeric(format!(
            "non-finite {phase} loss {loss} at step {}: {finite}/{} finite logits, wavelet scales {:?}, \
             d grad norm {:.6e}, g grad norm {:.6e}",
            self.step + 1,
            logits.len(),
            self.model.wavelet_scales(),
            self.model.discriminator.grad_norm(),
            self.model.generator.grad_norm()
        ))
    }

    fn discriminator_update(&mut self, data: &Dataset) -> Result<(f64, f64)> {
        let (real, real_labels) = self.real_batch(data)?;
        let (fake, fake_labels) = self.fake_batch(&real)?;
        let n = real.batch();
        let real_in = self.model.discriminator_input(real, real_labels.as_deref())?;
        let fake_in = self.model.discriminator_input(fake, fake_labels.as_deref())?;
        let both = Tensor::concat_batch(&[&real_in, &fake_in])?;

        let d = &mut self.model.discriminator;
        d.refresh_spectral_norm();
        let logits = d.forward(both, Mode::Train)?;
        let (real_logits, fake_logits) = logits.data().split_at(n);
        let (loss, dr, df) = match self.cfg.loss.discriminator(real_logits, fake_logits) {
            Ok(v) if v.0.is_finite() => v,
            Ok(v) => return Err(self.diagnostic("discriminator", v.0, &logits)),
            Err(_) => return Err(self.diagnostic("discriminator", f64::NAN, &logits)),
        };
        let d = &mut self.model.discriminator;
        d.zero_grad();
        let grad = Tensor::from_vec(&[2 * n, 1], [dr, df].concat())?;
        d.backward(grad)?;
        let norm = d.grad_norm();
        adam_stack(d, &self.cfg.adam, self.cfg.lr);
        d.after_update();

        self.counters.d_updates += 1;
        self.counters.real_samples += n as u64;
        self.counters.last_real_batch = n;
        self.counters.last_lr = self.cfg.lr;
        Ok((loss, norm))
    }

    fn generator_update(&mut self, data: &Dataset) -> Result<(f64, f64)> {
        // Residual mode perturbs real images; direct mode only needs the batch shape.
        let base = match self.model.arch.mode {
            super::arch::GenMode::Residual => Some(self.real_batch(data)?.0),
            super::arch::GenMode::Direct => None,
        };
        let n = self.cfg.batch;
        let z = self.model.sample_noise(n, &mut self.rng);
        let labels = self.model.sample_labels(n, &mut self.rng);
        self.counters.noise_samples += n as u64;
        self.counters.last_noise_shape = (n, self.model.arch.z_dim);
        let fake = self.model.generate(z, labels.as_deref(), base.as_ref(), Mode::Train)?;
        let fake_in = self.model.discriminator_input(fake, labels.as_deref())?;
        let logits = self.model.discriminator.forward(fake_in, Mode::Train)?;
        let (loss, dlogits) = match self.cfg.loss.generator(logits.data()) {
            Ok(v) if v.0.is_finite() => v,
            Ok(v) => return Err(self.diagnostic("generator", v.0, &logits)),
            Err(_) => return Err(self.diagnostic("generator", f64::NAN, &logits)),
        };
        self.model.generator.zero_grad();
        let dx = self.model.discriminator.backward(Tensor::from_vec(&[n, 1], dlogits)?)?;
        let dx = self.model.strip_label_gradient(dx)?;
        self.model.generator_backward(dx)?;
        let norm = self.model.generator.grad_norm();

        let (adam, lr) = (self.cfg.adam, self.cfg.lr);
        for layer in &mut self.model.generator.layers {
            match layer {
                Layer::Wavelet(w) if self.cfg.scale_update == ScaleUpdate::Sgd => {
                    w.apply_scale_update(self.cfg.scale_lr)?;
                }
                other => {
                    for p in other.params_mut() {
                        adam_step(p, &adam, lr);
                    }
                }
            }
        }
        self.model.generator.after_update();
        self.model.generator.zero_grad();
        // The generator pass leaves gradients in the discriminator; they must not leak
        // into its next update.
        self.model.discriminator.zero_grad();
        self.counters.g_updates += 1;
        self.counters.last_lr = lr;
        Ok((loss, norm))
    }

    pub fn train_step(&mut self, data: &Dataset) -> Result<StepMetrics> {
        let start = Instant::now();
        let mut d_loss = 0.0;
        let mut d_norm = 0.0;
        for _ in 0..self.cfg.n_disc {
            let (loss, norm) = self.discriminator_update(data)?;
            d_loss += loss;
            d_norm = norm;
        }
        let (g_loss, g_norm) = self.generator_update(data)?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            d_loss: d_loss / self.cfg.n_disc as f64,
            g_loss,
            d_grad_norm: d_norm,
            g_grad_norm: g_norm,
            scales: self.model.wavelet_scales(),
            proxy_fid: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

fn adam_stack(stack: &mut Stack, cfg: &AdamConfig, lr: f64) {
    for p in stack.params_mut() {
        adam_step(p, cfg, lr);
    }
}

/// Trains until `trainer.step == until`, running the callbacks after every step.
///
/// Returns the metrics of the steps taken by this call.
pub fn train(
    trainer: &mut Trainer,
    data: &Dataset,
    until: u64,
    callbacks: &mut [&mut dyn Callback],
) -> Result<Vec<StepMetrics>> {
    let mut history = Vec::new();
    while trainer.step < until {
        let mut metrics = trainer.train_step(data)?;
        for cb in callbacks.iter_mut() {
            cb.after_step(trainer, &mut metrics)?;
        }
        history.push(metrics);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_shapes;
    use crate::gan::arch::{ArchConfig, GenMode, Variant};

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            variant: Variant::Mnist28,
            base_width: 4,
            disc_width: 4,
            z_dim: 8,
            ..ArchConfig::default()
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch: 4,
            n_disc: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_leaves_model_untouched() {
        let data = synthetic_shapes(16, 28, 1, 3).unwrap();
        let model = GanModel::new(tiny_arch(), 1).unwrap();
        let before = model.generator.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        let mut trainer = Trainer::new(model, tiny_cfg(), data.len()).unwrap();
        let history = train(&mut trainer, &data, 0, &mut []).unwrap();
        assert!(history.is_empty());
        let after = trainer.model.generator.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(before, after);
    }

    #[test]
    fn step_counts_and_changes_parameters() {
        let data = synthetic_shapes(16, 28, 1, 3).unwrap();
        let model = GanModel::new(tiny_arch(), 1).unwrap();
        let g0: Vec<Tensor> = model.generator.params().iter().map(|p| p.value.clone()).collect();
        let d0: Vec<Tensor> = model.discriminator.params().iter().map(|p| p.value.clone()).collect();
        let mut trainer = Trainer::new(model, tiny_cfg(), data.len()).unwrap();
        let m = trainer.train_step(&data).unwrap();
        assert_eq!(trainer.counters.d_updates, 2);
        assert_eq!(trainer.counters.g_updates, 1);
        assert!(m.d_loss.is_finite() && m.g_loss.is_finite());
        assert_eq!(m.scales.len(), 5);
        assert_ne!(m.scales, vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        for (p, v) in trainer.model.generator.params().iter().zip(&g0) {
            assert_ne!(&p.value, v, "{}", p.name);
        }
        for (p, v) in trainer.model.discriminator.params().iter().zip(&d0) {
            assert_ne!(&p.value, v, "{}", p.name);
        }
    }

    #[test]
    fn baseline_has_no_scales() {
        let data = synthetic_shapes(8, 28, 1, 3).unwrap();
        let arch = ArchConfig {
            wavelet_enabled: false,
            ..tiny_arch()
        };
        let mut trainer = Trainer::new(GanModel::new(arch, 1).unwrap(), tiny_cfg(), data.len()).unwrap();
        assert!(trainer.train_step(&data).unwrap().scales.is_empty());
    }

    #[test]
    fn residual_and_conditional_steps_run() {
        let data = synthetic_shapes(8, 28, 1, 3).unwrap();
        let arch = ArchConfig {
            mode: GenMode::Residual,
            conditional: true,
            n_classes: 3,
            ..tiny_arch()
        };
        let cfg = TrainConfig {
            scale_update: ScaleUpdate::Sgd,
            ..tiny_cfg()
        };
        let mut trainer = Trainer::new(GanModel::new(arch, 2).unwrap(), cfg, data.len()).unwrap();
        let m = trainer.train_step(&data).unwrap();
        assert!(m.g_loss.is_finite());
    }

    #[test]
    fn rejects_tiny_dataset() {
        let model = GanModel::new(tiny_arch(), 1).unwrap();
        assert!(Trainer::new(model, tiny_cfg(), 3).is_err());
    }
}
