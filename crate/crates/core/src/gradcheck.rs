//! Central finite-difference checks for every differentiable op.
//!
//! Each module check contracts the output with a fixed random upstream tensor
//! `r`, so the scalar probe is `L = sum(r * f(x))`, and compares the analytic
//! input and parameter gradients against `(L(x + h) - L(x - h)) / 2h` on every
//! entry. Inputs are kept at 64 elements or fewer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::gan::{ArchConfig, GanModel, LossKind};
use crate::nn::{
    AvgPool2x, BatchNorm, Conv2d, Dense, GlobalSumPool, Layer, Mode, Module, Relu, Reshape, ResBlock,
    Sigmoid, Upsample2x,
};
use crate::tensor::Tensor;
use crate::wavelet::MotherWavelet;
use crate::wavelet_deconv::WaveletDeconvLayer;

pub const TOLERANCE: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;
/// Tolerance for the whole-generator scale gradient, where errors compound over many layers.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-5;

/// Outcome of one op's check.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Error normalized so that `< TOLERANCE` means `|a - n| <= max(ABS_FLOOR, TOLERANCE * max(|a|, |n|))`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR / TOLERANCE);
    (analytic - numeric).abs() / denom
}

fn normal_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(shape, data).expect("shape and data agree")
}

/// Normal samples pushed at least `gap` away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut impl Rng) -> Tensor {
    normal_tensor(shape, rng).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

fn probe(module: &mut dyn Module, x: &Tensor, r: &Tensor) -> Result<f64> {
    Ok(module.forward(x.clone(), Mode::Train)?.dot(r))
}

/// Checks input and parameter gradients of `module` at `x`.
pub fn check_module(op: &str, module: &mut dyn Module, x: Tensor, rng: &mut impl Rng) -> Result<OpCheck> {
    let y = module.forward(x.clone(), Mode::Train)?;
    let r = normal_tensor(y.shape(), rng);
    for p in module.params_mut() {
        p.zero_grad();
    }
    let dx = module.backward(r.clone())?;
    let param_grads: Vec<Tensor> = module.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let v = x.data()[i];
        xp.data_mut()[i] = v + STEP;
        let up = probe(module, &xp, &r)?;
        xp.data_mut()[i] = v - STEP;
        let down = probe(module, &xp, &r)?;
        xp.data_mut()[i] = v;
        worst = worst.max(rel_error(dx.data()[i], (up - down) / (2.0 * STEP)));
        entries += 1;
    }
    for (pi, grad) in param_grads.iter().enumerate() {
        for i in 0..grad.len() {
            let v = module.params()[pi].value.data()[i];
            let eval = |value: f64, module: &mut dyn Module| -> Result<f64> {
                module.params_mut()[pi].value.data_mut()[i] = value;
                module.after_update();
                probe(module, &x, &r)
            };
            let up = eval(v + STEP, module)?;
            let down = eval(v - STEP, module)?;
            module.params_mut()[pi].value.data_mut()[i] = v;
            module.after_update();
            worst = worst.max(rel_error(grad.data()[i], (up - down) / (2.0 * STEP)));
            entries += 1;
        }
    }
    Ok(OpCheck {
        op: op.to_string(),
        max_rel_error: worst,
        entries,
        tolerance: TOLERANCE,
    })
}

/// Checks both halves of a loss: the discriminator loss in its real and fake
/// logits, and the generator loss in its fake logits.
pub fn check_loss(kind: LossKind, rng: &mut impl Rng) -> Result<OpCheck> {
    // Hinge kinks sit at +-1; keep logits clear of them.
    let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..8)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                if (v.abs() - 1.0).abs() < 0.05 { v * 1.2 } else { v }
            })
            .collect()
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    let real = sample(&mut local);
    let fake = sample(&mut local);
    let (_, dr, df) = kind.discriminator(&real, &fake)?;
    let (_, dg) = kind.generator(&fake)?;
    let mut worst: f64 = 0.0;
    let fd = |f: &dyn Fn(&[f64]) -> Result<f64>, at: &[f64], i: usize| -> Result<f64> {
        let mut p = at.to_vec();
        p[i] = at[i] + STEP;
        let up = f(&p)?;
        p[i] = at[i] - STEP;
        let down = f(&p)?;
        Ok((up - down) / (2.0 * STEP))
    };
    for (i, &a) in dr.iter().enumerate() {
        let n = fd(&|r| Ok(kind.discriminator(r, &fake)?.0), &real, i)?;
        worst = worst.max(rel_error(a, n));
    }
    for i in 0..fake.len() {
        let n = fd(&|f| Ok(kind.discriminator(&real, f)?.0), &fake, i)?;
        worst = worst.max(rel_error(df[i], n));
        let n = fd(&|f| Ok(kind.generator(f)?.0), &fake, i)?;
        worst = worst.max(rel_error(dg[i], n));
    }
    Ok(OpCheck {
        op: format!("{}_loss", kind.as_str()),
        max_rel_error: worst,
        entries: real.len() + 2 * fake.len(),
        tolerance: TOLERANCE,
    })
}

/// Runs every op check from one seed.
pub fn run_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Vec::new();

    let mut m = Dense::new("dense", 5, 4, false, rng);
    m.bias.value = normal_tensor(&[4], rng);
    let x = normal_tensor(&[3, 5], rng);
    out.push(check_module("dense", &mut m, x, rng)?);

    let mut m = Dense::new("dense_sn", 5, 4, true, rng);
    let x = normal_tensor(&[3, 5], rng);
    out.push(check_module("dense_spectral_norm", &mut m, x, rng)?);

    let mut m = Conv2d::new("conv", 3, 2, 3, 1, false, rng)?;
    m.bias.value = normal_tensor(&[3], rng);
    let x = normal_tensor(&[2, 4, 4, 2], rng);
    out.push(check_module("conv3x3_stride1", &mut m, x, rng)?);

    let mut m = Conv2d::new("conv_wide", 3, 8, 2, 1, false, rng)?;
    m.bias.value = normal_tensor(&[2], rng);
    let x = normal_tensor(&[2, 2, 3, 8], rng);
    out.push(check_module("conv3x3_stride1_wide", &mut m, x, rng)?);

    let mut m = Conv2d::new("conv_s2", 3, 2, 3, 2, false, rng)?;
    let x = normal_tensor(&[2, 4, 4, 2], rng);
    out.push(check_module("conv3x3_stride2", &mut m, x, rng)?);

    let mut m = Conv2d::new("conv_1x1", 1, 3, 2, 1, false, rng)?;
    let x = normal_tensor(&[2, 3, 3, 3], rng);
    out.push(check_module("conv1x1", &mut m, x, rng)?);

    let mut m = Conv2d::new("conv_sn", 3, 2, 2, 1, true, rng)?;
    let x = normal_tensor(&[1, 4, 4, 2], rng);
    out.push(check_module("conv3x3_spectral_norm", &mut m, x, rng)?);

    let mut m = BatchNorm::new("bn", 2);
    m.gamma.value = normal_tensor(&[2], rng);
    m.beta.value = normal_tensor(&[2], rng);
    let x = normal_tensor(&[4, 2, 2, 2], rng);
    out.push(check_module("batchnorm", &mut m, x, rng)?);

    let x = away_from_zero(&[2, 4, 4, 2], 0.05, rng);
    out.push(check_module("relu", &mut Relu::new(), x, rng)?);

    let x = normal_tensor(&[2, 4, 4, 2], rng).scale(2.0);
    out.push(check_module("sigmoid", &mut Sigmoid::new(), x, rng)?);

    let x = normal_tensor(&[2, 2, 2, 3], rng);
    out.push(check_module("upsample2x", &mut Upsample2x::new(), x, rng)?);

    let x = normal_tensor(&[2, 4, 4, 2], rng);
    out.push(check_module("avgpool2x", &mut AvgPool2x::new(), x, rng)?);

    let x = normal_tensor(&[2, 3, 3, 2], rng);
    out.push(check_module("global_sum_pool", &mut GlobalSumPool::new(), x, rng)?);

    let x = normal_tensor(&[2, 12], rng);
    out.push(check_module("reshape", &mut Reshape::new(&[2, 2, 3]), x, rng)?);

    let mut m = ResBlock::up("up", 2, 2, rng)?;
    let x = away_from_zero(&[2, 2, 2, 2], 0.05, rng);
    out.push(check_module("resblock_up", &mut m, x, rng)?);

    let mut m = ResBlock::down("down0", 2, 2, true, true, rng)?;
    let x = normal_tensor(&[2, 4, 4, 2], rng);
    out.push(check_module("resblock_down_first", &mut m, x, rng)?);

    let mut m = ResBlock::down("down1", 2, 3, false, true, rng)?;
    let x = away_from_zero(&[2, 4, 4, 2], 0.05, rng);
    out.push(check_module("resblock_down", &mut m, x, rng)?);

    let mut m = ResBlock::flat("flat", 2, 3, true, rng)?;
    let x = away_from_zero(&[2, 4, 4, 2], 0.05, rng);
    out.push(check_module("resblock_flat", &mut m, x, rng)?);

    let wavelet = MotherWavelet::new(1.0)?;
    let scales = [0.8 + rng.random::<f64>(), 1.5 + rng.random::<f64>(), 3.0 + rng.random::<f64>()];
    let mut m = WaveletDeconvLayer::new("wavelet", wavelet, &scales, 7)?;
    let x = normal_tensor(&[2, 4, 4, 2], rng);
    out.push(check_module("wavelet_deconv", &mut m, x, rng)?);

    out.push(check_loss(LossKind::Hinge, rng)?);
    out.push(check_loss(LossKind::Minimax, rng)?);

    // A small stack exercises the layer-enum dispatch and gradient chaining.
    let mut m = crate::nn::Stack::new(vec![
        Layer::Conv(Conv2d::new("stack.conv", 3, 1, 2, 1, false, rng)?),
        Layer::Relu(Relu::new()),
        Layer::AvgPool(AvgPool2x::new()),
        Layer::GlobalSumPool(GlobalSumPool::new()),
        Layer::Dense(Dense::new("stack.dense", 2, 1, true, rng)),
    ]);
    let x = normal_tensor(&[2, 4, 4, 1], rng);
    out.push(check_module("stack", &mut m, x, rng)?);
    Ok(out)
}

/// Generator loss for fixed noise, with the wavelet scales set to `scales`.
fn generator_loss(model: &mut GanModel, z: &Tensor, loss: LossKind) -> Result<(f64, Tensor)> {
    let fake = model.generate(z.clone(), None, None, Mode::Train)?;
    let logits = model.discriminator.forward(fake, Mode::Train)?;
    let (value, dlogits) = loss.generator(logits.data())?;
    Ok((value, Tensor::from_vec(logits.shape(), dlogits)?))
}

fn set_scales(model: &mut GanModel, scales: &[f64]) {
    for layer in &mut model.generator.layers {
        if let Layer::Wavelet(w) = layer {
            w.scales.value.data_mut().copy_from_slice(scales);
            w.after_update();
        }
    }
}

/// Compares the analytic generator-loss gradient with respect to each wavelet
/// scale, backpropagated through the discriminator and the whole generator,
/// against central differences. Uses a narrow model for speed.
pub fn check_generator_scale_gradient(seed: u64, loss: LossKind) -> Result<OpCheck> {
    let arch = ArchConfig {
        base_width: 4,
        disc_width: 4,
        z_dim: 8,
        ..ArchConfig::default()
    };
    let mut model = GanModel::new(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let z = model.sample_noise(4, &mut rng);

    model.generator.zero_grad();
    let (_, dlogits) = generator_loss(&mut model, &z, loss)?;
    let dx = model.discriminator.backward(dlogits)?;
    model.generator_backward(dx)?;
    let analytic = model
        .wavelet()
        .map(|w| w.scale_grad().to_vec())
        .ok_or_else(|| crate::Error::Parameter("model has no wavelet layer".into()))?;
    let scales = model.wavelet_scales();

    let mut worst: f64 = 0.0;
    for i in 0..scales.len() {
        let mut s = scales.clone();
        s[i] = scales[i] + STEP;
        set_scales(&mut model, &s);
        let up = generator_loss(&mut model, &z, loss)?.0;
        s[i] = scales[i] - STEP;
        set_scales(&mut model, &s);
        let down = generator_loss(&mut model, &z, loss)?.0;
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    set_scales(&mut model, &scales);
    Ok(OpCheck {
        op: "generator_scale_gradient".into(),
        max_rel_error: worst,
        entries: scales.len(),
        tolerance: END_TO_END_TOLERANCE,
    })
}
