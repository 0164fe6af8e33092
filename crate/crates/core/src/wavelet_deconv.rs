//! Learnable multi-scale wavelet filtering with channel averaging.
//!
//! Every `(sample, image channel)` plane of a `[B, H, W, C]` tensor is read in
//! row-major raster order as a 1-D signal `z` of length `H*W`. The layer output is
//!
//! ```text
//! out = (sum_i corr_same(z, kernel_i)) / C
//! ```
//!
//! over the `C` scales of the filter bank, with the same shape as the input.
//! The scales are a [`Parameter`] so any optimizer can train them; after an
//! update call [`WaveletDeconvLayer::sync_scales`] (done by `after_update`) to
//! clamp them and re-sample the kernels.

use crate::error::{shape_err, Result};
use crate::nn::{take_cache, Mode, Module, Parameter};
use crate::tensor::Tensor;
use crate::wavelet::{correlate_same_into, FilterBank, MotherWavelet};

/// Scales never drop below this after an update.
pub const MIN_SCALE: f64 = 1e-3;

/// Splits a `[B, H, W, C]` tensor into `B*C` raster signals of length `H*W`,
/// ordered by sample then channel.
pub fn raster_flatten(x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (b, h, w, c) = x.dims4()?;
    let plane = h * w;
    let data = x.data();
    let mut signals = Vec::with_capacity(b * c);
    for n in 0..b {
        let sample = &data[n * plane * c..(n + 1) * plane * c];
        for ch in 0..c {
            signals.push(sample.iter().skip(ch).step_by(c).copied().collect());
        }
    }
    Ok(signals)
}

/// Inverse of [`raster_flatten`].
pub fn raster_unflatten(signals: &[Vec<f64>], shape: &[usize]) -> Result<Tensor> {
    let [b, h, w, c] = *shape else {
        return Err(shape_err!("expected a rank-4 shape, got {shape:?}"));
    };
    let plane = h * w;
    if signals.len() != b * c || signals.iter().any(|s| s.len() != plane) {
        return Err(shape_err!(
            "{} signals cannot fill shape {shape:?}",
            signals.len()
        ));
    }
    let mut data = vec![0.0; b * plane * c];
    for n in 0..b {
        for ch in 0..c {
            let s = &signals[n * c + ch];
            for (p, &v) in s.iter().enumerate() {
                data[(n * plane + p) * c + ch] = v;
            }
        }
    }
    Tensor::from_vec(shape, data)
}

#[derive(Clone)]
pub struct WaveletDeconvLayer {
    bank: FilterBank,
    /// Learnable scales, shape `[C]`. `scales.grad` accumulates dE/ds_i.
    pub scales: Parameter,
    cached_input: Option<Tensor>,
}

impl WaveletDeconvLayer {
    pub fn new(name: &str, wavelet: MotherWavelet, scales: &[f64], kernel_width: usize) -> Result<Self> {
        let bank = FilterBank::new(wavelet, scales, kernel_width)?;
        let value = Tensor::from_vec(&[scales.len()], scales.to_vec())?;
        Ok(WaveletDeconvLayer {
            bank,
            scales: Parameter::new(format!("{name}.scales"), value),
            cached_input: None,
        })
    }

    /// Dyadic ladder `1, 2, 4, ...` of length `channels`.
    pub fn dyadic_scales(channels: usize) -> Vec<f64> {
        (0..channels).map(|i| 2f64.powi(i as i32)).collect()
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn channels(&self) -> usize {
        self.bank.channels()
    }

    pub fn scale_values(&self) -> &[f64] {
        self.scales.value.data()
    }

    pub fn scale_grad(&self) -> &[f64] {
        self.scales.grad.data()
    }

    /// Clamps the scales at [`MIN_SCALE`] and re-samples the kernels from them.
    pub fn sync_scales(&mut self) -> Result<()> {
        for s in self.scales.value.data_mut() {
            *s = s.max(MIN_SCALE);
        }
        self.bank = FilterBank::new(
            *self.bank.wavelet(),
            self.scales.value.data(),
            self.bank.kernel_width(),
        )?;
        Ok(())
    }

    /// Plain gradient step `s_i <- max(MIN_SCALE, s_i - lr * dE/ds_i)`; resets the gradient.
    pub fn apply_scale_update(&mut self, learning_rate: f64) -> Result<()> {
        for (s, g) in self.scales.value.data_mut().iter_mut().zip(self.scales.grad.data()) {
            *s -= learning_rate * g;
        }
        self.scales.zero_grad();
        self.sync_scales()
    }

    fn filter_signal(&self, z: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; z.len()];
        for kernel in self.bank.kernels() {
            correlate_same_into(z, kernel, &mut acc);
        }
        let c = self.channels() as f64;
        acc.iter_mut().for_each(|v| *v /= c);
        acc
    }
}

/// Transpose of `correlate_same_into`: `dz[t] += sum_j kernel[j + h] * g[t - j]`.
fn correlate_same_transpose_into(g: &[f64], kernel: &[f64], dz: &mut [f64]) {
    let n = g.len() as isize;
    let half = (kernel.len() / 2) as isize;
    for (t, d) in dz.iter_mut().enumerate() {
        let t = t as isize;
        let mut acc = 0.0;
        for (tap, &k) in kernel.iter().enumerate() {
            let b = t - (tap as isize - half);
            if b >= 0 && b < n {
                acc += k * g[b as usize];
            }
        }
        *d += acc;
    }
}

impl Module for WaveletDeconvLayer {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        x.check_finite("wavelet_deconv input")?;
        let signals = raster_flatten(&x)?;
        let filtered: Vec<Vec<f64>> = signals.iter().map(|z| self.filter_signal(z)).collect();
        let out = raster_unflatten(&filtered, x.shape())?;
        if mode == Mode::Train {
            self.cached_input = Some(x);
        }
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        if let Some(x) = &self.cached_input {
            if grad.shape() != x.shape() {
                return Err(shape_err!(
                    "wavelet_deconv gradient shape {:?} does not match input {:?}",
                    grad.shape(),
                    x.shape()
                ));
            }
        }
        let x = take_cache(&mut self.cached_input, "wavelet_deconv")?;
        let c = self.channels() as f64;
        let zs = raster_flatten(&x)?;
        let gs = raster_flatten(&grad)?;
        let mut dscale = vec![0.0; self.channels()];
        let mut dzs = Vec::with_capacity(zs.len());
        for (z, g) in zs.iter().zip(&gs) {
            let mut dz = vec![0.0; z.len()];
            for kernel in self.bank.kernels() {
                correlate_same_transpose_into(g, kernel, &mut dz);
            }
            dz.iter_mut().for_each(|v| *v /= c);
            dzs.push(dz);
            let mut response = vec![0.0; z.len()];
            for (i, dk) in self.bank.dkernels_dscale().iter().enumerate() {
                response.fill(0.0);
                correlate_same_into(z, dk, &mut response);
                dscale[i] += g.iter().zip(&response).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        for (acc, d) in self.scales.grad.data_mut().iter_mut().zip(&dscale) {
            *acc += d / c;
        }
        raster_unflatten(&dzs, x.shape())
    }

    fn kind(&self) -> &'static str {
        "wavelet_deconv"
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.scales]
    }

    fn params(&self) -> Vec<&Parameter> {
        vec![&self.scales]
    }

    fn after_update(&mut self) {
        // Scales are finite and the bank geometry is unchanged, so re-sampling cannot fail.
        self.sync_scales().expect("re-sampling a validated filter bank");
    }
}

impl std::fmt::Debug for WaveletDeconvLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WaveletDeconvLayer")
            .field("scales", &self.scale_values())
            .field("kernel_width", &self.bank.kernel_width())
            .field("sigma", &self.bank.wavelet().sigma())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn layer(scales: &[f64], k: usize) -> WaveletDeconvLayer {
        WaveletDeconvLayer::new("w", MotherWavelet::new(1.0).unwrap(), scales, k).unwrap()
    }

    #[test]
    fn raster_order_and_roundtrip() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(raster_flatten(&x).unwrap(), vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let x = Tensor::from_vec(&[2, 3, 2, 2], (0..24).map(f64::from).collect()).unwrap();
        let s = raster_flatten(&x).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(raster_unflatten(&s, x.shape()).unwrap(), x);
        assert_eq!(raster_flatten(&Tensor::zeros(&[2, 28, 28, 1])).unwrap()[1].len(), 784);
        assert!(matches!(raster_flatten(&Tensor::zeros(&[2, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn single_channel_is_plain_filter() {
        let mut l = layer(&[2.0], 9);
        let z: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos()).collect();
        let out = l.forward(Tensor::from_vec(&[1, 4, 5, 1], z.clone()).unwrap(), Mode::Eval).unwrap();
        let want = crate::wavelet::convolve_same(&z, &l.bank().kernels()[0]).unwrap();
        assert_eq!(out.data(), want.as_slice());
    }

    #[test]
    fn zero_in_zero_out_and_shape() {
        let mut l = layer(&WaveletDeconvLayer::dyadic_scales(5), 9);
        let out = l.forward(Tensor::zeros(&[64, 28, 28, 1]), Mode::Train).unwrap();
        assert_eq!(out.shape(), &[64, 28, 28, 1]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_signal_is_annihilated_in_interior() {
        let mut l = layer(&[1.0], 65);
        let out = l.forward(Tensor::full(&[1, 1, 200, 1], 1.0), Mode::Eval).unwrap();
        for &v in &out.data()[32..168] {
            assert!(v.abs() < 1e-3);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut l = layer(&[1.0], 3);
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(l.forward(x, Mode::Train), Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_errors() {
        let mut l = layer(&[1.0], 3);
        assert!(matches!(l.backward(Tensor::zeros(&[1, 2, 2, 1])), Err(Error::State(_))));
        l.forward(Tensor::zeros(&[1, 2, 2, 1]), Mode::Train).unwrap();
        assert!(matches!(l.backward(Tensor::zeros(&[1, 2, 3, 1])), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut l = layer(&[1.0, 3.0], 5);
        let x = Tensor::from_vec(&[1, 2, 4, 1], (0..8).map(|i| i as f64 - 3.0).collect()).unwrap();
        l.forward(x, Mode::Train).unwrap();
        let dx = l.backward(Tensor::zeros(&[1, 2, 4, 1])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert_eq!(l.scale_grad(), &[0.0, 0.0]);
    }

    #[test]
    fn scale_update_rule() {
        let mut l = layer(&[2.0], 9);
        l.scales.grad = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        l.apply_scale_update(0.1).unwrap();
        assert!((l.scale_values()[0] - 1.95).abs() < 1e-15);
        assert_eq!(l.scale_grad(), &[0.0]);
        assert_eq!(l.bank().kernels()[0], crate::wavelet::sample_kernel(1.95, 9, 1.0).unwrap());

        let mut l = layer(&[MIN_SCALE], 9);
        l.scales.grad = Tensor::from_vec(&[1], vec![1e9]).unwrap();
        l.apply_scale_update(0.1).unwrap();
        assert_eq!(l.scale_values(), &[MIN_SCALE]);

        let mut l = layer(&[3.0], 9);
        let before = l.bank().clone();
        l.apply_scale_update(0.1).unwrap();
        assert_eq!(l.bank(), &before);
    }

    fn signal(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 1.37).sin() + 0.3 * ((i as f64) * 0.41).cos()).collect()
    }

    fn energy(l: &mut WaveletDeconvLayer, z: &[f64]) -> f64 {
        let x = Tensor::from_vec(&[1, 1, z.len(), 1], z.to_vec()).unwrap();
        l.forward(x, Mode::Eval).unwrap().sum()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
    }

    #[test]
    fn scale_gradient_matches_finite_difference() {
        let scales = [0.8, 1.7, 3.2, 6.0];
        let mut l = layer(&scales, 9);
        let z = signal(32, 0.0);
        l.forward(Tensor::from_vec(&[1, 1, 32, 1], z.clone()).unwrap(), Mode::Train).unwrap();
        l.backward(Tensor::full(&[1, 1, 32, 1], 1.0)).unwrap();
        let h = 1e-5;
        for i in 0..scales.len() {
            let mut up = scales;
            up[i] += h;
            let mut down = scales;
            down[i] -= h;
            let fd = (energy(&mut layer(&up, 9), &z) - energy(&mut layer(&down, 9), &z)) / (2.0 * h);
            assert!(rel(l.scale_grad()[i], fd) < 1e-4, "scale {i}: {} vs {fd}", l.scale_grad()[i]);
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut l = layer(&[1.0, 2.0, 4.0], 7);
        let z = signal(16, 2.0);
        let g: Vec<f64> = signal(16, 5.0);
        let x = Tensor::from_vec(&[1, 4, 4, 1], z.clone()).unwrap();
        l.forward(x, Mode::Train).unwrap();
        let dz = l.backward(Tensor::from_vec(&[1, 4, 4, 1], g.clone()).unwrap()).unwrap();
        let probe = |l: &mut WaveletDeconvLayer, z: &[f64]| -> f64 {
            let x = Tensor::from_vec(&[1, 4, 4, 1], z.to_vec()).unwrap();
            l.forward(x, Mode::Eval).unwrap().data().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for i in 0..16 {
            let mut up = z.clone();
            up[i] += h;
            let mut down = z.clone();
            down[i] -= h;
            let fd = (probe(&mut l, &up) - probe(&mut l, &down)) / (2.0 * h);
            assert!(rel(dz.data()[i], fd) < 1e-4, "tap {i}: {} vs {fd}", dz.data()[i]);
        }
    }

    /// Zero-padded correlation written out longhand.
    fn oracle_filter(z: &[f64], k: &[f64]) -> Vec<f64> {
        let h = (k.len() / 2) as isize;
        (0..z.len() as isize)
            .map(|b| {
                let mut acc = 0.0;
                for j in -h..=h {
                    let idx = b + j;
                    if (0..z.len() as isize).contains(&idx) {
                        acc += k[(j + h) as usize] * z[idx as usize];
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn forward_matches_bruteforce_oracle_bitwise() {
        let scales = WaveletDeconvLayer::dyadic_scales(5);
        let mut l = layer(&scales, 9);
        let x = Tensor::from_vec(&[2, 5, 6, 2], signal(120, 1.0)).unwrap();
        let out = l.forward(x.clone(), Mode::Eval).unwrap();
        let signals = raster_flatten(&x).unwrap();
        let expected: Vec<Vec<f64>> = signals
            .iter()
            .map(|z| {
                let mut sum = vec![0.0; z.len()];
                for s in &scales {
                    let k = crate::wavelet::sample_kernel(*s, 9, 1.0).unwrap();
                    for (a, v) in sum.iter_mut().zip(oracle_filter(z, &k)) {
                        *a += v;
                    }
                }
                sum.iter().map(|v| v / scales.len() as f64).collect()
            })
            .collect();
        assert_eq!(out, raster_unflatten(&expected, x.shape()).unwrap());
        assert_eq!(out, l.forward(x, Mode::Eval).unwrap());
    }

    #[test]
    fn forward_is_linear() {
        let mut l = layer(&[1.0, 2.5], 9);
        let a = Tensor::from_vec(&[1, 3, 7, 1], signal(21, 0.0)).unwrap();
        let b = Tensor::from_vec(&[1, 3, 7, 1], signal(21, 9.0)).unwrap();
        let lhs = l.forward(a.scale(2.0).add(&b.scale(-0.5)).unwrap(), Mode::Eval).unwrap();
        let fa = l.forward(a, Mode::Eval).unwrap();
        let fb = l.forward(b, Mode::Eval).unwrap();
        let rhs = fa.scale(2.0).add(&fb.scale(-0.5)).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn shape_is_preserved(b in 1usize..=8, h in 1usize..=32, w in 1usize..=32, c in 1usize..=3) {
            let mut l = layer(&[1.0, 2.0], 5);
            let n = b * h * w * c;
            let x = Tensor::from_vec(&[b, h, w, c], (0..n).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
            let y = l.forward(x, Mode::Train).unwrap();
            proptest::prop_assert_eq!(y.shape(), &[b, h, w, c]);
            let dx = l.backward(Tensor::full(&[b, h, w, c], 1.0)).unwrap();
            proptest::prop_assert_eq!(dx.shape(), &[b, h, w, c]);
        }
    }
}
