//! Mexican-hat mother wavelet, sampled filter banks and "same" correlation.
//!
//! The mother wavelet is
//!
//! ```text
//! psi(t) = A * (t^2/sigma^2 - 1) * exp(-t^2 / (k * sigma^2)),   A = 2 / (pi^(1/4) * sqrt(3 sigma))
//! ```
//!
//! with envelope divisor `k = 2` by default ([`Envelope::Ricker`]), which makes
//! the function zero-mean with unit L2 norm. [`Envelope::Narrow`] uses `k = 1`.
//! Note the sign: the polynomial factor is `t^2/sigma^2 - 1`, the negation of
//! the textbook Ricker wavelet, so the center tap is negative.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gaussian envelope variant of the mother wavelet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Envelope {
    /// `exp(-t^2 / (2 sigma^2))`: zero-mean, unit L2 norm.
    #[default]
    Ricker,
    /// `exp(-t^2 / sigma^2)`: narrower envelope. Not zero-mean.
    Narrow,
}

impl Envelope {
    fn divisor(self) -> f64 {
        match self {
            Envelope::Ricker => 2.0,
            Envelope::Narrow => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Envelope::Ricker => "ricker",
            Envelope::Narrow => "narrow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ricker" => Some(Envelope::Ricker),
            "narrow" => Some(Envelope::Narrow),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotherWavelet {
    sigma: f64,
    envelope: Envelope,
}

impl MotherWavelet {
    pub fn new(sigma: f64) -> Result<Self> {
        Self::with_envelope(sigma, Envelope::Ricker)
    }

    pub fn with_envelope(sigma: f64, envelope: Envelope) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        Ok(MotherWavelet { sigma, envelope })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn envelope(&self) -> Envelope {
        self.envelope
    }

    fn amplitude(&self) -> f64 {
        2.0 / (PI.powf(0.25) * (3.0 * self.sigma).sqrt())
    }

    pub fn psi(&self, t: f64) -> f64 {
        let u = t * t / (self.sigma * self.sigma);
        self.amplitude() * (u - 1.0) * (-u / self.envelope.divisor()).exp()
    }

    /// d(psi)/dt.
    ///
    /// With `u = t^2/sigma^2` and envelope divisor `k`, `du/dt = 2t/sigma^2` and
    ///
    /// ```text
    /// psi'(t) = A * e^(-u/k) * du/dt * (1 - (u - 1)/k)
    ///         = A * (2t/sigma^2) * (1 - (u - 1)/k) * e^(-u/k)
    /// ```
    ///
    /// which for `k = 2` reduces to `A * (t/sigma^2) * (3 - u) * e^(-u/2)`.
    pub fn dpsi_dt(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let u = t * t / s2;
        let k = self.envelope.divisor();
        self.amplitude() * (2.0 * t / s2) * (1.0 - (u - 1.0) / k) * (-u / k).exp()
    }

    /// `psi_{s,b}(t) = psi((t - b)/s) / sqrt(s)`.
    pub fn scaled(&self, t: f64, scale: f64, offset: f64) -> Result<f64> {
        check_scale(scale)?;
        Ok(self.psi((t - offset) / scale) / scale.sqrt())
    }

    /// Taps `psi_{s,0}(j)` for `j = -(K-1)/2 ..= (K-1)/2`.
    pub fn sample_kernel(&self, scale: f64, width: usize) -> Result<Vec<f64>> {
        check_scale(scale)?;
        check_width(width)?;
        let inv_sqrt = 1.0 / scale.sqrt();
        Ok(tap_offsets(width)
            .map(|j| inv_sqrt * self.psi(j / scale))
            .collect())
    }

    /// Per-tap derivative of [`sample_kernel`](Self::sample_kernel) with respect to the scale:
    ///
    /// ```text
    /// d/ds [ s^(-1/2) psi(j/s) ] = -(1/2) s^(-3/2) psi(j/s) - s^(-1/2) psi'(j/s) j / s^2
    /// ```
    pub fn sample_kernel_dscale(&self, scale: f64, width: usize) -> Result<Vec<f64>> {
        check_scale(scale)?;
        check_width(width)?;
        let inv_sqrt = 1.0 / scale.sqrt();
        Ok(tap_offsets(width)
            .map(|j| {
                let x = j / scale;
                -0.5 * inv_sqrt / scale * self.psi(x) - inv_sqrt * self.dpsi_dt(x) * j / (scale * scale)
            })
            .collect())
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!("scale must be positive, got {scale}")));
    }
    Ok(())
}

fn check_width(width: usize) -> Result<()> {
    if width < 3 || width.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "kernel width must be odd and at least 3, got {width}"
        )));
    }
    Ok(())
}

fn tap_offsets(width: usize) -> impl Iterator<Item = f64> {
    let half = (width / 2) as i64;
    (-half..=half).map(|j| j as f64)
}

pub fn mexican_hat(t: f64, sigma: f64) -> Result<f64> {
    Ok(MotherWavelet::new(sigma)?.psi(t))
}

pub fn mexican_hat_dt(t: f64, sigma: f64) -> Result<f64> {
    Ok(MotherWavelet::new(sigma)?.dpsi_dt(t))
}

pub fn scaled_wavelet(t: f64, scale: f64, offset: f64, sigma: f64) -> Result<f64> {
    MotherWavelet::new(sigma)?.scaled(t, scale, offset)
}

pub fn sample_kernel(scale: f64, width: usize, sigma: f64) -> Result<Vec<f64>> {
    MotherWavelet::new(sigma)?.sample_kernel(scale, width)
}

pub fn sample_kernel_dscale(scale: f64, width: usize, sigma: f64) -> Result<Vec<f64>> {
    MotherWavelet::new(sigma)?.sample_kernel_dscale(scale, width)
}

/// Per-scale kernels and their scale derivatives, all of width `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    wavelet: MotherWavelet,
    scales: Vec<f64>,
    kernel_width: usize,
    kernels: Vec<Vec<f64>>,
    dkernels_dscale: Vec<Vec<f64>>,
}

impl FilterBank {
    pub fn new(wavelet: MotherWavelet, scales: &[f64], kernel_width: usize) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Parameter("filter bank needs at least one scale".into()));
        }
        let kernels = scales
            .iter()
            .map(|&s| wavelet.sample_kernel(s, kernel_width))
            .collect::<Result<Vec<_>>>()?;
        let dkernels_dscale = scales
            .iter()
            .map(|&s| wavelet.sample_kernel_dscale(s, kernel_width))
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterBank {
            wavelet,
            scales: scales.to_vec(),
            kernel_width,
            kernels,
            dkernels_dscale,
        })
    }

    pub fn channels(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel_width
    }

    pub fn wavelet(&self) -> &MotherWavelet {
        &self.wavelet
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }

    pub fn dkernels_dscale(&self) -> &[Vec<f64>] {
        &self.dkernels_dscale
    }
}

pub fn build_filter_bank(scales: &[f64], kernel_width: usize, sigma: f64) -> Result<FilterBank> {
    FilterBank::new(MotherWavelet::new(sigma)?, scales, kernel_width)
}

/// Zero-padded cross-correlation with output length equal to the input length:
/// `out[b] = sum_j kernel[j + h] * signal[b + j]`, `h = (K-1)/2`.
pub fn convolve_same(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Parameter("signal must not be empty".into()));
    }
    if kernel.len().is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "kernel length must be odd, got {}",
            kernel.len()
        )));
    }
    let mut out = vec![0.0; signal.len()];
    correlate_same_into(signal, kernel, &mut out);
    Ok(out)
}

/// Accumulates the "same" correlation of `signal` with `kernel` into `out`.
pub(crate) fn correlate_same_into(signal: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = signal.len() as isize;
    let half = (kernel.len() / 2) as isize;
    for (b, o) in out.iter_mut().enumerate() {
        let b = b as isize;
        let mut acc = 0.0;
        for (tap, &k) in kernel.iter().enumerate() {
            let idx = b + tap as isize - half;
            if idx >= 0 && idx < n {
                acc += k * signal[idx as usize];
            }
        }
        *o += acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // high-precision evaluation of the closed form (mpmath, 30 digits)
    const PSI_0: f64 = -0.867_325_070_584_077_5;
    const HALF_PSI_0: f64 = -0.433_662_535_292_038_76;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn center_value() {
        assert!(close(mexican_hat(0.0, 1.0).unwrap(), PSI_0, 1e-15));
    }

    #[test]
    fn roots_at_sigma() {
        for sigma in [0.3, 1.0, 2.5] {
            assert_eq!(mexican_hat(sigma, sigma).unwrap(), 0.0);
            assert_eq!(mexican_hat(-sigma, sigma).unwrap(), 0.0);
        }
    }

    #[test]
    fn even_and_decaying() {
        assert_eq!(mexican_hat(1.3, 0.7).unwrap(), mexican_hat(-1.3, 0.7).unwrap());
        assert!(mexican_hat(50.0, 1.0).unwrap().abs() < 1e-300);
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(matches!(mexican_hat(0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(mexican_hat(0.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(mexican_hat_dt(0.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_matches_central_difference() {
        assert_eq!(mexican_hat_dt(0.0, 1.0).unwrap(), 0.0);
        let h = 1e-6;
        for env in [Envelope::Ricker, Envelope::Narrow] {
            let w = MotherWavelet::with_envelope(1.0, env).unwrap();
            let fd = (w.psi(0.5 + h) - w.psi(0.5 - h)) / (2.0 * h);
            assert!(close(w.dpsi_dt(0.5), fd, 1e-7), "{env:?}");
            assert_eq!(w.dpsi_dt(0.8), -w.dpsi_dt(-0.8));
        }
    }

    #[test]
    fn scaled_wavelet_cases() {
        for t in [-2.0, 0.3, 1.7] {
            assert_eq!(
                scaled_wavelet(t, 1.0, 0.0, 1.3).unwrap(),
                mexican_hat(t, 1.3).unwrap()
            );
        }
        assert!(close(scaled_wavelet(7.0, 4.0, 7.0, 1.0).unwrap(), HALF_PSI_0, 1e-15));
        let a = scaled_wavelet(2.5 + 3.0, 2.0, 1.0 + 3.0, 1.0).unwrap();
        let b = scaled_wavelet(2.5, 2.0, 1.0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(matches!(scaled_wavelet(0.0, 0.0, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_shape_and_center() {
        let k = sample_kernel(1.0, 9, 1.0).unwrap();
        assert_eq!(k.len(), 9);
        assert!(close(k[4], PSI_0, 1e-15));
        for j in 0..9 {
            assert_eq!(k[j], k[8 - j]);
        }
        assert_eq!(sample_kernel(5.0, 3, 1.0).unwrap().len(), 3);
        assert!(matches!(sample_kernel(1.0, 4, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(sample_kernel(1.0, 1, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn kernel_sum_is_near_zero_when_wide_enough() {
        let k = sample_kernel(1.0, 65, 1.0).unwrap();
        assert!(k.iter().sum::<f64>().abs() < 1e-3);
    }

    #[test]
    fn narrow_envelope_is_not_zero_mean() {
        let w = MotherWavelet::with_envelope(1.0, Envelope::Narrow).unwrap();
        let sum: f64 = w.sample_kernel(1.0, 65).unwrap().iter().sum();
        // -sqrt(pi)/2 * A for the continuous integral; the discrete sum is close.
        assert!(sum < -0.5);
    }

    #[test]
    fn dscale_center_tap() {
        for s in [0.5, 1.0, 3.0] {
            let d = sample_kernel_dscale(s, 9, 1.0).unwrap();
            let want = -0.5 * s.powf(-1.5) * PSI_0;
            assert!(close(d[4], want, 1e-14));
        }
        let d = sample_kernel_dscale(1.0, 9, 1.0).unwrap();
        assert!(close(d[4], -HALF_PSI_0, 1e-15));
    }

    #[test]
    fn dscale_matches_finite_difference() {
        let h = 1e-6;
        for s in [0.5, 1.0, 3.0, 10.0] {
            let d = sample_kernel_dscale(s, 21, 1.0).unwrap();
            let up = sample_kernel(s + h, 21, 1.0).unwrap();
            let dn = sample_kernel(s - h, 21, 1.0).unwrap();
            for j in 0..21 {
                let fd = (up[j] - dn[j]) / (2.0 * h);
                let rel = (d[j] - fd).abs() / (d[j].abs() + 1e-12);
                assert!(rel < 1e-5 || (d[j] - fd).abs() < 1e-10, "s={s} j={j} rel={rel}");
            }
        }
    }

    #[test]
    fn bank_matches_direct_sampling() {
        let bank = build_filter_bank(&[1.0, 2.0, 4.0, 8.0, 16.0], 9, 1.0).unwrap();
        assert_eq!(bank.channels(), 5);
        for (i, &s) in bank.scales().iter().enumerate() {
            assert_eq!(bank.kernels()[i], sample_kernel(s, 9, 1.0).unwrap());
            assert_eq!(bank.dkernels_dscale()[i], sample_kernel_dscale(s, 9, 1.0).unwrap());
        }
        assert_eq!(build_filter_bank(&[1.0], 3, 1.0).unwrap().channels(), 1);
        assert!(matches!(build_filter_bank(&[], 9, 1.0), Err(Error::Parameter(_))));
        assert!(build_filter_bank(&[1.0, -2.0], 9, 1.0).is_err());
    }

    #[test]
    fn convolve_cases() {
        let x = [0.5, -1.0, 2.0, 3.5];
        assert_eq!(convolve_same(&x, &[0.0, 1.0, 0.0]).unwrap(), x.to_vec());
        // out[b] = x[b-1] - x[b+1] with zeros outside
        assert_eq!(
            convolve_same(&[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0]).unwrap(),
            vec![-2.0, -2.0, 2.0]
        );
        assert_eq!(convolve_same(&[0.0; 5], &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 5]);
        assert!(convolve_same(&[], &[1.0]).is_err());
        assert!(convolve_same(&[1.0], &[1.0, 2.0]).is_err());
    }
}
