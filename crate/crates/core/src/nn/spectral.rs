//! Spectral normalization by persistent power iteration.
//!
//! Weights are stored as `[.., Cout]` row-major, i.e. as a `rest x Cout` matrix
//! `S`. The normalized matrix is `M = S^T` (rows = output channels), so
//! `u` lives in `R^Cout` and `v` in `R^rest`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Parameter;
use crate::tensor::Tensor;

const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNormState {
    /// Left singular-vector estimate, unit norm.
    pub u: Tensor,
    pub n_power_iters: usize,
    /// Most recent estimate of the largest singular value, stored as a
    /// one-element tensor so it persists with the other buffers.
    pub sigma: Tensor,
}

impl SpectralNormState {
    pub fn new(out_channels: usize, rng: &mut impl Rng) -> Self {
        let mut u: Vec<f64> = (0..out_channels).map(|_| StandardNormal.sample(rng)).collect();
        if !normalize(&mut u) {
            u = vec![0.0; out_channels];
            u[0] = 1.0;
        }
        SpectralNormState {
            u: Tensor::from_vec(&[out_channels], u).expect("length matches"),
            n_power_iters: 1,
            sigma: Tensor::scalar(1.0),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.data()[0]
    }

    /// Runs `n_power_iters` iterations against `weight` and updates `sigma`.
    pub fn refresh(&mut self, weight: &Tensor) {
        let cout = self.u.len();
        let rest = weight.len() / cout;
        let s = weight.data();
        let mut v = vec![0.0; rest];
        for _ in 0..self.n_power_iters.max(1) {
            // v = S u
            let u = self.u.data();
            for (r, vr) in v.iter_mut().enumerate() {
                *vr = s[r * cout..(r + 1) * cout].iter().zip(u).map(|(a, b)| a * b).sum();
            }
            normalize(&mut v);
            // u = S^T v, kept unchanged if it vanishes
            let mut u = vec![0.0; cout];
            for (r, &vr) in v.iter().enumerate() {
                for (uc, &src) in u.iter_mut().zip(&s[r * cout..(r + 1) * cout]) {
                    *uc += src * vr;
                }
            }
            if normalize(&mut u) {
                self.u.data_mut().copy_from_slice(&u);
            }
        }
        // sigma = u^T M v = v^T S u
        let u = self.u.data();
        let sigma: f64 = v
            .iter()
            .enumerate()
            .map(|(r, &vr)| vr * s[r * cout..(r + 1) * cout].iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        self.sigma.data_mut()[0] = sigma.abs().max(SIGMA_FLOOR);
    }
}

fn normalize(x: &mut [f64]) -> bool {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > SIGMA_FLOOR {
        x.iter_mut().for_each(|v| *v /= n);
        true
    } else {
        false
    }
}

/// One refresh of `state` against `weight`, returning `W / sigma`.
pub fn spectral_norm_apply(weight: &Parameter, state: &mut SpectralNormState) -> Tensor {
    state.refresh(&weight.value);
    weight.value.scale(1.0 / state.sigma())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn param(rows_rest: usize, cout: usize, data: Vec<f64>) -> Parameter {
        Parameter::new("w", Tensor::from_vec(&[rows_rest, cout], data).unwrap())
    }

    #[test]
    fn diagonal_converges_to_largest_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = param(2, 2, vec![3.0, 0.0, 0.0, 1.0]);
        let mut st = SpectralNormState::new(2, &mut rng);
        st.n_power_iters = 20;
        spectral_norm_apply(&w, &mut st);
        assert!((st.sigma() - 3.0).abs() < 1e-6, "{}", st.sigma());
        assert!((st.u.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = param(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut st = SpectralNormState::new(3, &mut rng);
        let normalized = spectral_norm_apply(&w, &mut st);
        assert!((st.sigma() - 1.0).abs() < 1e-12);
        assert!(normalized.zip_with(&w.value, |a, b| (a - b).abs()).unwrap().sum() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_left_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = param(2, 3, vec![0.0; 6]);
        let mut st = SpectralNormState::new(3, &mut rng);
        let normalized = spectral_norm_apply(&w, &mut st);
        assert_eq!(st.sigma(), SIGMA_FLOOR);
        assert_eq!(normalized, w.value);
        assert!((st.u.norm() - 1.0).abs() < 1e-12);
    }

    fn largest_singular_value(rows: usize, cols: usize, data: &[f64]) -> f64 {
        nalgebra::DMatrix::from_row_slice(rows, cols, data).singular_values().max()
    }

    #[test]
    fn random_matrix_matches_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = param(8, 8, data.clone());
        let mut st = SpectralNormState::new(8, &mut rng);
        for _ in 0..50 {
            st.refresh(&w.value);
        }
        let truth = largest_singular_value(8, 8, &data);
        assert!((st.sigma() - truth).abs() / truth < 0.01, "{} vs {truth}", st.sigma());
    }

    #[test]
    fn normalized_weight_has_unit_norm_after_warmup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rest, cout) = (27, 6);
        let data: Vec<f64> = (0..rest * cout).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = param(rest, cout, data);
        let mut st = SpectralNormState::new(cout, &mut rng);
        let mut normalized = w.value.clone();
        for _ in 0..30 {
            normalized = spectral_norm_apply(&w, &mut st);
        }
        let top = largest_singular_value(rest, cout, normalized.data());
        assert!(top <= 1.0 + 5e-2, "{top}");
        assert!(top >= 1.0 - 5e-2, "{top}");
    }
}
