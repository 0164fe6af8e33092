use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// He initialization: zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite standard deviation");
    let len = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
