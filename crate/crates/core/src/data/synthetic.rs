//! Seeded procedural images: filled rectangles, circles and crosses on black.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class names in label order.
pub const SHAPE_CLASSES: [&str; 3] = ["rectangle", "circle", "cross"];

/// `n` images of `size x size x channels`; classes are balanced up to `n % 3`
/// and placed in a seeded random order.
pub fn synthetic_shapes(n: usize, size: usize, channels: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Parameter("synthetic corpus needs at least one image".into()));
    }
    if size != 28 && size != 32 {
        return Err(Error::Parameter(format!("synthetic images are 28 or 32 pixels wide, got {size}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Parameter(format!("synthetic images have 1 or 3 channels, got {channels}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % SHAPE_CLASSES.len()).collect();
    labels.shuffle(&mut rng);
    let plane = size * size;
    let mut data = vec![0.0; n * plane * channels];
    for (i, &label) in labels.iter().enumerate() {
        let color: Vec<f64> = (0..channels).map(|_| rng.random_range(0.5..=1.0)).collect();
        let mask = draw(label, size, &mut rng);
        let img = &mut data[i * plane * channels..(i + 1) * plane * channels];
        for (p, &on) in mask.iter().enumerate() {
            if on {
                img[p * channels..(p + 1) * channels].copy_from_slice(&color);
            }
        }
    }
    let images = Tensor::from_vec(&[n, size, size, channels], data)?;
    Dataset::new(images, Some(labels), SHAPE_CLASSES.len(), "synthetic_shapes", "all")
}

fn draw(label: usize, size: usize, rng: &mut impl Rng) -> Vec<bool> {
    let s = size as f64;
    let mut mask = vec![false; size * size];
    let mut set = |x: usize, y: usize| mask[y * size + x] = true;
    match label {
        0 => {
            let w = rng.random_range(size / 4..=size / 2);
            let h = rng.random_range(size / 4..=size / 2);
            let x0 = rng.random_range(1..size - w);
            let y0 = rng.random_range(1..size - h);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    set(x, y);
                }
            }
        }
        1 => {
            let r = rng.random_range(s / 8.0..s / 4.0);
            let cx = rng.random_range(r + 1.0..s - r - 1.0);
            let cy = rng.random_range(r + 1.0..s - r - 1.0);
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        set(x, y);
                    }
                }
            }
        }
        _ => {
            let arm = rng.random_range(size / 5..=size / 3);
            let half = rng.random_range(1..=2usize);
            let cx = rng.random_range(arm + 1..size - arm - 1);
            let cy = rng.random_range(arm + 1..size - arm - 1);
            for y in cy - arm..=cy + arm {
                for x in cx - half..=cx + half {
                    set(x, y);
                }
            }
            for x in cx - arm..=cx + arm {
                for y in cy - half..=cy + half {
                    set(x, y);
                }
            }
        }
    }
    mask
}
