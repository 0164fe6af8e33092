//! Binary PGM (P5) and PPM (P6) sample grids.

use std::path::{Path, PathBuf};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::gan::{Callback, StepMetrics, Trainer};
use crate::tensor::Tensor;

const SEPARATOR: usize = 2;
const SEPARATOR_VALUE: u8 = 255;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes the first `rows * cols` images as one grid with 2-pixel white separators.
pub fn encode_image_grid(images: &Tensor, rows: usize, cols: usize) -> Result<Vec<u8>> {
    let (n, h, w, c) = images.dims4()?;
    if rows == 0 || cols == 0 || rows * cols > n {
        return Err(Error::Parameter(format!("a {rows}x{cols} grid needs between 1 and {n} images")));
    }
    if c != 1 && c != 3 {
        return Err(Error::Parameter(format!("grids support 1 or 3 channels, got {c}")));
    }
    let gw = cols * w + (cols - 1) * SEPARATOR;
    let gh = rows * h + (rows - 1) * SEPARATOR;
    let mut pixels = vec![SEPARATOR_VALUE; gw * gh * c];
    let data = images.data();
    for r in 0..rows {
        for col in 0..cols {
            let img = &data[(r * cols + col) * h * w * c..][..h * w * c];
            for y in 0..h {
                let gy = r * (h + SEPARATOR) + y;
                let gx = col * (w + SEPARATOR);
                let dst = &mut pixels[(gy * gw + gx) * c..][..w * c];
                for (d, v) in dst.iter_mut().zip(&img[y * w * c..(y + 1) * w * c]) {
                    *d = quantize(*v);
                }
            }
        }
    }
    let mut out = format!("{}\n{gw} {gh}\n255\n", if c == 1 { "P5" } else { "P6" }).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn save_image_grid(images: &Tensor, rows: usize, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_image_grid(images, rows, cols)?)
}

/// Parses a binary P5/P6 file into `(width, height, channels, bytes)`.
pub fn parse_pnm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PNM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    let channels = match fields[0].1.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(0, format!("unsupported PNM magic {other:?}"))),
    };
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| Error::format(fields[i].0 as u64, format!("bad PNM header field {:?}", fields[i].1)))
    };
    let (w, h, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 {
        return Err(Error::format(fields[3].0 as u64, "only maxval 255 is supported"));
    }
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    if payload.len() != w * h * channels {
        return Err(Error::format(
            (pos + 1) as u64,
            format!("expected {} payload bytes, found {}", w * h * channels, payload.len()),
        ));
    }
    Ok((w, h, channels, payload.to_vec()))
}

/// Writes `samples_<step>.pgm` (or `.ppm`) every `every` steps from a fixed noise seed.
pub struct SampleGridCallback {
    pub dir: PathBuf,
    pub every: u64,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    /// Base images for residual-mode models.
    pub real: Option<Tensor>,
}

impl Callback for SampleGridCallback {
    fn after_step(&mut self, trainer: &Trainer, metrics: &mut StepMetrics) -> Result<()> {
        if self.every == 0 || !metrics.step.is_multiple_of(self.every) {
            return Ok(());
        }
        let samples = trainer.model.sample(self.rows * self.cols, self.seed, self.real.as_ref())?;
        let ext = if samples.shape()[3] == 1 { "pgm" } else { "ppm" };
        let path = self.dir.join(format!("samples_{:06}.{ext}", metrics.step));
        save_image_grid(&samples, self.rows, self.cols, path)
    }
}
