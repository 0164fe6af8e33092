//! 2-D cross-correlation with "same" zero padding, NHWC layout.
//!
//! Implemented as im2col followed by a GEMM against the kernel viewed as a
//! `[k*k*Cin, Cout]` matrix. Samples are processed in fixed-size chunks so the
//! column buffer stays small; per-chunk kernel gradients are reduced in chunk
//! order, which keeps results independent of the thread count.

use rand::Rng;

use super::dense::accumulate_scaled;
use super::{he_normal, take_cache, Mode, Module, Parameter, SpectralNormState};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, Tensor};

/// Target number of im2col rows per chunk.
const CHUNK_ROWS: usize = 784;

#[derive(Clone)]
pub struct Conv2d {
    pub kernel: Parameter,
    pub bias: Parameter,
    pub sn: Option<SpectralNormState>,
    size: usize,
    stride: usize,
    cin: usize,
    cout: usize,
    input: Option<Tensor>,
}

#[derive(Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn cols(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Stride-1 convs with enough input channels run tap by tap on a padded grid.
    fn use_taps(&self) -> bool {
        self.stride == 1 && self.cin >= 8 && !self.is_pointwise()
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Writes the column matrix for `samples` (NHWC data of those samples only).
    fn im2col(&self, samples: &[f64], col: &mut [f64]) {
        let cols = self.cols();
        let in_stride = self.h * self.w * self.cin;
        let n = samples.len() / in_stride;
        for s in 0..n {
            let x = &samples[s * in_stride..(s + 1) * in_stride];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = (s * self.oh + oy) * self.ow + ox;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            let d = &mut dst[(ky * self.k + kx) * self.cin..(ky * self.k + kx + 1) * self.cin];
                            if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                                d.fill(0.0);
                            } else {
                                let src = (iy as usize * self.w + ix as usize) * self.cin;
                                d.copy_from_slice(&x[src..src + self.cin]);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatters column gradients back onto the input gradient of the same samples.
    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let cols = self.cols();
        let in_stride = self.h * self.w * self.cin;
        let n = dx.len() / in_stride;
        for s in 0..n {
            let x = &mut dx[s * in_stride..(s + 1) * in_stride];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = (s * self.oh + oy) * self.ow + ox;
                    let src = &col[row * cols..(row + 1) * cols];
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let dst = (iy as usize * self.w + ix as usize) * self.cin;
                            let s_off = (ky * self.k + kx) * self.cin;
                            for c in 0..self.cin {
                                x[dst + c] += src[s_off + c];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        size: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        spectral: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = size * size * cin;
        let kernel = Parameter::new(
            format!("{name}.w"),
            he_normal(&[size, size, cin, cout], fan_in, rng),
        );
        let bias = Parameter::new(format!("{name}.b"), Tensor::zeros(&[cout]));
        let sn = spectral.then(|| {
            let mut st = SpectralNormState::new(cout, rng);
            st.refresh(&kernel.value);
            st
        });
        Self::from_parts(kernel, bias, stride).map(|mut c| {
            c.sn = sn;
            c
        })
    }

    pub fn from_parts(kernel: Parameter, bias: Parameter, stride: usize) -> Result<Self> {
        let (size, size2, cin, cout) = kernel.value.dims4()?;
        if size != size2 || size % 2 == 0 {
            return Err(Error::Parameter(format!(
                "conv kernel must be square with odd size, got {size}x{size2}"
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Parameter(format!("conv stride must be 1 or 2, got {stride}")));
        }
        bias.value.ensure_shape(&[cout])?;
        Ok(Conv2d {
            kernel,
            bias,
            sn: None,
            size,
            stride,
            cin,
            cout,
            input: None,
        })
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.size / 2;
        (
            (h + 2 * pad - self.size) / self.stride + 1,
            (w + 2 * pad - self.size) / self.stride + 1,
        )
    }

    fn geometry(&self, x: &Tensor) -> Result<(usize, Geometry)> {
        let (b, h, w, c) = x.dims4()?;
        if c != self.cin {
            return Err(shape_err!("conv expects {} input channels, got {c}", self.cin));
        }
        let (oh, ow) = self.output_size(h, w);
        Ok((
            b,
            Geometry {
                h,
                w,
                oh,
                ow,
                cin: self.cin,
                cout: self.cout,
                k: self.size,
                stride: self.stride,
                pad: self.size / 2,
            },
        ))
    }

    fn inv_sigma(&self) -> f64 {
        self.sn.as_ref().map_or(1.0, |s| 1.0 / s.sigma())
    }
}

fn samples_per_chunk(g: &Geometry) -> usize {
    (CHUNK_ROWS / g.out_pixels().max(1)).max(1)
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

fn with_scratch<T>(f: impl FnOnce(&mut Vec<f64>) -> T) -> T {
    SCRATCH.with(|b| f(&mut b.borrow_mut()))
}

/// Runs `f(chunk, out_chunk, scratch)` over consecutive `chunk_len` slices of `out`.
#[cfg(feature = "parallel")]
fn for_each_chunk(out: &mut [f64], chunk_len: usize, f: impl Fn(usize, &mut [f64], &mut Vec<f64>) + Sync + Send) {
    use rayon::prelude::*;
    out.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(c, o)| with_scratch(|buf| f(c, o, buf)));
}

#[cfg(not(feature = "parallel"))]
fn for_each_chunk(out: &mut [f64], chunk_len: usize, f: impl Fn(usize, &mut [f64], &mut Vec<f64>)) {
    for (c, o) in out.chunks_mut(chunk_len).enumerate() {
        with_scratch(|buf| f(c, o, buf));
    }
}

#[cfg(feature = "parallel")]
fn map_chunks<T: Send>(n_chunks: usize, f: impl Fn(usize, &mut Vec<f64>) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n_chunks).into_par_iter().map(|c| with_scratch(|buf| f(c, buf))).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<T>(n_chunks: usize, f: impl Fn(usize, &mut Vec<f64>) -> T) -> Vec<T> {
    (0..n_chunks).map(|c| with_scratch(|buf| f(c, buf))).collect()
}

/// Column matrix of `samples`, borrowing the input directly for 1x1 stride-1 kernels.
fn columns<'a>(g: &Geometry, samples: &'a [f64], buf: &'a mut Vec<f64>) -> &'a [f64] {
    if g.is_pointwise() {
        return samples;
    }
    let rows = samples.len() / (g.h * g.w * g.cin) * g.out_pixels();
    buf.resize(rows * g.cols(), 0.0);
    g.im2col(samples, buf);
    buf
}

/// Stride-1 layout: every sample is zero-padded to `(h + 2p) x (w + 2p)` and the
/// output is computed on the same padded grid, so each kernel tap becomes one
/// GEMM over a shifted, contiguous view of the padded input. Grid positions
/// outside the `h x w` output window are scratch.
struct Padded {
    wp: usize,
    area: usize,
    max_shift: usize,
}

impl Padded {
    fn new(g: &Geometry) -> Self {
        let wp = g.w + 2 * g.pad;
        let hp = g.h + 2 * g.pad;
        Padded {
            wp,
            area: hp * wp,
            max_shift: (g.k - 1) * wp + g.k - 1,
        }
    }

    fn shift(&self, ky: usize, kx: usize) -> usize {
        ky * self.wp + kx
    }

    /// Rows of the padded grid that receive every tap; covers all valid outputs.
    fn rows(&self, n: usize) -> usize {
        n * self.area - self.max_shift
    }

    /// Copies NHWC samples with `c` channels into the padded grid at `offset` pixels.
    fn scatter(&self, g: &Geometry, src: &[f64], c: usize, offset: usize, dst: &mut [f64]) {
        for (s, sample) in src.chunks(g.h * g.w * c).enumerate() {
            for (y, row) in sample.chunks(g.w * c).enumerate() {
                let at = (s * self.area + offset + y * self.wp) * c;
                dst[at..at + g.w * c].copy_from_slice(row);
            }
        }
    }

    /// Reads the `h x w` window at `offset` pixels back into NHWC order.
    fn gather(&self, g: &Geometry, src: &[f64], c: usize, offset: usize, dst: &mut [f64]) {
        for (s, sample) in dst.chunks_mut(g.h * g.w * c).enumerate() {
            for (y, row) in sample.chunks_mut(g.w * c).enumerate() {
                let at = (s * self.area + offset + y * self.wp) * c;
                row.copy_from_slice(&src[at..at + g.w * c]);
            }
        }
    }
}

fn forward_chunk(g: &Geometry, samples: &[f64], kernel: &[f64], out: &mut [f64], buf: &mut Vec<f64>) {
    let n = out.len() / (g.out_pixels() * g.cout);
    if !g.use_taps() {
        let col = columns(g, samples, buf);
        let rows = n * g.out_pixels();
        gemm(rows, g.cols(), g.cout, col, (g.cols() as isize, 1), kernel, (g.cout as isize, 1), 0.0, out);
        return;
    }
    let p = Padded::new(g);
    buf.clear();
    buf.resize(n * p.area * (g.cin + g.cout), 0.0);
    let (xp, acc) = buf.split_at_mut(n * p.area * g.cin);
    p.scatter(g, samples, g.cin, p.shift(g.pad, g.pad), xp);
    let rows = p.rows(n);
    let tap_len = g.cin * g.cout;
    for ky in 0..g.k {
        for kx in 0..g.k {
            let t = p.shift(ky, kx);
            let w = &kernel[(ky * g.k + kx) * tap_len..][..tap_len];
            gemm(rows, g.cin, g.cout, &xp[t * g.cin..], (g.cin as isize, 1), w, (g.cout as isize, 1), 1.0, acc);
        }
    }
    p.gather(g, acc, g.cout, 0, out);
}

/// Kernel, bias and input gradients of one chunk, before the spectral-norm scale.
fn backward_chunk(
    g: &Geometry,
    samples: &[f64],
    gy: &[f64],
    kernel: &[f64],
    want_dx: bool,
    buf: &mut Vec<f64>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = gy.len() / (g.out_pixels() * g.cout);
    let mut db = vec![0.0; g.cout];
    for row in gy.chunks(g.cout) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let mut dw = vec![0.0; g.cols() * g.cout];
    let mut dx = vec![0.0; if want_dx { n * g.h * g.w * g.cin } else { 0 }];
    if !g.use_taps() {
        let rows = n * g.out_pixels();
        let col = columns(g, samples, buf);
        gemm(g.cols(), rows, g.cout, col, (1, g.cols() as isize), gy, (g.cout as isize, 1), 0.0, &mut dw);
        if want_dx {
            // dcol = gy W^T, scattered back onto the input grid
            let mut dcol = vec![0.0; rows * g.cols()];
            gemm(rows, g.cout, g.cols(), gy, (g.cout as isize, 1), kernel, (1, g.cout as isize), 0.0, &mut dcol);
            g.col2im(&dcol, &mut dx);
        }
        return (dw, db, dx);
    }
    let p = Padded::new(g);
    let (xlen, glen) = (n * p.area * g.cin, n * p.area * g.cout);
    buf.clear();
    buf.resize(2 * xlen + glen, 0.0);
    let (xp, rest) = buf.split_at_mut(xlen);
    let (gp, dxp) = rest.split_at_mut(glen);
    p.scatter(g, samples, g.cin, p.shift(g.pad, g.pad), xp);
    p.scatter(g, gy, g.cout, 0, gp);
    let rows = p.rows(n);
    let tap_len = g.cin * g.cout;
    for ky in 0..g.k {
        for kx in 0..g.k {
            let t = p.shift(ky, kx);
            let tap = (ky * g.k + kx) * tap_len;
            gemm(
                g.cin,
                rows,
                g.cout,
                &xp[t * g.cin..],
                (1, g.cin as isize),
                gp,
                (g.cout as isize, 1),
                0.0,
                &mut dw[tap..tap + tap_len],
            );
            if want_dx {
                gemm(
                    rows,
                    g.cout,
                    g.cin,
                    gp,
                    (g.cout as isize, 1),
                    &kernel[tap..tap + tap_len],
                    (1, g.cout as isize),
                    1.0,
                    &mut dxp[t * g.cin..],
                );
            }
        }
    }
    if want_dx {
        p.gather(g, dxp, g.cin, p.shift(g.pad, g.pad), &mut dx);
    }
    (dw, db, dx)
}

impl Module for Conv2d {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let (batch, g) = self.geometry(&x)?;
        let per = samples_per_chunk(&g);
        let in_stride = g.h * g.w * g.cin;
        let out_stride = g.out_pixels() * g.cout;
        let scale = self.inv_sigma();
        let kernel = self.kernel.value.data();
        let bias = self.bias.value.data();
        let xs = x.data();
        let mut data = vec![0.0; batch * out_stride];
        for_each_chunk(&mut data, per * out_stride, |c, out, buf| {
            let n = out.len() / out_stride;
            let samples = &xs[c * per * in_stride..(c * per + n) * in_stride];
            forward_chunk(&g, samples, kernel, out, buf);
            for row in out.chunks_mut(g.cout) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v = *v * scale + b;
                }
            }
        });
        if mode == Mode::Train {
            self.input = Some(x);
        }
        Tensor::from_vec(&[batch, g.oh, g.ow, g.cout], data)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let x = take_cache(&mut self.input, "conv2d")?;
        let (batch, g) = self.geometry(&x)?;
        if let Err(e) = grad.ensure_shape(&[batch, g.oh, g.ow, g.cout]) {
            self.input = Some(x);
            return Err(e);
        }
        let per = samples_per_chunk(&g);
        let in_stride = g.h * g.w * g.cin;
        let out_stride = g.out_pixels() * g.cout;
        let scale = self.inv_sigma();
        let kernel = self.kernel.value.data();
        let xs = x.data();
        let gs = grad.data();
        let parts = map_chunks(batch.div_ceil(per), |c, buf| {
            let s0 = c * per;
            let s1 = ((c + 1) * per).min(batch);
            let samples = &xs[s0 * in_stride..s1 * in_stride];
            backward_chunk(&g, samples, &gs[s0 * out_stride..s1 * out_stride], kernel, true, buf)
        });
        let mut dx = Vec::with_capacity(batch * in_stride);
        for (dw, db, dx_part) in parts {
            accumulate_scaled(&mut self.kernel.grad, &dw, scale);
            accumulate_scaled(&mut self.bias.grad, &db, 1.0);
            dx.extend(dx_part.iter().map(|v| v * scale));
        }
        Tensor::from_vec(&[batch, g.h, g.w, g.cin], dx)
    }

    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.kernel, &mut self.bias]
    }

    fn params(&self) -> Vec<&Parameter> {
        vec![&self.kernel, &self.bias]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match &mut self.sn {
            Some(sn) => vec![
                (format!("{}.sn_u", self.kernel.name), &mut sn.u),
                (format!("{}.sn_sigma", self.kernel.name), &mut sn.sigma),
            ],
            None => Vec::new(),
        }
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        match &self.sn {
            Some(sn) => vec![
                (format!("{}.sn_u", self.kernel.name), &sn.u),
                (format!("{}.sn_sigma", self.kernel.name), &sn.sigma),
            ],
            None => Vec::new(),
        }
    }

    fn refresh_spectral_norm(&mut self) {
        if let Some(sn) = &mut self.sn {
            sn.refresh(&self.kernel.value);
        }
    }
}
