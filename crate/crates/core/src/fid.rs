//! Proxy-FID: Fréchet distance between Gaussians fitted to features of real and
//! generated images.
//!
//! The features come from a frozen, randomly initialized conv net (or from raw
//! pixel moments), so values are only comparable with other values from the
//! same extractor. They are not comparable with Inception-based FIDs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::gan::{Callback, GanModel, StepMetrics, Trainer};
use crate::nn::{AvgPool2x, Conv2d, Mode, Module, Relu};
use crate::tensor::Tensor;

/// Seed of the default frozen extractor.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0xF1D;
pub const DEFAULT_FEATURE_DIM: usize = 64;
pub const DEFAULT_REPEATS: usize = 3;

/// Eigenvalues down to `-EIGEN_TOLERANCE * max(1, lambda_max)` are treated as zero.
pub const EIGEN_TOLERANCE: f64 = 1e-10;
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;
/// Distances down to `-DISTANCE_TOLERANCE` are reported as zero.
pub const DISTANCE_TOLERANCE: f64 = 1e-6;

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    FrozenRandomConv,
    /// Per-channel mean and variance plus 4x4 block means; `18 * C` features.
    RawMoments,
}

impl ExtractorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "frozen_random_conv" => Some(ExtractorKind::FrozenRandomConv),
            "raw_moments" => Some(ExtractorKind::RawMoments),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExtractorKind::FrozenRandomConv => "frozen_random_conv",
            ExtractorKind::RawMoments => "raw_moments",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub seed: u64,
    /// Output width of the conv extractor; must be a multiple of 4.
    pub feature_dim: usize,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor {
            kind: ExtractorKind::FrozenRandomConv,
            seed: DEFAULT_EXTRACTOR_SEED,
            feature_dim: DEFAULT_FEATURE_DIM,
        }
    }
}

impl FeatureExtractor {
    pub fn raw_moments() -> Self {
        FeatureExtractor {
            kind: ExtractorKind::RawMoments,
            ..Self::default()
        }
    }

    /// Stage widths `d/4, d/2, d` of the conv extractor.
    fn widths(&self) -> Result<[usize; 3]> {
        let d = self.feature_dim;
        if d == 0 || !d.is_multiple_of(4) {
            return Err(Error::Parameter(format!("feature_dim must be a positive multiple of 4, got {d}")));
        }
        Ok([d / 4, d / 2, d])
    }

    /// The frozen conv stages for `channels` input channels.
    fn stages(&self, channels: usize) -> Result<Vec<Conv2d>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut cin = channels;
        let mut convs = Vec::new();
        for (i, w) in self.widths()?.into_iter().enumerate() {
            convs.push(Conv2d::new(&format!("fid.conv{i}"), 3, cin, w, 1, false, &mut rng)?);
            cin = w;
        }
        Ok(convs)
    }

    pub fn dim_for(&self, channels: usize) -> usize {
        match self.kind {
            ExtractorKind::FrozenRandomConv => self.feature_dim,
            ExtractorKind::RawMoments => 18 * channels,
        }
    }
}

/// One feature row per image, as an `[N, d]` matrix.
pub fn extract_features(extractor: &FeatureExtractor, images: &Tensor) -> Result<DMatrix<f64>> {
    let (n, h, w, c) = images.dims4()?;
    if n < 2 {
        return Err(Error::Parameter(format!("feature statistics need at least 2 images, got {n}")));
    }
    images.check_finite("images")?;
    let d = extractor.dim_for(c);
    let mut rows: Vec<f64> = Vec::with_capacity(n * d);
    match extractor.kind {
        ExtractorKind::RawMoments => {
            for img in images.data().chunks(h * w * c) {
                rows.extend(raw_moments(img, h, w, c));
            }
        }
        ExtractorKind::FrozenRandomConv => {
            let mut convs = extractor.stages(c)?;
            let mut start = 0;
            while start < n {
                let end = (start + CHUNK).min(n);
                let mut x = images.slice_batch(start, end)?;
                for conv in &mut convs {
                    x = conv.forward(x, Mode::Eval)?;
                    x = Relu::new().forward(x, Mode::Eval)?;
                    let (_, hh, ww, _) = x.dims4()?;
                    if hh % 2 == 0 && ww % 2 == 0 {
                        x = AvgPool2x::new().forward(x, Mode::Eval)?;
                    }
                }
                let (b, hh, ww, cc) = x.dims4()?;
                let area = (hh * ww) as f64;
                for sample in x.data().chunks(hh * ww * cc) {
                    let mut f = vec![0.0; cc];
                    for px in sample.chunks(cc) {
                        for (a, v) in f.iter_mut().zip(px) {
                            *a += v;
                        }
                    }
                    rows.extend(f.iter().map(|v| v / area));
                }
                debug_assert_eq!(b, end - start);
                start = end;
            }
        }
    }
    Ok(DMatrix::from_row_slice(n, d, &rows))
}

fn raw_moments(img: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let area = (h * w) as f64;
    let mut mean = vec![0.0; c];
    for px in img.chunks(c) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v / area;
        }
    }
    let mut var = vec![0.0; c];
    for px in img.chunks(c) {
        for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - m) * (v - m) / area;
        }
    }
    let mut out = mean;
    out.extend(var);
    for by in 0..4 {
        for bx in 0..4 {
            let (y0, y1) = (by * h / 4, ((by + 1) * h / 4).max(by * h / 4 + 1).min(h));
            let (x0, x1) = (bx * w / 4, ((bx + 1) * w / 4).max(bx * w / 4 + 1).min(w));
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let mut block = vec![0.0; c];
            for y in y0..y1 {
                for x in x0..x1 {
                    for (b, v) in block.iter_mut().zip(&img[(y * w + x) * c..(y * w + x + 1) * c]) {
                        *b += v;
                    }
                }
            }
            out.extend(block.iter().map(|v| v / count));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Column means and the unbiased (N-1) sample covariance, symmetrized.
pub fn fit_gaussian(features: &DMatrix<f64>) -> Result<GaussianStats> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Parameter(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mu = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mu, cov })
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrtm_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(shape_err!("sqrtm needs a square matrix, got {}x{}", a.nrows(), a.ncols()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sqrtm input is not finite".into()));
    }
    let magnitude = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * magnitude {
        return Err(Error::Numeric(format!("matrix is not symmetric (max |A - A^T| = {asym:.3e})")));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.max().max(1.0);
    let floor = -EIGEN_TOLERANCE * top;
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < floor {
            return Err(Error::Numeric(format!("matrix is indefinite: eigenvalue {v:.3e}")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `|mu_a - mu_b|^2 + tr(C_a + C_b - 2 (C_a^1/2 C_b C_a^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.nrows() != a.dim() || b.cov.nrows() != b.dim() {
        return Err(shape_err!("Fréchet distance between {}-d and {}-d statistics", a.dim(), b.dim()));
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let root_a = sqrtm_spd(&a.cov)?;
    let product = &root_a * &b.cov * &root_a;
    let product = (&product + product.transpose()) * 0.5;
    let cross = sqrtm_spd(&product)?.trace();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numeric("Fréchet distance is not finite".into()));
    }
    if d < -DISTANCE_TOLERANCE {
        return Err(Error::Numeric(format!("Fréchet distance {d:.3e} is negative beyond tolerance")));
    }
    Ok(d.max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidReport {
    /// One value per repeat, in repeat order.
    pub values: Vec<f64>,
    pub mean: f64,
}

/// Proxy-FID of `sample(n, seed ^ r)` against `real` for each repeat `r`.
pub fn evaluate_fid_with(
    mut sample: impl FnMut(usize, u64) -> Result<Tensor>,
    extractor: &FeatureExtractor,
    real: &Tensor,
    n_repeats: usize,
    seed: u64,
) -> Result<FidReport> {
    if n_repeats == 0 {
        return Err(Error::Parameter("at least one FID repeat is required".into()));
    }
    let real_stats = fit_gaussian(&extract_features(extractor, real)?)?;
    let n = real.batch();
    let mut values = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let fake = sample(n, seed ^ r as u64)?;
        fake.ensure_shape(real.shape())?;
        let stats = fit_gaussian(&extract_features(extractor, &fake)?)?;
        values.push(frechet_distance(&real_stats, &stats)?);
    }
    let mean = values.iter().sum::<f64>() / n_repeats as f64;
    Ok(FidReport { values, mean })
}

/// Proxy-FID of the generator against `real`, generating `|real|` images per repeat.
/// Residual-mode models perturb `real` itself.
pub fn evaluate_fid(
    model: &GanModel,
    extractor: &FeatureExtractor,
    real: &Tensor,
    n_repeats: usize,
    seed: u64,
) -> Result<FidReport> {
    evaluate_fid_with(|n, s| model.sample(n, s, Some(real)), extractor, real, n_repeats, seed)
}

/// Fills `proxy_fid` in the step metrics every `every` steps.
pub struct ProxyFidCallback {
    pub every: u64,
    pub extractor: FeatureExtractor,
    pub real: Tensor,
    pub repeats: usize,
    pub seed: u64,
    pub history: Vec<(u64, FidReport)>,
}

impl ProxyFidCallback {
    pub fn new(every: u64, real: Tensor, repeats: usize, seed: u64) -> Self {
        ProxyFidCallback {
            every,
            extractor: FeatureExtractor::default(),
            real,
            repeats,
            seed,
            history: Vec::new(),
        }
    }
}

impl Callback for ProxyFidCallback {
    fn after_step(&mut self, trainer: &Trainer, metrics: &mut StepMetrics) -> Result<()> {
        if self.every == 0 || !metrics.step.is_multiple_of(self.every) {
            return Ok(());
        }
        let report = evaluate_fid(&trainer.model, &self.extractor, &self.real, self.repeats, self.seed)?;
        metrics.proxy_fid = Some(report.mean);
        self.history.push((metrics.step, report));
        Ok(())
    }
}
