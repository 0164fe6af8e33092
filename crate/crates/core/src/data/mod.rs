//! Datasets and on-disk formats.

mod checkpoint;
mod config;
mod idx;
mod image;
mod metrics;
mod synthetic;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, load_tensor_dataset, read_tensors, save_checkpoint,
    write_tensors, Checkpoint, CheckpointCallback, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{RunConfig, CONFIG_KEYS};
pub use idx::{load_idx_images, load_idx_labels, parse_idx_images, parse_idx_labels};
pub use image::{encode_image_grid, parse_pnm, save_image_grid, SampleGridCallback};
pub use metrics::{metrics_header, MetricsCsv};
pub use synthetic::{synthetic_shapes, SHAPE_CLASSES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images in `[0, 1]`, `[N, H, W, C]`, with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
    pub n_classes: usize,
    pub name: String,
    pub split: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Option<Vec<usize>>, n_classes: usize, name: &str, split: &str) -> Result<Self> {
        images.dims4()?;
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("image value {v} outside [0, 1]")));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.batch() {
                return Err(Error::Parameter(format!(
                    "{} labels for {} images",
                    labels.len(),
                    images.batch()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
                return Err(Error::Parameter(format!("label {bad} out of range for {n_classes} classes")));
            }
        }
        Ok(Dataset {
            images,
            labels,
            n_classes,
            name: name.to_string(),
            split: split.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-image `[H, W, C]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// The first `n` images as one dataset and the rest as another.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::Parameter(format!("cannot split {} images at {n}", self.len())));
        }
        let part = |a: usize, b: usize, split: &str| -> Result<Dataset> {
            Ok(Dataset {
                images: self.images.slice_batch(a, b)?,
                labels: self.labels.as_ref().map(|l| l[a..b].to_vec()),
                n_classes: self.n_classes,
                name: self.name.clone(),
                split: split.to_string(),
            })
        };
        Ok((part(0, n, "train")?, part(n, self.len(), "test")?))
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
