//! The `WGC1` tensor container and full training checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "WGC1" | version u32 | count u32 | count x tensor
//! tensor = name_len u16 | name (UTF-8) | rank u8 | dims u32 x rank | values f64 x prod(dims)
//! ```
//!
//! A checkpoint stores every parameter with its Adam moments (`<name>#m`,
//! `<name>#v`, `<name>#t`), the non-learnable buffers (batch-norm running
//! statistics, spectral-norm vectors), and `meta.*` entries for the run
//! configuration, step, RNG position, data order and counters. Integers are
//! stored as exact `f64` values, 64-bit ones split into 16-bit chunks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{atomic_write, read_file, Dataset, RunConfig};
use crate::error::{Error, Result};
use crate::gan::{Callback, GanModel, ProtocolCounters, StepMetrics, Trainer};
use crate::nn::Module;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WGC1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Parameter("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Parameter(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Parameter(format!("{name}: rank too large")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Parameter(format!("{name}: dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("file truncated while reading {what} at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "not a WGC1 checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.take(2, "name length")?;
        let len = u16::from_le_bytes([len[0], len[1]]) as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::format((at + 2) as u64, "tensor name is not UTF-8"))?
            .to_string();
        if seen.insert(name.clone(), ()).is_some() {
            return Err(Error::format(at as u64, format!("duplicate tensor {name:?}")));
        }
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let dim_at = r.pos;
            let d = r.u32("dimensions")? as usize;
            n = n
                .checked_mul(d)
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| Error::format(dim_at as u64, format!("{name}: dimensions overflow")))?;
            shape.push(d);
        }
        let payload = r.take(n * 8, "tensor values")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "unexpected bytes after the last tensor"));
    }
    Ok(out)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    atomic_write(path.as_ref(), &encode_tensors(tensors)?)
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode_tensors(&read_file(path.as_ref())?)
}

/// Loads `images` (`[N, H, W, C]`) and optional `labels` / `n_classes` tensors.
pub fn load_tensor_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut map: HashMap<String, Tensor> = read_tensors(path)?.into_iter().collect();
    let images = map
        .remove("images")
        .ok_or_else(|| Error::Parameter(format!("{} has no `images` tensor", path.display())))?;
    let labels = map.remove("labels").map(|t| t.data().iter().map(|&v| v as usize).collect::<Vec<_>>());
    let n_classes = match map.remove("n_classes") {
        Some(t) => t.data()[0] as usize,
        None => labels.as_ref().and_then(|l| l.iter().max()).map_or(1, |m| m + 1),
    };
    Dataset::new(images, labels, n_classes, &path.display().to_string(), "all")
}

fn u64_chunks(v: u64) -> Vec<f64> {
    (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f64).collect()
}

fn chunks_u64(c: &[f64]) -> u64 {
    c.iter().enumerate().map(|(i, &v)| (v as u64) << (16 * i)).sum()
}

fn vector(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::from_vec(&[n], values).expect("rank-1 tensor")
}

/// A training run frozen between steps.
pub struct Checkpoint {
    pub config: RunConfig,
    pub trainer: Trainer,
}

fn state_tensors(trainer: &Trainer, config: &RunConfig) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    let model = &trainer.model;
    for stack in [&model.generator, &model.discriminator] {
        for p in stack.params() {
            out.push((p.name.clone(), p.value.clone()));
            out.push((format!("{}#m", p.name), p.adam.m.clone()));
            out.push((format!("{}#v", p.name), p.adam.v.clone()));
            out.push((format!("{}#t", p.name), vector(u64_chunks(p.adam.t))));
        }
        for (name, b) in stack.buffers() {
            out.push((name, b.clone()));
        }
    }
    let text = config.to_text();
    out.push(("meta.config".into(), vector(text.bytes().map(f64::from).collect())));
    out.push(("meta.model_seed".into(), vector(u64_chunks(model.seed))));
    out.push(("meta.step".into(), vector(u64_chunks(trainer.step))));
    let rng = &trainer.rng;
    let mut rng_state: Vec<f64> = rng.get_seed().iter().map(|&b| f64::from(b)).collect();
    rng_state.extend(u64_chunks(rng.get_stream()));
    let pos = rng.get_word_pos();
    rng_state.extend(u64_chunks(pos as u64));
    rng_state.extend(u64_chunks((pos >> 64) as u64));
    out.push(("meta.rng".into(), vector(rng_state)));
    out.push(("meta.order".into(), vector(trainer.order.iter().map(|&i| i as f64).collect())));
    out.push(("meta.cursor".into(), vector(vec![trainer.cursor as f64])));
    let c = &trainer.counters;
    let mut counters = Vec::new();
    for v in [c.d_updates, c.g_updates, c.real_samples, c.noise_samples] {
        counters.extend(u64_chunks(v));
    }
    counters.extend([
        c.last_real_batch as f64,
        c.last_noise_shape.0 as f64,
        c.last_noise_shape.1 as f64,
        c.last_lr,
    ]);
    out.push(("meta.counters".into(), vector(counters)));
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, trainer: &Trainer, config: &RunConfig) -> Result<()> {
    write_tensors(path, &state_tensors(trainer, config))
}

fn decode_state(tensors: Vec<(String, Tensor)>) -> Result<Checkpoint> {
    let mut map: HashMap<String, Tensor> = tensors.into_iter().collect();
    let mut take = |name: &str| -> Result<Tensor> {
        map.remove(name)
            .ok_or_else(|| Error::Parameter(format!("checkpoint lacks tensor {name:?}")))
    };
    let meta_len = |t: &Tensor, n: usize, name: &str| -> Result<()> {
        if t.len() == n {
            Ok(())
        } else {
            Err(Error::Parameter(format!("checkpoint tensor {name} has {} values, expected {n}", t.len())))
        }
    };
    let text: String = take("meta.config")?.data().iter().map(|&b| b as u8 as char).collect();
    let config = RunConfig::parse_str(&text)?;
    let seed_t = take("meta.model_seed")?;
    meta_len(&seed_t, 4, "meta.model_seed")?;
    let mut model = GanModel::new(config.arch.clone(), chunks_u64(seed_t.data()))?;
    for stack in [&mut model.generator, &mut model.discriminator] {
        for p in stack.params_mut() {
            let value = take(&p.name)?;
            let m = take(&format!("{}#m", p.name))?;
            let v = take(&format!("{}#v", p.name))?;
            let t = take(&format!("{}#t", p.name))?;
            for x in [&value, &m, &v] {
                x.ensure_shape(p.value.shape())?;
            }
            meta_len(&t, 4, &p.name)?;
            p.value = value;
            p.adam.m = m;
            p.adam.v = v;
            p.adam.t = chunks_u64(t.data());
            p.zero_grad();
        }
        for (name, b) in stack.buffers_mut() {
            let stored = take(&name)?;
            stored.ensure_shape(b.shape())?;
            *b = stored;
        }
        stack.after_update();
    }
    let step_t = take("meta.step")?;
    meta_len(&step_t, 4, "meta.step")?;
    let rng_t = take("meta.rng")?;
    meta_len(&rng_t, 32 + 4 + 8, "meta.rng")?;
    let r = rng_t.data();
    let mut seed = [0u8; 32];
    for (s, &v) in seed.iter_mut().zip(&r[..32]) {
        *s = v as u8;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(chunks_u64(&r[32..36]));
    rng.set_word_pos(u128::from(chunks_u64(&r[36..40])) | (u128::from(chunks_u64(&r[40..44])) << 64));
    let order: Vec<usize> = take("meta.order")?.data().iter().map(|&v| v as usize).collect();
    let cursor = take("meta.cursor")?.data()[0] as usize;
    if cursor > order.len() {
        return Err(Error::Parameter("checkpoint data cursor past the end of the order".into()));
    }
    let c = take("meta.counters")?;
    meta_len(&c, 20, "meta.counters")?;
    let c = c.data();
    let counters = ProtocolCounters {
        d_updates: chunks_u64(&c[0..4]),
        g_updates: chunks_u64(&c[4..8]),
        real_samples: chunks_u64(&c[8..12]),
        noise_samples: chunks_u64(&c[12..16]),
        last_real_batch: c[16] as usize,
        last_noise_shape: (c[17] as usize, c[18] as usize),
        last_lr: c[19],
    };
    if let Some(extra) = map.keys().next() {
        return Err(Error::Parameter(format!("checkpoint has unexpected tensor {extra:?}")));
    }
    let trainer = Trainer {
        model,
        cfg: config.train.clone(),
        step: chunks_u64(step_t.data()),
        counters,
        rng,
        order,
        cursor,
    };
    Ok(Checkpoint { config, trainer })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_state(read_tensors(path)?)
}

/// Saves `checkpoint_<step>.wgc` every `every` steps.
pub struct CheckpointCallback {
    pub dir: PathBuf,
    pub every: u64,
    pub config: RunConfig,
}

impl CheckpointCallback {
    pub fn path_for(dir: &Path, step: u64) -> PathBuf {
        dir.join(format!("checkpoint_{step:06}.wgc"))
    }
}

impl Callback for CheckpointCallback {
    fn after_step(&mut self, trainer: &Trainer, metrics: &mut StepMetrics) -> Result<()> {
        if self.every == 0 || !metrics.step.is_multiple_of(self.every) {
            return Ok(());
        }
        let path = Self::path_for(&self.dir, metrics.step);
        save_checkpoint(path, trainer, &self.config)
    }
}
