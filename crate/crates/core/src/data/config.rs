//! `key = value` run configuration with `#` comments.
//!
//! Every key is optional; unknown keys and unparsable values are errors that
//! name the offending line. Command-line overrides use the same syntax and are
//! applied after the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gan::{ArchConfig, GenMode, LossKind, ScaleUpdate, TrainConfig, Variant};
use crate::wavelet::Envelope;
use crate::wavelet_deconv::WaveletDeconvLayer;

/// Recognized keys, in the order [`RunConfig::to_text`] writes them.
pub const CONFIG_KEYS: &[&str] = &[
    "variant",
    "base_width",
    "disc_width",
    "z_dim",
    "wavelet",
    "wavelet_channels",
    "wavelet_K",
    "sigma",
    "wavelet_envelope",
    "scales",
    "mode",
    "residual_alpha",
    "conditional",
    "n_classes",
    "batch",
    "n_disc",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "loss",
    "scale_update",
    "scale_lr",
    "steps",
    "seed",
    "checkpoint_every",
    "sample_every",
    "fid_every",
    "fid_repeats",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub sample_every: u64,
    /// Proxy-FID evaluation period in steps; 0 disables it.
    pub fid_every: u64,
    pub fid_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            steps: 2000,
            seed: 0,
            checkpoint_every: 500,
            sample_every: 500,
            fid_every: 0,
            fid_repeats: 3,
        }
    }
}

/// Where a setting came from, for error messages.
#[derive(Clone, Copy)]
enum Origin {
    Line(usize),
    Override(usize),
}

impl Origin {
    fn err(self, message: String) -> Error {
        match self {
            Origin::Line(n) => Error::config(n, message),
            Origin::Override(n) => Error::config(0, format!("override #{n}: {message}")),
        }
    }
}

fn split_entry(text: &str, origin: Origin) -> Result<Option<(String, String)>> {
    let body = text.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let (k, v) = body
        .split_once('=')
        .ok_or_else(|| origin.err(format!("expected `key = value`, got {body:?}")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(origin.err("missing key".into()));
    }
    Ok(Some((k.to_string(), v.to_string())))
}

#[derive(Default)]
struct Explicit {
    disc_width: bool,
    scales: Option<Origin>,
    scale_lr: bool,
    loss: bool,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, origin: Origin) -> Result<T> {
    value
        .parse()
        .map_err(|_| origin.err(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str, origin: Origin) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(origin.err(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn positive<T: PartialOrd + Default + std::str::FromStr>(key: &str, value: &str, origin: Origin) -> Result<T> {
    let v: T = parse_num(key, value, origin)?;
    if v > T::default() {
        Ok(v)
    } else {
        Err(origin.err(format!("{key} must be positive, got {value}")))
    }
}

fn positive_f64(key: &str, value: &str, origin: Origin) -> Result<f64> {
    let v: f64 = parse_num(key, value, origin)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(origin.err(format!("{key} must be positive and finite, got {value}")))
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::build(text, &[])
    }

    pub fn parse_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// File contents followed by `key=value` overrides.
    pub fn build(text: &str, overrides: &[String]) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(kv) = split_entry(line, Origin::Line(i + 1))? {
                entries.push((kv, Origin::Line(i + 1)));
            }
        }
        for (i, o) in overrides.iter().enumerate() {
            match split_entry(o, Origin::Override(i + 1))? {
                Some(kv) => entries.push((kv, Origin::Override(i + 1))),
                None => return Err(Origin::Override(i + 1).err("empty override".into())),
            }
        }
        let mut cfg = RunConfig::default();
        let mut explicit = Explicit::default();
        for ((k, v), origin) in &entries {
            cfg.set(k, v, *origin, &mut explicit)?;
        }
        if !explicit.disc_width {
            cfg.arch.disc_width = cfg.arch.base_width;
        }
        // The wavelet-free baseline trains with the minimax loss unless told otherwise.
        if !explicit.loss && !cfg.arch.wavelet_enabled {
            cfg.train.loss = LossKind::Minimax;
        }
        if !explicit.scale_lr {
            cfg.train.scale_lr = cfg.train.lr;
        }
        match explicit.scales {
            None => cfg.arch.wavelet_scales = WaveletDeconvLayer::dyadic_scales(cfg.arch.wavelet_channels),
            Some(origin) if cfg.arch.wavelet_scales.len() != cfg.arch.wavelet_channels => {
                return Err(origin.err(format!(
                    "{} scales given but wavelet_channels = {}",
                    cfg.arch.wavelet_scales.len(),
                    cfg.arch.wavelet_channels
                )))
            }
            Some(_) => {}
        }
        cfg.arch.validate().map_err(|e| Error::config(0, e.to_string()))?;
        cfg.train.validate().map_err(|e| Error::config(0, e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, origin: Origin, explicit: &mut Explicit) -> Result<()> {
        let arch = &mut self.arch;
        let train = &mut self.train;
        match key {
            "variant" => {
                arch.variant = Variant::parse(value)
                    .ok_or_else(|| origin.err(format!("unknown variant {value:?} (mnist28 or rgb32)")))?
            }
            "base_width" => arch.base_width = positive(key, value, origin)?,
            "disc_width" => {
                arch.disc_width = positive(key, value, origin)?;
                explicit.disc_width = true;
            }
            "z_dim" => arch.z_dim = positive(key, value, origin)?,
            "wavelet" => arch.wavelet_enabled = parse_bool(key, value, origin)?,
            "wavelet_channels" => {
                let c: usize = parse_num(key, value, origin)?;
                if c == 0 {
                    return Err(origin.err("wavelet_channels must be at least 1".into()));
                }
                arch.wavelet_channels = c;
            }
            "wavelet_K" => {
                let k: usize = parse_num(key, value, origin)?;
                if k < 3 || k.is_multiple_of(2) {
                    return Err(origin.err(format!("wavelet_K must be odd and at least 3, got {k}")));
                }
                arch.wavelet_kernel = k;
            }
            "sigma" => arch.wavelet_sigma = positive_f64(key, value, origin)?,
            "wavelet_envelope" => {
                arch.wavelet_envelope = Envelope::parse(value)
                    .ok_or_else(|| origin.err(format!("unknown envelope {value:?} (ricker or narrow)")))?
            }
            "scales" => {
                arch.wavelet_scales = value
                    .split(',')
                    .map(|s| positive_f64(key, s.trim(), origin))
                    .collect::<Result<_>>()?;
                explicit.scales = Some(origin);
            }
            "mode" => {
                arch.mode = GenMode::parse(value)
                    .ok_or_else(|| origin.err(format!("unknown mode {value:?} (direct or residual)")))?
            }
            "residual_alpha" => {
                arch.residual_alpha = parse_num(key, value, origin)?;
                if !arch.residual_alpha.is_finite() {
                    return Err(origin.err("residual_alpha must be finite".into()));
                }
            }
            "conditional" => arch.conditional = parse_bool(key, value, origin)?,
            "n_classes" => arch.n_classes = positive(key, value, origin)?,
            "batch" => {
                let b: usize = parse_num(key, value, origin)?;
                if b < 2 {
                    return Err(origin.err(format!("batch must be at least 2, got {b}")));
                }
                train.batch = b;
            }
            "n_disc" => train.n_disc = positive(key, value, origin)?,
            "lr" => train.lr = positive_f64(key, value, origin)?,
            "beta1" | "beta2" => {
                let b: f64 = parse_num(key, value, origin)?;
                if !(0.0..1.0).contains(&b) {
                    return Err(origin.err(format!("{key} must lie in [0, 1), got {value}")));
                }
                if key == "beta1" {
                    train.adam.beta1 = b;
                } else {
                    train.adam.beta2 = b;
                }
            }
            "adam_eps" => train.adam.epsilon = positive_f64(key, value, origin)?,
            "loss" => {
                train.loss = LossKind::parse(value)
                    .ok_or_else(|| origin.err(format!("unknown loss {value:?} (hinge or minimax)")))?;
                explicit.loss = true;
            }
            "scale_update" => {
                train.scale_update = ScaleUpdate::parse(value)
                    .ok_or_else(|| origin.err(format!("unknown scale_update {value:?} (adam or sgd)")))?
            }
            "scale_lr" => {
                train.scale_lr = positive_f64(key, value, origin)?;
                explicit.scale_lr = true;
            }
            "steps" => self.steps = parse_num(key, value, origin)?,
            "seed" => self.seed = parse_num(key, value, origin)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value, origin)?,
            "sample_every" => self.sample_every = parse_num(key, value, origin)?,
            "fid_every" => self.fid_every = parse_num(key, value, origin)?,
            "fid_repeats" => self.fid_repeats = positive(key, value, origin)?,
            _ => return Err(origin.err(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value; parsing the text gives back `self`.
    pub fn to_text(&self) -> String {
        let a = &self.arch;
        let t = &self.train;
        let scales: Vec<String> = a.wavelet_scales.iter().map(|s| s.to_string()).collect();
        let values: Vec<String> = vec![
            a.variant.as_str().into(),
            a.base_width.to_string(),
            a.disc_width.to_string(),
            a.z_dim.to_string(),
            a.wavelet_enabled.to_string(),
            a.wavelet_channels.to_string(),
            a.wavelet_kernel.to_string(),
            a.wavelet_sigma.to_string(),
            a.wavelet_envelope.as_str().into(),
            scales.join(","),
            a.mode.as_str().into(),
            a.residual_alpha.to_string(),
            a.conditional.to_string(),
            a.n_classes.to_string(),
            t.batch.to_string(),
            t.n_disc.to_string(),
            t.lr.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.adam.epsilon.to_string(),
            t.loss.as_str().into(),
            t.scale_update.as_str().into(),
            t.scale_lr.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.checkpoint_every.to_string(),
            self.sample_every.to_string(),
            self.fid_every.to_string(),
            self.fid_repeats.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(e: Error) -> usize {
        match e {
            Error::Config { line, .. } => line,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_gives_defaults() {
        let c = RunConfig::parse_str("").unwrap();
        assert_eq!(c.train.batch, 64);
        assert_eq!(c.arch.z_dim, 128);
        assert_eq!(c.train.n_disc, 5);
        assert_eq!(c.train.lr, 0.0002);
        assert_eq!(c.arch.wavelet_channels, 5);
        assert_eq!(c.arch.wavelet_kernel, 9);
        assert_eq!(c.arch.wavelet_sigma, 1.0);
        assert_eq!(c.arch.wavelet_scales, vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        assert_eq!(c.steps, 2000);
        assert_eq!(c.arch.base_width, 32);
        assert_eq!(c.train.loss, LossKind::Hinge);
        assert_eq!(c.arch.mode, GenMode::Direct);
    }

    #[test]
    fn baseline_loss_default() {
        let c = RunConfig::parse_str("wavelet = false").unwrap();
        assert_eq!(c.train.loss, LossKind::Minimax);
        let c = RunConfig::parse_str("wavelet = false\nloss = hinge").unwrap();
        assert_eq!(c.train.loss, LossKind::Hinge);
        assert_eq!(RunConfig::parse_str(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors_name_lines() {
        let c = RunConfig::parse_str("# header\nbatch = 64  # default value\n\nbase_width=16\n").unwrap();
        assert_eq!(c.train.batch, 64);
        assert_eq!(c.arch.disc_width, 16);
        assert_eq!(line_of(RunConfig::parse_str("\n\nbatchsize = 3").unwrap_err()), 3);
        assert_eq!(line_of(RunConfig::parse_str("lr = fast").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("z_dim = 1\nwavelet_channels = 0").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse_str("just words").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("scales = 1,2\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("variant = svhn").unwrap_err()), 1);
    }

    #[test]
    fn channels_follow_scales() {
        let c = RunConfig::parse_str("wavelet_channels = 3").unwrap();
        assert_eq!(c.arch.wavelet_scales, vec![1.0, 2.0, 4.0]);
        let c = RunConfig::parse_str("wavelet_channels = 2\nscales = 0.5, 3").unwrap();
        assert_eq!(c.arch.wavelet_scales, vec![0.5, 3.0]);
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::build("steps = 10", &["steps=20".into(), "lr = 0.001".into()]).unwrap();
        assert_eq!(c.steps, 20);
        assert_eq!(c.train.scale_lr, 0.001);
        let e = RunConfig::build("", &["nope=1".into()]).unwrap_err();
        assert!(e.to_string().contains("override #1"));
    }

    #[test]
    fn text_roundtrip() {
        let c = RunConfig::build(
            "variant = rgb32\nlr = 0.00031\nscales = 1.5,2.25\nwavelet_channels = 2\nconditional = true\nn_classes = 3\nwavelet_envelope = narrow",
            &[],
        )
        .unwrap();
        let back = RunConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::parse_str(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }
}
