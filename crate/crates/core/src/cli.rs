//! The `waveletgan` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_checkpoint, load_idx_images, load_idx_labels, load_tensor_dataset, read_tensors, save_image_grid,
    synthetic_shapes, CheckpointCallback, Dataset, MetricsCsv, RunConfig, SampleGridCallback,
};
use crate::error::{Error, Result};
use crate::fid::{evaluate_fid, ExtractorKind, FeatureExtractor, ProxyFidCallback};
use crate::gan::{train, Callback, GanModel, StepMetrics, Trainer};
use crate::gradcheck::{check_generator_scale_gradient, run_suite};

#[derive(Parser)]
#[command(name = "waveletgan", version, about = "Wavelet-homogenized GAN training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoints, metrics.csv and sample grids to --out.
    Train(TrainArgs),
    /// Write an image grid generated from a checkpoint.
    Sample(SampleArgs),
    /// Proxy-FID of a checkpoint against a real image set.
    Fid(FidArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the tensors, step and wavelet scales stored in a checkpoint.
    Inspect {
        checkpoint: PathBuf,
    },
}

#[derive(Args, Default)]
struct DataArgs {
    /// IDX image file (magic 0x00000803).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file matching --images.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Tensor file in checkpoint format with an `images` tensor.
    #[arg(long, conflicts_with_all = ["images", "synthetic"])]
    tensors: Option<PathBuf>,
    /// Generate this many synthetic shape images instead of reading files.
    #[arg(long, conflicts_with = "images")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Hold out the last N images as the proxy-FID reference set.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long, conflicts_with_all = ["config", "overrides", "seed"])]
    resume: Option<PathBuf>,
    /// Print a progress line every N steps (0 = never).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base images for residual-mode models.
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct FidArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// frozen_random_conv or raw_moments.
    #[arg(long, default_value = "frozen_random_conv")]
    extractor: String,
    /// Use only the first N real images.
    #[arg(long, conflicts_with = "holdout")]
    limit: Option<usize>,
    /// Use only the last N real images, matching `train --holdout N`.
    #[arg(long)]
    holdout: Option<usize>,
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 on usage
/// errors, 1 on runtime failures.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Sample(a) => run_sample(a),
        Command::Fid(a) => run_fid(a),
        Command::Gradcheck { seed } => run_gradcheck(seed),
        Command::Inspect { checkpoint } => run_inspect(&checkpoint),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config { .. }) {
                2
            } else {
                1
            }
        }
    }
}

fn load_data(args: &DataArgs, cfg: &RunConfig) -> Result<Option<Dataset>> {
    if let Some(path) = &args.tensors {
        return load_tensor_dataset(path).map(Some);
    }
    if let Some(path) = &args.images {
        let images = load_idx_images(path)?;
        let labels = args.labels.as_ref().map(load_idx_labels).transpose()?;
        let n_classes = labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(1, |m| m + 1)
            .max(if cfg.arch.conditional { cfg.arch.n_classes } else { 1 });
        return Dataset::new(images, labels, n_classes, &path.display().to_string(), "all").map(Some);
    }
    if let Some(n) = args.synthetic {
        let v = cfg.arch.variant;
        return synthetic_shapes(n, v.image_size(), v.image_channels(), args.data_seed).map(Some);
    }
    Ok(None)
}

fn require_data(args: &DataArgs, cfg: &RunConfig) -> Result<Dataset> {
    let data = load_data(args, cfg)?
        .ok_or_else(|| Error::config(0, "no dataset: pass --images, --tensors or --synthetic"))?;
    let want = cfg.arch.image_shape();
    if data.image_shape() != want {
        return Err(Error::Parameter(format!(
            "dataset images are {:?} but the {} variant needs {:?}",
            data.image_shape(),
            cfg.arch.variant.as_str(),
            want
        )));
    }
    if cfg.arch.conditional {
        if data.labels.is_none() {
            return Err(Error::Parameter("conditional training needs labels".into()));
        }
        if data.n_classes > cfg.arch.n_classes {
            return Err(Error::Parameter(format!(
                "dataset has {} classes but n_classes = {}",
                data.n_classes, cfg.arch.n_classes
            )));
        }
    }
    Ok(data)
}

struct Progress {
    every: u64,
}

impl Callback for Progress {
    fn after_step(&mut self, _trainer: &Trainer, m: &mut StepMetrics) -> Result<()> {
        if self.every > 0 && m.step.is_multiple_of(self.every) {
            let fid = m.proxy_fid.map(|v| format!(" proxy_fid {v:.4}")).unwrap_or_default();
            println!(
                "step {} d_loss {:.5} g_loss {:.5}{fid} scales {:?}",
                m.step, m.d_loss, m.g_loss, m.scales
            );
        }
        Ok(())
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn run_train(a: TrainArgs) -> Result<i32> {
    let (config, resumed) = match &a.resume {
        Some(path) => {
            let mut ck = load_checkpoint(path)?;
            if let Some(steps) = a.steps {
                ck.config.steps = steps;
            }
            (ck.config, Some(ck.trainer))
        }
        None => {
            let text = match &a.config {
                Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                None => String::new(),
            };
            let mut overrides = a.overrides.clone();
            if let Some(s) = a.steps {
                overrides.push(format!("steps={s}"));
            }
            if let Some(s) = a.seed {
                overrides.push(format!("seed={s}"));
            }
            (RunConfig::build(&text, &overrides)?, None)
        }
    };
    let data = require_data(&a.data, &config)?;
    let (train_set, reference) = if a.holdout > 0 {
        data.split_at(data.len().saturating_sub(a.holdout))?
    } else {
        (data.clone(), data)
    };
    if train_set.len() < config.train.batch {
        return Err(Error::Parameter(format!(
            "{} training images is fewer than one batch of {}",
            train_set.len(),
            config.train.batch
        )));
    }
    let is_resume = resumed.is_some();
    let mut trainer = match resumed {
        Some(t) if t.order.len() != train_set.len() => {
            return Err(Error::State(format!(
                "checkpoint was trained on {} images, this dataset has {}",
                t.order.len(),
                train_set.len()
            )))
        }
        Some(t) => t,
        None => Trainer::new(
            GanModel::new(config.arch.clone(), config.seed)?,
            config.train.clone(),
            train_set.len(),
        )?,
    };

    create_dir(&a.out)?;
    let config_path = a.out.join("config.txt");
    std::fs::write(&config_path, config.to_text()).map_err(|e| Error::io(&config_path, e))?;
    let n_scales = trainer.model.wavelet_scales().len();
    let csv_path = a.out.join("metrics.csv");
    let mut csv = if is_resume && csv_path.exists() {
        MetricsCsv::resume(&csv_path, n_scales, trainer.step)?
    } else {
        MetricsCsv::create(&csv_path, n_scales)?
    };
    let mut fid = ProxyFidCallback::new(config.fid_every, reference.images.clone(), config.fid_repeats, config.seed);
    let mut checkpoints = CheckpointCallback {
        dir: a.out.clone(),
        every: config.checkpoint_every,
        config: config.clone(),
    };
    let mut samples = SampleGridCallback {
        dir: a.out.clone(),
        every: config.sample_every,
        rows: 8,
        cols: 8,
        seed: config.seed,
        real: Some(reference.images.slice_batch(0, reference.len().min(64))?),
    };
    let mut progress = Progress { every: a.log_every };
    let mut callbacks: [&mut dyn Callback; 5] = [&mut fid, &mut csv, &mut checkpoints, &mut samples, &mut progress];
    let history = train(&mut trainer, &train_set, config.steps, &mut callbacks)?;
    let final_path = a.out.join("final.wgc");
    crate::data::save_checkpoint(&final_path, &trainer, &config)?;
    println!(
        "trained {} steps (now at step {}); checkpoint {}",
        history.len(),
        trainer.step,
        final_path.display()
    );
    Ok(0)
}

fn run_sample(a: SampleArgs) -> Result<i32> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let real = load_data(&a.data, &ck.config)?.map(|d| d.images);
    let images = ck.trainer.model.sample(a.rows * a.cols, a.seed, real.as_ref())?;
    save_image_grid(&images, a.rows, a.cols, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(0)
}

fn run_fid(a: FidArgs) -> Result<i32> {
    let kind = ExtractorKind::parse(&a.extractor)
        .ok_or_else(|| Error::config(0, format!("unknown extractor {:?}", a.extractor)))?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let data = require_data(&a.data, &ck.config)?;
    let real = match (a.limit, a.holdout) {
        (Some(n), _) => data.images.slice_batch(0, n.min(data.len()))?,
        (None, Some(n)) => data.images.slice_batch(data.len().saturating_sub(n), data.len())?,
        (None, None) => data.images,
    };
    let extractor = FeatureExtractor {
        kind,
        ..FeatureExtractor::default()
    };
    let report = evaluate_fid(&ck.trainer.model, &extractor, &real, a.repeats, a.seed)?;
    println!("proxy-FID ({}, {} real images, step {})", kind.as_str(), real.batch(), ck.trainer.step);
    for (r, v) in report.values.iter().enumerate() {
        println!("repeat {r}: {v}");
    }
    println!("mean: {}", report.mean);
    Ok(0)
}

fn run_gradcheck(seed: u64) -> Result<i32> {
    let mut results = run_suite(seed)?;
    results.push(check_generator_scale_gradient(seed, crate::gan::LossKind::Hinge)?);
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<28} max rel err {:.3e} (tol {:.0e}, {} entries) {status}",
            r.op, r.max_rel_error, r.tolerance, r.entries
        );
        failed += usize::from(!r.passed());
    }
    println!("{} ops, {failed} failed", results.len());
    Ok(if failed == 0 { 0 } else { 1 })
}

fn run_inspect(path: &Path) -> Result<i32> {
    for (name, t) in read_tensors(path)? {
        if name == "meta.config" {
            continue;
        }
        println!("{name:<40} {:?}", t.shape());
    }
    let ck = load_checkpoint(path)?;
    println!("step: {}", ck.trainer.step);
    println!("model seed: {}", ck.trainer.model.seed);
    println!("parameters: {}", ck.trainer.model.parameter_count());
    match ck.trainer.model.wavelet() {
        Some(w) => println!("wavelet scales: {:?}", w.scale_values()),
        None => println!("wavelet: disabled"),
    }
    println!("config:\n{}", ck.config.to_text());
    Ok(0)
}
