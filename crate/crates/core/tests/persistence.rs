use waveletgan::data::{load_checkpoint, save_checkpoint, synthetic_shapes, RunConfig};
use waveletgan::fid::{evaluate_fid, FeatureExtractor};
use waveletgan::gan::{train, GanModel, Trainer};
use waveletgan::nn::Module;

fn tiny_config(seed: u64) -> RunConfig {
    let overrides: Vec<String> = ["base_width=4", "disc_width=4", "z_dim=8", "batch=4", "n_disc=2"]
        .iter()
        .map(|s| s.to_string())
        .chain([format!("seed={seed}")])
        .collect();
    RunConfig::build("", &overrides).unwrap()
}

fn fresh(config: &RunConfig, n: usize) -> Trainer {
    let model = GanModel::new(config.arch.clone(), config.seed).unwrap();
    Trainer::new(model, config.train.clone(), n).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = synthetic_shapes(16, 28, 1, 2).unwrap();
    let config = tiny_config(5);
    let mut trainer = fresh(&config, data.len());
    train(&mut trainer, &data, 2, &mut []).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.wgc");
    let b = dir.path().join("b.wgc");
    save_checkpoint(&a, &trainer, &config).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded.config, config);
    assert_eq!(loaded.trainer.step, 2);
    assert_eq!(loaded.trainer.counters, trainer.counters);
    save_checkpoint(&b, &loaded.trainer, &loaded.config).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for (p, q) in loaded.trainer.model.generator.params().iter().zip(trainer.model.generator.params()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn resumed_trainer_continues_identically() {
    let data = synthetic_shapes(12, 28, 1, 4).unwrap();
    let config = tiny_config(9);
    let mut straight = fresh(&config, data.len());
    let full = train(&mut straight, &data, 6, &mut []).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.wgc");
    let mut first = fresh(&config, data.len());
    train(&mut first, &data, 3, &mut []).unwrap();
    save_checkpoint(&path, &first, &config).unwrap();
    drop(first);
    let mut resumed = load_checkpoint(&path).unwrap().trainer;
    let rest = train(&mut resumed, &data, 6, &mut []).unwrap();

    assert_eq!(rest.len(), 3);
    for (a, b) in full[3..].iter().zip(&rest) {
        assert_eq!((a.step, a.d_loss, a.g_loss, &a.scales), (b.step, b.d_loss, b.g_loss, &b.scales));
    }
    let extractor = FeatureExtractor::default();
    let real = synthetic_shapes(8, 28, 1, 7).unwrap().images;
    let fa = evaluate_fid(&straight.model, &extractor, &real, 1, 0).unwrap();
    let fb = evaluate_fid(&resumed.model, &extractor, &real, 1, 0).unwrap();
    assert_eq!(fa.values, fb.values);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let data = synthetic_shapes(8, 28, 1, 1).unwrap();
    let config = tiny_config(1);
    let trainer = fresh(&config, data.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.wgc");
    save_checkpoint(&path, &trainer, &config).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(waveletgan::Error::Format { .. })));
}
