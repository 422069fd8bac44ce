use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use tempfile::TempDir;
use tfcnet::nn::{Architecture, Network, NetworkConfig, TfcPolicy};
use tfcnet::synth::{export_dataset, Split, SynthConfig};
use tfcnet::train::{evaluate, evaluate_checkpoint, train_on, Dataset, MetricsRow, TrainConfig};
use tfcnet::{Error, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 16 training and 128 validation hard videos, generated once per test binary.
fn dataset() -> &'static (TempDir, Dataset) {
    static DATA: OnceLock<(TempDir, Dataset)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        export_dataset(&SynthConfig::default(), 16, 128, dir.path(), 3).unwrap();
        let data = Dataset::load(dir.path()).unwrap();
        (dir, data)
    })
}

fn config(out: &Path, tfc: TfcPolicy) -> TrainConfig {
    TrainConfig {
        network: NetworkConfig::mini(Architecture::V3d, tfc),
        epochs: 1,
        lr_drops: vec![],
        eval_every: 1,
        data: dataset().0.path().to_path_buf(),
        out: out.to_path_buf(),
        ..TrainConfig::default()
    }
}

/// A view of the dataset with fewer validation videos, to keep epochs short.
fn small_val(n: usize) -> Dataset {
    let mut d = dataset().1.clone();
    d.val.truncate(n);
    d
}

fn without_time(mut r: MetricsRow) -> MetricsRow {
    r.wall_time = 0.0;
    r
}

#[test]
fn one_epoch_twice_gives_identical_metrics_files() {
    let tmp = TempDir::new().unwrap();
    let data = small_val(8);
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let cfg = TrainConfig {
            train_limit: 8,
            ..config(&tmp.path().join(run), TfcPolicy::None)
        };
        train_on(&cfg, &data, &mut |_| {}).unwrap();
        let read = |name: &str| fs::read(cfg.out.join(name)).unwrap();
        files.push((read("metrics.csv"), read("metrics.json")));
    }
    assert_eq!(files[0], files[1]);
    let csv = String::from_utf8(files[0].0.clone()).unwrap();
    assert_eq!(csv.lines().count(), 3, "header, train row, val row:\n{csv}");
}

#[test]
fn tfc_v3d_memorizes_sixteen_videos() {
    let tmp = TempDir::new().unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        eval_every: 50,
        ..config(tmp.path(), TfcPolicy::V3d { phase: 0 })
    };
    let out = train_on(&cfg, &small_val(8), &mut |_| {}).unwrap();
    let last_train = out.rows.iter().rev().find(|r| r.split == Split::Train).unwrap();
    assert_eq!(last_train.top1, 1.0, "{last_train:?}");
    for r in &out.rows {
        assert!(r.top1 <= r.top5 && r.top5 <= 1.0);
        assert!(r.loss.is_finite());
    }
}

#[test]
fn checkpoint_reproduces_the_last_validation_row() {
    let tmp = TempDir::new().unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..config(tmp.path(), TfcPolicy::V3d { phase: 0 })
    };
    let data = small_val(16);
    let out = train_on(&cfg, &data, &mut |_| {}).unwrap();
    let last_val = out.rows.iter().rev().find(|r| r.split == Split::Val).unwrap().clone();
    assert_eq!(without_time(out.final_val.clone()), without_time(last_val.clone()));

    let mut net = out.network;
    let again = evaluate(&mut net, &data.val, 4, cfg.eval_options(), 1, Split::Val, cfg.lr_at(1)).unwrap();
    assert_eq!(again, without_time(last_val.clone()));

    // the checkpoint is evaluated on the full split of the dataset directory
    let full = evaluate(
        &mut net,
        &dataset().1.val,
        4,
        cfg.eval_options(),
        1,
        Split::Val,
        cfg.lr_at(1),
    )
    .unwrap();
    let reloaded = evaluate_checkpoint(
        &tmp.path().join("checkpoint"),
        &cfg.data,
        Split::Val,
        cfg.eval_options(),
    )
    .unwrap();
    assert_eq!(reloaded, full);
}

#[test]
fn random_init_is_chance_level() {
    let (_, data) = dataset();
    let cfg = NetworkConfig::mini(Architecture::V3d, TfcPolicy::None);
    let n = data.val.len() as f64;
    let p = 1.0 / 16.0;
    let band = 3.0 * (p * (1.0 - p) / n).sqrt();
    for seed in 0..3 {
        let mut net = Network::new(cfg.build_spec().unwrap(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let opts = TrainConfig::default().eval_options();
        let row = evaluate(&mut net, &data.val, 4, opts, 0, Split::Val, 0.01).unwrap();
        assert!(
            (row.top1 - p).abs() <= band,
            "seed {seed}: top1 {} outside {p} +- {band}",
            row.top1
        );
        assert!(row.top1 <= row.top5);
    }
}

#[test]
fn learning_rate_drops_tenfold_at_each_drop_epoch() {
    let tmp = TempDir::new().unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        lr_drops: vec![1, 2],
        train_limit: 4,
        eval_every: 3,
        ..config(tmp.path(), TfcPolicy::None)
    };
    let out = train_on(&cfg, &small_val(4), &mut |_| {}).unwrap();
    let lrs: Vec<f32> = out
        .rows
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.lr)
        .collect();
    assert_eq!(lrs, vec![cfg.lr, cfg.lr * 0.1, cfg.lr * 0.1 * 0.1]);
}

#[test]
fn non_finite_input_aborts_with_a_numerical_error() {
    let tmp = TempDir::new().unwrap();
    let mut data = small_val(4);
    let shape = data.train[0].frames.shape().to_vec();
    data.train[0].frames = Tensor::full(&shape, f32::NAN);
    let err = train_on(&config(tmp.path(), TfcPolicy::None), &data, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn class_count_mismatch_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = config(tmp.path(), TfcPolicy::None);
    cfg.network.num_classes = 9;
    let err = train_on(&cfg, &small_val(4), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}
