//! Training and evaluation loops.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::sampling::{clip_level_plan, crop_plan, video_level_plan, ClipParams, CropPlan, SampleMode, Strategy};
use crate::synth::{load_split, DatasetManifest, Split, VideoSample};
use crate::tensor::Tensor;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::TrainConfig;
use super::metrics::{write_metrics, Accumulator, MetricsRow};
use super::optim::{sgd_step, SgdParams, SgdState};

/// Both splits of a dataset directory, in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<VideoSample>,
    pub val: Vec<VideoSample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, train) = load_split(dir, Split::Train)?;
        let (_, val) = load_split(dir, Split::Val)?;
        Ok(Self { manifest, train, val })
    }

    pub fn split(&self, split: Split) -> &[VideoSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn grid(&self) -> usize {
        self.manifest.config.grid
    }
}

/// How clips are drawn and batched at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub strategy: Strategy,
    pub clip: ClipParams,
    pub size: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            strategy: self.sampling,
            clip: self.clip_params(),
            size: self.network.size,
            batch_size: self.batch_size,
        }
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub network: Network,
    pub final_val: MetricsRow,
}

fn check_compatible(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<()> {
    let d = &manifest.config;
    let n = &cfg.network;
    if n.num_classes != d.num_classes() {
        return Err(Error::Data(format!(
            "network has {} classes, dataset grid {} has {}",
            n.num_classes,
            d.grid,
            d.num_classes()
        )));
    }
    if d.frames < n.frames || n.size > d.height || n.size > d.width || n.in_channels != 3 {
        return Err(Error::Data(format!(
            "dataset videos are 3x{}x{}x{}, network wants 3 channels, T={} at {}x{}",
            d.frames, d.height, d.width, n.frames, n.size, n.size
        )));
    }
    Ok(())
}

fn sample_plans(
    strategy: Strategy,
    clip: ClipParams,
    len: usize,
    t: usize,
    mode: SampleMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    Ok(match strategy {
        Strategy::Video => vec![video_level_plan(len, t, mode, rng)?.indices],
        Strategy::Clip => clip_level_plan(len, clip, mode, rng)?
            .into_iter()
            .map(|p| p.indices)
            .collect(),
    })
}

/// Append the `[3, T, S, S]` clip given by frame `indices` and `crop` to `out`.
fn gather(video: &Tensor, indices: &[usize], crop: CropPlan, out: &mut Vec<f32>) {
    let (l, h, w) = (video.dim(1), video.dim(2), video.dim(3));
    let d = video.data();
    for c in 0..3 {
        for &f in indices {
            for y in crop.y..crop.y + crop.size {
                let row = ((c * l + f) * h + y) * w;
                out.extend_from_slice(&d[row + crop.x..row + crop.x + crop.size]);
            }
        }
    }
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
    let e: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// One clip to be read from a video: position of the video in its split,
/// frame indices and crop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedClip {
    pub video: usize,
    pub indices: Vec<usize>,
    pub crop: CropPlan,
}

/// Test-mode clips of every video, in evaluation order. Test plans draw
/// nothing from the generator, so they are the same on every call.
pub fn eval_plans(samples: &[VideoSample], opts: EvalOptions, t: usize) -> Result<Vec<PlannedClip>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut jobs = Vec::new();
    for (video, sample) in samples.iter().enumerate() {
        let (l, h, w) = (sample.frames.dim(1), sample.frames.dim(2), sample.frames.dim(3));
        let crop = crop_plan(h, w, opts.size, SampleMode::Test, &mut rng)?;
        for indices in sample_plans(opts.strategy, opts.clip, l, t, SampleMode::Test, &mut rng)? {
            jobs.push(PlannedClip { video, indices, crop });
        }
    }
    Ok(jobs)
}

/// One training epoch's clips in batch order: a shuffle of the videos, then
/// one clip and one crop per video, all drawn from `rng`.
pub fn train_epoch_plans(cfg: &TrainConfig, samples: &[VideoSample], rng: &mut ChaCha8Rng) -> Result<Vec<PlannedClip>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let (clip, size, t) = (cfg.clip_params(), cfg.network.size, cfg.network.frames);
    order
        .into_iter()
        .map(|video| {
            let (l, h, w) = {
                let f = &samples[video].frames;
                (f.dim(1), f.dim(2), f.dim(3))
            };
            let indices = sample_plans(cfg.sampling, clip, l, t, SampleMode::Train, rng)?.swap_remove(0);
            let crop = crop_plan(h, w, size, SampleMode::Train, rng)?;
            Ok(PlannedClip { video, indices, crop })
        })
        .collect()
}

/// The generator [`train_on`] draws shuffles and training plans from.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Test-mode metrics: per video, class probabilities are averaged over its
/// clips (one clip for video-level sampling).
pub fn evaluate(
    network: &mut Network,
    samples: &[VideoSample],
    grid: usize,
    opts: EvalOptions,
    epoch: usize,
    split: Split,
    lr: f32,
) -> Result<MetricsRow> {
    let t = network.spec().temporal_length;
    let s = opts.size;
    let k = network.spec().num_classes;
    let jobs = eval_plans(samples, opts, t)?;
    let mut probs = vec![vec![0.0f64; k]; samples.len()];
    let mut clips = vec![0usize; samples.len()];
    for chunk in jobs.chunks(opts.batch_size.max(1)) {
        let mut buf = Vec::with_capacity(chunk.len() * 3 * t * s * s);
        for c in chunk {
            gather(&samples[c.video].frames, &c.indices, c.crop, &mut buf);
        }
        let logits = network.predict(&Tensor::new(&[chunk.len(), 3, t, s, s], buf)?)?;
        for (c, row) in chunk.iter().zip(logits.data().chunks_exact(k)) {
            for (acc, p) in probs[c.video].iter_mut().zip(softmax(row)) {
                *acc += p;
            }
            clips[c.video] += 1;
        }
    }
    let mut acc = Accumulator::default();
    for ((sample, p), n) in samples.iter().zip(&mut probs).zip(&clips) {
        p.iter_mut().for_each(|v| *v /= *n as f64);
        let loss = -p[sample.label].max(f64::MIN_POSITIVE).ln();
        acc.add(p, loss, sample.label, grid);
    }
    Ok(acc.row(epoch, split, lr, 0.0))
}

/// Load a dataset from `cfg.data` and train.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Dataset::load(&cfg.data)?;
    train_on(cfg, &data, &mut |_| {})
}

/// Train on an already loaded dataset, writing metrics and the final
/// checkpoint under `cfg.out`. `on_row` sees every metrics row as it is produced.
pub fn train_on(cfg: &TrainConfig, data: &Dataset, on_row: &mut dyn FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(cfg, &data.manifest)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let config_path = cfg.out.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(&config_path, e))?;

    let spec = cfg.network.build_spec()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rng = data_rng(cfg.seed);
    let mut network = Network::new(spec, &mut init_rng)?;
    let train_set = match cfg.train_limit {
        0 => &data.train[..],
        n => &data.train[..n.min(data.train.len())],
    };
    let grid = data.grid();
    let (t, s, k) = (cfg.network.frames, cfg.network.size, cfg.network.num_classes);
    let opts = cfg.eval_options();
    let mut state = SgdState::default();
    let mut rows = Vec::new();
    let started = Instant::now();
    let mut final_val = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let hp = SgdParams {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        let plans = train_epoch_plans(cfg, train_set, &mut rng)?;
        let mut acc = Accumulator::default();
        for (b, chunk) in plans.chunks(cfg.batch_size).enumerate() {
            let mut buf = Vec::with_capacity(chunk.len() * 3 * t * s * s);
            let mut labels = Vec::with_capacity(chunk.len());
            for c in chunk {
                gather(&train_set[c.video].frames, &c.indices, c.crop, &mut buf);
                labels.push(train_set[c.video].label);
            }
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(&[chunk.len(), 3, t, s, s], buf)?);
            let pass = network.forward(&mut tape, x, Mode::Train)?;
            let loss = tape.softmax_cross_entropy(pass.logits, &labels)?;
            let loss_value = tape.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}, batch {b}: loss is {loss_value}"
                )));
            }
            for (row, &label) in tape.value(pass.logits).data().chunks_exact(k).zip(&labels) {
                let p = softmax(row);
                acc.add(&p, -p[label].max(f64::MIN_POSITIVE).ln(), label, grid);
            }
            tape.backward(loss)?;
            let missing: Vec<Vec<f32>> = pass
                .params
                .iter()
                .map(|&v| match tape.grad(v) {
                    Some(_) => Vec::new(),
                    None => vec![0.0; tape.value(v).len()],
                })
                .collect();
            let grads: Vec<&[f32]> = pass
                .params
                .iter()
                .zip(&missing)
                .map(|(&v, z)| tape.grad(v).unwrap_or(z))
                .collect();
            sgd_step(network.params_mut(), &grads, &mut state, hp)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let train_row = acc.row(epoch, Split::Train, lr, started.elapsed().as_secs_f64());
        on_row(&train_row);
        rows.push(train_row);

        let last = epoch + 1 == cfg.epochs;
        if last || (epoch + 1) % cfg.eval_every == 0 {
            let mut val = evaluate(&mut network, &data.val, grid, opts, epoch, Split::Val, lr)?;
            val.wall_time = started.elapsed().as_secs_f64();
            on_row(&val);
            rows.push(val.clone());
            final_val = Some(val);
        }
        write_metrics(&cfg.out, &rows)?;
    }
    save_checkpoint(
        &cfg.out.join("checkpoint"),
        &network,
        &cfg.network,
        cfg.epochs - 1,
        cfg.lr_at(cfg.epochs - 1),
    )?;
    Ok(TrainOutcome {
        rows,
        network,
        final_val: final_val.expect("last epoch is always validated"),
    })
}

/// Evaluate a saved checkpoint on one split of a dataset directory.
pub fn evaluate_checkpoint(checkpoint: &Path, data: &Path, split: Split, opts: EvalOptions) -> Result<MetricsRow> {
    let (mut network, manifest) = load_checkpoint(checkpoint)?;
    let (dataset, samples) = load_split(data, split)?;
    let cfg = TrainConfig {
        network: manifest.network.clone(),
        ..TrainConfig::default()
    };
    check_compatible(&cfg, &dataset)?;
    evaluate(
        &mut network,
        &samples,
        dataset.config.grid,
        opts,
        manifest.epoch,
        split,
        manifest.lr,
    )
}
