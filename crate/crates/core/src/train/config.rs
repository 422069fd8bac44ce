//! Flat `key = value` training configuration.
//!
//! Grammar: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored; a key may appear once. Lists are comma-separated.
//! `profile` (default `mini`) picks the base network layout before any
//! network key is applied, regardless of line order.
//!
//! | key | value |
//! |---|---|
//! | `lr`, `momentum`, `weight_decay` | float |
//! | `batch_size`, `epochs`, `seed` | integer |
//! | `lr_drops` | ascending epoch list, each below `epochs` |
//! | `profile` | `mini` or `resnet50` |
//! | `arch` | `tsn`, `v3d`, `v3d_depthwise`, `v3d_depthwise_basic` |
//! | `tfc` | `none`, `v3d`, `tsn` |
//! | `tfc_phase` | integer, offset of the `v3d` placement |
//! | `frames`, `size`, `num_classes`, `stem_channels`, `expansion` | integer |
//! | `widths`, `repeats`, `strides` | integer lists |
//! | `sampling` | `video` or `clip` |
//! | `clip_stride`, `eval_clips`, `eval_every` | integer |
//! | `train_limit` | integer, use only the first N training videos (0 = all) |
//! | `data`, `out` | paths |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Architecture, NetworkConfig, TfcPolicy};
use crate::sampling::{ClipParams, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub lr_drops: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub network: NetworkConfig,
    pub sampling: Strategy,
    pub clip_stride: usize,
    pub eval_clips: usize,
    /// Validate every this many epochs; the last epoch is always validated.
    pub eval_every: usize,
    pub train_limit: usize,
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 16,
            lr_drops: vec![15, 25],
            epochs: 30,
            seed: 0,
            network: NetworkConfig::mini(Architecture::V3d, TfcPolicy::None),
            sampling: Strategy::Video,
            clip_stride: 2,
            eval_clips: 4,
            eval_every: 1,
            train_limit: 0,
            data: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// Clip parameters implied by `frames`, `clip_stride` and `eval_clips`.
    pub fn clip_params(&self) -> ClipParams {
        ClipParams {
            clip_len: self.clip_stride * self.network.frames,
            stride: self.clip_stride,
            t: self.network.frames,
            num_eval_clips: self.eval_clips,
        }
    }

    /// Learning rate in effect during `epoch` (0-based): divided by 10 at
    /// every drop epoch already reached.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let drops = self.lr_drops.iter().filter(|&&d| d <= epoch).count();
        (0..drops).fold(self.lr, |lr, _| lr * 0.1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return fail("momentum must be in [0, 1) and weight_decay non-negative".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if self.lr_drops.windows(2).any(|w| w[0] >= w[1]) || self.lr_drops.iter().any(|&d| d >= self.epochs) {
            return fail(format!(
                "lr_drops {:?} must be strictly ascending and below epochs {}",
                self.lr_drops, self.epochs
            ));
        }
        if self.clip_stride == 0 || self.eval_clips == 0 || self.eval_every == 0 {
            return fail("clip_stride, eval_clips and eval_every must be positive".into());
        }
        self.network.build_spec().map(|_| ())
    }

    /// Render in the file grammar; parsing the result gives `self` back.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let (tfc, phase) = match n.tfc {
            TfcPolicy::V3d { phase } => ("v3d".to_string(), phase),
            other => (other.to_string(), 0),
        };
        let lines = [
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_drops", join(&self.lr_drops)),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("arch", n.arch.to_string()),
            ("tfc", tfc),
            ("tfc_phase", phase.to_string()),
            ("frames", n.frames.to_string()),
            ("size", n.size.to_string()),
            ("num_classes", n.num_classes.to_string()),
            ("stem_channels", n.stem_channels.to_string()),
            ("expansion", n.expansion.to_string()),
            ("widths", join(&n.widths)),
            ("repeats", join(&n.repeats)),
            ("strides", join(&n.strides)),
            ("sampling", self.sampling.to_string()),
            ("clip_stride", self.clip_stride.to_string()),
            ("eval_clips", self.eval_clips.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("train_limit", self.train_limit.to_string()),
            ("data", self.data.display().to_string()),
            ("out", self.out.display().to_string()),
        ];
        let mut s = String::new();
        for (k, v) in lines {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

impl FromStr for TrainConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }

        let mut cfg = TrainConfig::default();
        let arch: Architecture = match map.remove("arch") {
            Some(v) => v.parse()?,
            None => cfg.network.arch,
        };
        let mut tfc: TfcPolicy = match map.remove("tfc") {
            Some(v) => v.parse()?,
            None => TfcPolicy::None,
        };
        if let Some(v) = map.remove("tfc_phase") {
            let p: usize = parse("tfc_phase", &v)?;
            match &mut tfc {
                TfcPolicy::V3d { phase } => *phase = p,
                _ if p == 0 => {}
                _ => return Err(Error::Config("tfc_phase only applies to tfc = v3d".into())),
            }
        }
        cfg.network = match map.remove("profile").as_deref() {
            None | Some("mini") => NetworkConfig::mini(arch, tfc),
            Some("resnet50") => NetworkConfig::resnet50(arch, tfc),
            Some(other) => return Err(Error::Config(format!("unknown profile `{other}`"))),
        };

        for (k, v) in map {
            let n = &mut cfg.network;
            match k.as_str() {
                "lr" => cfg.lr = parse(&k, &v)?,
                "momentum" => cfg.momentum = parse(&k, &v)?,
                "weight_decay" => cfg.weight_decay = parse(&k, &v)?,
                "batch_size" => cfg.batch_size = parse(&k, &v)?,
                "lr_drops" => cfg.lr_drops = parse_list(&k, &v)?,
                "epochs" => cfg.epochs = parse(&k, &v)?,
                "seed" => cfg.seed = parse(&k, &v)?,
                "frames" => n.frames = parse(&k, &v)?,
                "size" => n.size = parse(&k, &v)?,
                "num_classes" => n.num_classes = parse(&k, &v)?,
                "stem_channels" => n.stem_channels = parse(&k, &v)?,
                "expansion" => n.expansion = parse(&k, &v)?,
                "widths" => n.widths = parse_list(&k, &v)?,
                "repeats" => n.repeats = parse_list(&k, &v)?,
                "strides" => n.strides = parse_list(&k, &v)?,
                "sampling" => cfg.sampling = v.parse()?,
                "clip_stride" => cfg.clip_stride = parse(&k, &v)?,
                "eval_clips" => cfg.eval_clips = parse(&k, &v)?,
                "eval_every" => cfg.eval_every = parse(&k, &v)?,
                "train_limit" => cfg.train_limit = parse(&k, &v)?,
                "data" => cfg.data = PathBuf::from(v),
                "out" => cfg.out = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_the_mini_defaults() {
        let cfg: TrainConfig = "# nothing\n\n".parse().unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!((cfg.lr, cfg.momentum, cfg.weight_decay), (0.01, 0.9, 1e-5));
    }

    #[test]
    fn text_round_trips() {
        let cfg = TrainConfig {
            network: NetworkConfig::mini(Architecture::Tsn, TfcPolicy::V3d { phase: 1 }),
            sampling: Strategy::Clip,
            lr_drops: vec![3],
            epochs: 4,
            data: PathBuf::from("/tmp/some data"),
            ..TrainConfig::default()
        };
        let back: TrainConfig = cfg.to_text().parse().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_files_are_config_errors() {
        for text in [
            "lr = 0",
            "lr = abc",
            "lr_drops = 25,15",
            "lr_drops = 30",
            "wat = 1",
            "lr = 0.1\nlr = 0.2",
            "no equals sign",
            "tfc = v4d",
            "tfc = tsn\ntfc_phase = 1",
            "widths = 16,32",
        ] {
            let err = text.parse::<TrainConfig>().unwrap_err();
            assert!(
                matches!(err, Error::Config(_) | Error::UnknownPolicy(_)),
                "{text}: {err}"
            );
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn schedule_divides_by_ten_at_each_drop() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(14), 0.01);
        assert_eq!(cfg.lr_at(15), 0.01 * 0.1);
        assert_eq!(cfg.lr_at(24), cfg.lr_at(15));
        assert_eq!(cfg.lr_at(25), cfg.lr_at(15) * 0.1);
    }

    #[test]
    fn clip_window_is_stride_times_frames() {
        let cfg = TrainConfig::default();
        let p = cfg.clip_params();
        assert_eq!((p.clip_len, p.stride, p.t, p.num_eval_clips), (32, 2, 16, 4));
    }
}
