//! On-disk datasets: one `TFCK0001` container per video plus `manifest.json`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{generate_balanced, render, Difficulty, RenderedVideo, SynthConfig, SNITCH_COLOR};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub difficulty: Difficulty,
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub file: String,
    pub sha256: String,
    pub script_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &VideoEntry> {
        self.videos.iter().filter(move |v| v.split == split)
    }
}

/// A loaded video with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub label: usize,
    pub frames: Tensor,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of video `index` in `split`, independent of the other split's size.
pub fn derive_seed(master: u64, split: Split, index: usize) -> u64 {
    splitmix64(master ^ splitmix64((split.code() << 32) | index as u64))
}

/// Regenerate one video from its seed and target label.
pub fn generate_video(config: &SynthConfig, seed: u64, label: usize) -> Result<RenderedVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script = generate_balanced(&mut rng, config, label)?;
    render(&script, config.height, config.width)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `n_train + n_val` videos and the manifest to `out_dir`. Video `i`
/// of a split targets class `i mod G²`, so labels are balanced.
pub fn export_dataset(
    config: &SynthConfig,
    n_train: usize,
    n_val: usize,
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut videos = Vec::with_capacity(n_train + n_val);
    for (split, count) in [(Split::Train, n_train), (Split::Val, n_val)] {
        for i in 0..count {
            let video_seed = derive_seed(seed, split, i);
            let target = i % config.num_classes();
            let video = generate_video(config, video_seed, target)?;
            let id = format!("{split}-{i:05}");
            let file = format!("{id}.tfck");
            let bytes = container::encode(&video.frames);
            let path = out_dir.join(&file);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            videos.push(VideoEntry {
                id,
                label: video.label,
                split,
                difficulty: config.difficulty,
                seed: video_seed,
                frames: config.frames,
                height: config.height,
                width: config.width,
                file,
                sha256: sha256_hex(&bytes),
                script_hash: video.script_hash,
            });
        }
    }
    let manifest = DatasetManifest {
        seed,
        config: config.clone(),
        videos,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Load every video of `split`, checking hashes, shapes and labels
/// against the manifest.
pub fn load_split(dir: &Path, split: Split) -> Result<(DatasetManifest, Vec<VideoSample>)> {
    let manifest = DatasetManifest::read(dir)?;
    let classes = manifest.config.num_classes();
    let mut samples = Vec::new();
    for entry in manifest.entries(split) {
        let path: PathBuf = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Data(format!(
                "{}: content hash does not match the manifest",
                path.display()
            )));
        }
        let frames = container::decode(&bytes, &path)?;
        if frames.shape() != [3, entry.frames, entry.height, entry.width] || entry.label >= classes {
            return Err(Error::Data(format!(
                "{}: shape {:?} or label {} disagrees with the manifest",
                path.display(),
                frames.shape(),
                entry.label
            )));
        }
        samples.push(VideoSample {
            id: entry.id.clone(),
            label: entry.label,
            frames,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{} has no {split} videos", dir.display())));
    }
    Ok((manifest, samples))
}

/// Frame `f` of a `[3, L, H, W]` video as `[3, H, W]`.
pub fn video_frame(video: &Tensor, f: usize) -> Tensor {
    let (l, h, w) = (video.dim(1), video.dim(2), video.dim(3));
    let plane = h * w;
    let mut data = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        let at = (c * l + f) * plane;
        data.extend_from_slice(&video.data()[at..at + plane]);
    }
    Tensor::new(&[3, h, w], data).expect("frame shape matches its data")
}

/// Static baseline: the cell under the centroid of snitch-coloured pixels in
/// one `[3, H, W]` frame, or `None` when the snitch is not visible.
pub fn last_frame_oracle(frame: &Tensor, grid: usize) -> Option<usize> {
    let (h, w) = (frame.dim(1), frame.dim(2));
    let plane = h * w;
    let d = frame.data();
    let (mut sy, mut sx, mut n) = (0.0f64, 0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if (0..3).all(|c| (d[c * plane + i] - SNITCH_COLOR[c]).abs() < 1e-3) {
                sy += y as f64 + 0.5;
                sx += x as f64 + 0.5;
                n += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let row = ((sy / n as f64) * grid as f64 / h as f64) as usize;
    let col = ((sx / n as f64) * grid as f64 / w as f64) as usize;
    Some(row.min(grid - 1) * grid + col.min(grid - 1))
}
