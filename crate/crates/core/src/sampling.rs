//! Frame-index planning: video-level (one frame per segment) and clip-level
//! (strided window) sampling, plus square-crop offsets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Video,
    Clip,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Video => "video",
            Strategy::Clip => "clip",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "video" => Ok(Strategy::Video),
            "clip" => Ok(Strategy::Clip),
            other => Err(Error::Config(format!("unknown sampling strategy `{other}`"))),
        }
    }
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(SampleMode::Train),
            "test" => Ok(SampleMode::Test),
            other => Err(Error::Config(format!("unknown sampling mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleIndexPlan {
    pub indices: Vec<usize>,
    pub mode: SampleMode,
    pub strategy: Strategy,
}

/// `[start, end)` of segment `i` when `len` frames are split into `t` segments.
pub fn segment_bounds(len: usize, t: usize, i: usize) -> (usize, usize) {
    (i * len / t, (i + 1) * len / t)
}

/// One frame per segment: uniform within the segment when training, the
/// segment centre `start + (len - 1) / 2` when testing.
pub fn video_level_plan<R: Rng + ?Sized>(
    video_length: usize,
    t: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<SampleIndexPlan> {
    if t == 0 {
        return Err(Error::Usage("T must be at least 1".into()));
    }
    if video_length < t {
        return Err(Error::InsufficientFrames {
            available: video_length,
            requested: t,
        });
    }
    let indices = (0..t)
        .map(|i| {
            let (start, end) = segment_bounds(video_length, t, i);
            match mode {
                SampleMode::Train => rng.gen_range(start..end),
                SampleMode::Test => start + (end - start - 1) / 2,
            }
        })
        .collect();
    Ok(SampleIndexPlan {
        indices,
        mode,
        strategy: Strategy::Video,
    })
}

/// Clip sampling parameters: a window of `clip_len` frames from which `t`
/// frames are taken every `stride` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipParams {
    pub clip_len: usize,
    pub stride: usize,
    pub t: usize,
    pub num_eval_clips: usize,
}

impl Default for ClipParams {
    fn default() -> Self {
        Self {
            clip_len: 16,
            stride: 2,
            t: 8,
            num_eval_clips: 4,
        }
    }
}

impl ClipParams {
    /// Stride 2 over a `2·t` window, the usual pairing.
    pub fn for_frames(t: usize) -> Self {
        Self {
            clip_len: 2 * t,
            t,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clip_len == 0 || self.stride == 0 || self.t == 0 || self.num_eval_clips == 0 {
            return Err(Error::Usage(format!("clip parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    fn plan_from(&self, start: usize, video_length: usize, mode: SampleMode) -> SampleIndexPlan {
        let last = video_length - 1;
        SampleIndexPlan {
            indices: (0..self.t).map(|i| (start + i * self.stride).min(last)).collect(),
            mode,
            strategy: Strategy::Clip,
        }
    }
}

/// Train: one plan from a uniformly drawn clip start. Test: `num_eval_clips`
/// plans with starts evenly spaced over `[0, L - clip_len]`. Indices past the
/// end of a short video repeat the last frame.
pub fn clip_level_plan<R: Rng + ?Sized>(
    video_length: usize,
    params: ClipParams,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<SampleIndexPlan>> {
    params.validate()?;
    if video_length == 0 {
        return Err(Error::InsufficientFrames {
            available: 0,
            requested: 1,
        });
    }
    let room = video_length.saturating_sub(params.clip_len);
    let starts: Vec<usize> = match mode {
        SampleMode::Train => vec![rng.gen_range(0..=room)],
        SampleMode::Test if params.num_eval_clips == 1 => vec![room / 2],
        SampleMode::Test => {
            let n = params.num_eval_clips;
            (0..n).map(|k| k * room / (n - 1)).collect()
        }
    };
    Ok(starts
        .into_iter()
        .map(|s| params.plan_from(s, video_length, mode))
        .collect())
}

/// Top-left corner and side of a square crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropPlan {
    pub y: usize,
    pub x: usize,
    pub size: usize,
    /// Horizontal flip. Never set by [`crop_plan`]: grid labels are left/right sensitive.
    pub flip: bool,
}

/// Random square crop for training, centred crop for testing.
pub fn crop_plan<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    size: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<CropPlan> {
    if size == 0 || size > height || size > width {
        return Err(Error::Usage(format!("cannot crop {size}x{size} from {height}x{width}")));
    }
    let (ry, rx) = (height - size, width - size);
    let (y, x) = match mode {
        SampleMode::Train => (rng.gen_range(0..=ry), rng.gen_range(0..=rx)),
        SampleMode::Test => (ry / 2, rx / 2),
    };
    Ok(CropPlan {
        y,
        x,
        size,
        flip: false,
    })
}

/// Plans as a JSON array of index arrays.
pub fn plans_to_json(plans: &[SampleIndexPlan]) -> String {
    serde_json::to_string(plans).expect("plans serialize")
}
