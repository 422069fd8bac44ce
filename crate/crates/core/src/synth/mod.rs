//! Procedural snitch-localization videos on a `G×G` grid.
//!
//! A [`SceneScript`] lists objects resting on grid cells and timed events
//! that slide them between cells. Containers can cover the snitch, carry it
//! while it is hidden and uncover it again. The label is the snitch's final
//! cell, read from the script and never from pixels.

mod dataset;
mod generate;
mod render;

pub use dataset::{
    derive_seed, export_dataset, generate_video, last_frame_oracle, load_split, video_frame, DatasetManifest, Split,
    VideoEntry, VideoSample,
};
pub use generate::{generate_balanced, generate_script, SynthConfig};
pub use render::{board_color, render, render_frame, Rgb, PALETTE, SNITCH_COLOR};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// The snitch is visible in the last frame.
    Easy,
    /// The snitch ends inside a container that carried it, hidden for at
    /// least the final quarter of the video.
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!("unknown difficulty `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Snitch,
    Cone,
    Box,
    Ball,
}

impl ObjectKind {
    pub fn is_container(self) -> bool {
        matches!(self, ObjectKind::Cone | ObjectKind::Box)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub kind: ObjectKind,
    /// Index into [`PALETTE`].
    pub color: usize,
    /// Sprite extent as a fraction of the cell side.
    pub size: f32,
    /// Resting cell at frame 0.
    pub cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Move an object that holds nothing.
    Slide,
    /// Move a container onto the snitch's cell; it holds the snitch from the last frame of the move.
    Cover,
    /// Move a container that holds the snitch; the snitch moves with it.
    Carry,
    /// Move a container off the snitch, which stays behind and is visible again.
    Uncover,
}

/// Moves `actor` from its current cell to `target`, linearly over frames
/// `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub start: usize,
    pub end: usize,
    pub actor: usize,
    pub action: Action,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub grid: usize,
    pub num_frames: usize,
    pub objects: Vec<SceneObject>,
    pub events: Vec<SceneEvent>,
}

/// Where everything is in one frame. Centres are in cell units: the centre
/// of cell `k` is `(k mod G + 0.5, k div G + 0.5)` as `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub centers: Vec<(f32, f32)>,
    pub snitch_hidden: bool,
}

/// Per-frame states of a validated script.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub frames: Vec<FrameState>,
    pub final_cell: usize,
}

/// A rendered script: frames `[3, L, H, W]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedVideo {
    pub frames: VideoTensor,
    pub label: usize,
    pub script_hash: String,
}

/// Cell `k` as grid coordinates `(k mod G, k div G)`.
pub fn cell_coords(cell: usize, grid: usize) -> (usize, usize) {
    (cell % grid, cell / grid)
}

/// L1 distance between two cells in grid coordinates.
pub fn cell_l1(a: usize, b: usize, grid: usize) -> usize {
    let (ax, ay) = cell_coords(a, grid);
    let (bx, by) = cell_coords(b, grid);
    ax.abs_diff(bx) + ay.abs_diff(by)
}

fn cell_center(cell: usize, grid: usize) -> (f32, f32) {
    let (x, y) = cell_coords(cell, grid);
    (x as f32 + 0.5, y as f32 + 0.5)
}

impl SceneScript {
    pub fn snitch(&self) -> Result<usize> {
        let mut it = self.objects.iter().filter(|o| o.kind == ObjectKind::Snitch);
        match (it.next(), it.next()) {
            (Some(o), None) => Ok(o.id),
            _ => Err(invalid("script needs exactly one snitch")),
        }
    }

    /// Final snitch cell, the class label.
    pub fn label(&self) -> Result<usize> {
        Ok(self.timeline()?.final_cell)
    }

    /// SHA-256 of the canonical JSON encoding, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("script serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Validate the script and replay it frame by frame.
    pub fn timeline(&self) -> Result<Timeline> {
        let g = self.grid;
        let cells = g * g;
        if g == 0 || self.num_frames == 0 {
            return Err(invalid("grid and frame count must be positive"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.id != i {
                return Err(invalid(format!("object {i} has id {}", o.id)));
            }
            if o.cell >= cells {
                return Err(invalid(format!("object {i} starts outside the grid")));
            }
        }
        let snitch = self.snitch()?;
        let mut events = self.events.clone();
        events.sort_by_key(|e| (e.start, e.end, e.actor));
        for e in &events {
            if e.actor >= self.objects.len() || e.target >= cells {
                return Err(invalid(format!("event {e:?} refers outside the scene")));
            }
            if e.start >= e.end || e.end >= self.num_frames {
                return Err(invalid(format!("event {e:?} has an invalid time span")));
            }
            let kind = self.objects[e.actor].kind;
            if e.action != Action::Slide && !kind.is_container() {
                return Err(invalid(format!("{:?} needs a container, actor is {kind:?}", e.action)));
            }
        }
        for a in 0..self.objects.len() {
            let spans: Vec<_> = events.iter().filter(|e| e.actor == a).collect();
            if spans.windows(2).any(|w| w[1].start <= w[0].end) {
                return Err(invalid(format!("object {a} has overlapping events")));
            }
        }

        let mut cell: Vec<usize> = self.objects.iter().map(|o| o.cell).collect();
        let mut holder: Option<usize> = None;
        let mut frames = Vec::with_capacity(self.num_frames);
        for f in 0..self.num_frames {
            for e in events.iter().filter(|e| e.start == f) {
                match e.action {
                    Action::Slide if e.actor == snitch && holder.is_some() => {
                        return Err(invalid(format!("frame {f}: the snitch cannot slide while held")));
                    }
                    Action::Slide if holder == Some(e.actor) => {
                        return Err(invalid(format!("frame {f}: a holding container must carry")));
                    }
                    Action::Cover if holder.is_some() || cell[snitch] != e.target => {
                        return Err(invalid(format!("frame {f}: cover must target the free snitch")));
                    }
                    Action::Carry if holder != Some(e.actor) => {
                        return Err(invalid(format!("frame {f}: only the holder can carry")));
                    }
                    Action::Uncover if holder != Some(e.actor) || e.target == cell[e.actor] => {
                        return Err(invalid(format!("frame {f}: only the holder can uncover, by moving")));
                    }
                    Action::Uncover => holder = None,
                    _ => {}
                }
            }
            if let Some(e) = events.iter().find(|e| e.actor == snitch && e.start <= f && f <= e.end) {
                if holder.is_some()
                    || events
                        .iter()
                        .any(|c| c.action == Action::Cover && c.start <= f && f <= c.end)
                {
                    return Err(invalid(format!("frame {f}: snitch event {e:?} overlaps a cover")));
                }
            }
            let mut centers: Vec<(f32, f32)> = (0..self.objects.len())
                .map(|o| {
                    let from = cell_center(cell[o], g);
                    match events.iter().find(|e| e.actor == o && e.start <= f && f <= e.end) {
                        Some(e) => {
                            let to = cell_center(e.target, g);
                            let s = (f - e.start) as f32 / (e.end - e.start) as f32;
                            (from.0 + (to.0 - from.0) * s, from.1 + (to.1 - from.1) * s)
                        }
                        None => from,
                    }
                })
                .collect();
            for e in events.iter().filter(|e| e.end == f) {
                cell[e.actor] = e.target;
                match e.action {
                    Action::Cover => holder = Some(e.actor),
                    Action::Carry => cell[snitch] = e.target,
                    _ => {}
                }
            }
            if let Some(h) = holder {
                centers[snitch] = centers[h];
            }
            frames.push(FrameState {
                centers,
                snitch_hidden: holder.is_some(),
            });
        }
        Ok(Timeline {
            frames,
            final_cell: cell[snitch],
        })
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Data(format!("invalid scene script: {}", msg.into()))
}

#[cfg(test)]
mod tests;
