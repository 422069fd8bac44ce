//! Flat 2D sprites over a board whose cells are tinted by position. The
//! board is the same in every video, so it carries no label information.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{FrameState, ObjectKind, RenderedVideo, SceneObject, SceneScript};

pub type Rgb = [f32; 3];

/// Board tint of cell `(col, row)`: red grows with the column, blue with the row.
pub fn board_color(col: usize, row: usize, grid: usize) -> Rgb {
    let step = 0.25 / (grid.max(2) - 1) as f32;
    [0.1 + step * col as f32, 0.12, 0.1 + step * row as f32]
}

/// Colour 0 is reserved for the snitch.
pub const PALETTE: [Rgb; 8] = [
    [1.0, 0.8, 0.1],
    [0.9, 0.2, 0.2],
    [0.2, 0.4, 1.0],
    [0.2, 0.8, 0.3],
    [0.7, 0.3, 0.9],
    [0.2, 0.8, 0.9],
    [0.9, 0.9, 0.9],
    [1.0, 0.5, 0.7],
];

pub const SNITCH_COLOR: Rgb = PALETTE[0];

/// Render every frame. Non-containers are drawn first, then containers on
/// top, each group in id order; a held snitch is not drawn at all.
pub fn render(script: &SceneScript, height: usize, width: usize) -> Result<RenderedVideo> {
    check_canvas(script.grid, height, width)?;
    let timeline = script.timeline()?;
    let l = script.num_frames;
    let plane = height * width;
    let mut data = vec![0.0f32; 3 * l * plane];
    for (f, state) in timeline.frames.iter().enumerate() {
        let frame = rasterize(script, state, height, width);
        for c in 0..3 {
            let dst = (c * l + f) * plane;
            data[dst..dst + plane].copy_from_slice(&frame[c * plane..(c + 1) * plane]);
        }
    }
    Ok(RenderedVideo {
        frames: Tensor::new(&[3, l, height, width], data)?,
        label: timeline.final_cell,
        script_hash: script.hash(),
    })
}

/// One frame as `[3, H, W]`.
pub fn render_frame(script: &SceneScript, frame: usize, height: usize, width: usize) -> Result<Tensor> {
    check_canvas(script.grid, height, width)?;
    let timeline = script.timeline()?;
    let state = timeline.frames.get(frame).ok_or_else(|| {
        Error::Usage(format!(
            "frame {frame} is past the end of a {}-frame script",
            script.num_frames
        ))
    })?;
    Tensor::new(&[3, height, width], rasterize(script, state, height, width))
}

fn check_canvas(grid: usize, height: usize, width: usize) -> Result<()> {
    let min = 4 * grid;
    if height < min || width < min {
        return Err(Error::CanvasTooSmall {
            height,
            width,
            grid,
            min,
        });
    }
    Ok(())
}

fn rasterize(script: &SceneScript, state: &FrameState, height: usize, width: usize) -> Vec<f32> {
    let plane = height * width;
    let mut out = vec![0.0f32; 3 * plane];
    for y in 0..height {
        for x in 0..width {
            let tint = board_color(x * script.grid / width, y * script.grid / height, script.grid);
            for (c, v) in tint.iter().enumerate() {
                out[c * plane + y * width + x] = *v;
            }
        }
    }
    let ch = height as f32 / script.grid as f32;
    let cw = width as f32 / script.grid as f32;
    let side = ch.min(cw);
    let order = script
        .objects
        .iter()
        .filter(|o| !o.kind.is_container())
        .chain(script.objects.iter().filter(|o| o.kind.is_container()));
    for obj in order {
        if obj.kind == ObjectKind::Snitch && state.snitch_hidden {
            continue;
        }
        let (cx, cy) = state.centers[obj.id];
        let (px, py) = (cx * cw, cy * ch);
        let color = PALETTE[obj.color % PALETTE.len()];
        let half = 0.5 * obj.size * side;
        let y0 = ((py - half).floor().max(0.0)) as usize;
        let y1 = ((py + half).ceil() as usize).min(height);
        let x0 = ((px - half).floor().max(0.0)) as usize;
        let x1 = ((px + half).ceil() as usize).min(width);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f32 + 0.5 - px;
                let dy = y as f32 + 0.5 - py;
                if covers(obj, dx, dy, half) {
                    for c in 0..3 {
                        out[c * plane + y * width + x] = color[c];
                    }
                }
            }
        }
    }
    out
}

/// Whether a pixel at offset `(dx, dy)` from the sprite centre is inside it.
fn covers(obj: &SceneObject, dx: f32, dy: f32, half: f32) -> bool {
    match obj.kind {
        ObjectKind::Snitch | ObjectKind::Ball => dx * dx + dy * dy <= half * half,
        ObjectKind::Box => dx.abs() <= half && dy.abs() <= half,
        ObjectKind::Cone => {
            // Apex at the top, base along the bottom edge.
            let depth = (dy + half) / (2.0 * half);
            (0.0..=1.0).contains(&depth) && dx.abs() <= depth * half
        }
    }
}
