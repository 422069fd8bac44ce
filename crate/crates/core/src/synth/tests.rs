use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::container;
use crate::tensor::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn config(difficulty: Difficulty) -> SynthConfig {
    SynthConfig {
        difficulty,
        ..SynthConfig::default()
    }
}

fn object(id: usize, kind: ObjectKind, cell: usize) -> SceneObject {
    let (color, size) = match kind {
        ObjectKind::Snitch => (0, 0.5),
        ObjectKind::Ball => (6, 0.6),
        _ => (id, 0.9),
    };
    SceneObject {
        id,
        kind,
        color,
        size,
        cell,
    }
}

fn event(start: usize, end: usize, actor: usize, action: Action, target: usize) -> SceneEvent {
    SceneEvent {
        start,
        end,
        actor,
        action,
        target,
    }
}

/// Snitch at cell 5, a box at cell 0 covers it, carries it to 10 and leaves.
fn cover_script(uncover: bool) -> SceneScript {
    let mut events = vec![event(2, 6, 1, Action::Cover, 5), event(8, 12, 1, Action::Carry, 10)];
    if uncover {
        events.push(event(14, 18, 1, Action::Uncover, 15));
    }
    SceneScript {
        grid: 4,
        num_frames: 20,
        objects: vec![object(0, ObjectKind::Snitch, 5), object(1, ObjectKind::Box, 0)],
        events,
    }
}

fn snitch_pixels(frame: &Tensor) -> usize {
    let plane = frame.dim(1) * frame.dim(2);
    (0..plane)
        .filter(|&i| (0..3).all(|c| (frame.data()[c * plane + i] - SNITCH_COLOR[c]).abs() < 1e-3))
        .count()
}

fn frame_of(video: &RenderedVideo, f: usize) -> Tensor {
    video_frame(&video.frames, f)
}

#[test]
fn easy_scripts_end_with_a_visible_snitch_at_the_label() {
    let cfg = config(Difficulty::Easy);
    for seed in 0..30 {
        let script = generate_script(&mut rng(seed), &cfg).unwrap();
        let last = render_frame(&script, cfg.frames - 1, 32, 32).unwrap();
        assert_eq!(
            last_frame_oracle(&last, 4),
            Some(script.label().unwrap()),
            "seed {seed}"
        );
    }
}

#[test]
fn hard_scripts_defeat_the_last_frame_oracle() {
    let cfg = config(Difficulty::Hard);
    for seed in 0..30 {
        let script = generate_script(&mut rng(seed), &cfg).unwrap();
        let timeline = script.timeline().unwrap();
        let hidden = timeline.frames.iter().rev().take_while(|s| s.snitch_hidden).count();
        assert!(4 * hidden >= cfg.frames, "seed {seed}: hidden for {hidden}");
        assert!(script.events.iter().any(|e| e.action == Action::Carry));
        let last = render_frame(&script, cfg.frames - 1, 32, 32).unwrap();
        assert_ne!(
            last_frame_oracle(&last, 4),
            Some(script.label().unwrap()),
            "seed {seed}"
        );
    }
}

#[test]
fn same_seed_gives_the_same_script() {
    let cfg = SynthConfig::default();
    let a = generate_script(&mut rng(3), &cfg).unwrap();
    let b = generate_script(&mut rng(3), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hash(), b.hash());
}

#[test]
fn static_script_renders_identical_frames() {
    let script = SceneScript {
        grid: 4,
        num_frames: 6,
        objects: vec![object(0, ObjectKind::Snitch, 9)],
        events: vec![],
    };
    let video = render(&script, 16, 16).unwrap();
    let first = frame_of(&video, 0);
    for f in 1..6 {
        assert_eq!(frame_of(&video, f), first);
    }
    assert_eq!(video.label, 9);
    assert!(video.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn slide_moves_the_centre_linearly_between_cells() {
    let script = SceneScript {
        grid: 4,
        num_frames: 16,
        objects: vec![object(0, ObjectKind::Snitch, 0)],
        events: vec![event(3, 13, 0, Action::Slide, 15)],
    };
    let timeline = script.timeline().unwrap();
    for (f, state) in timeline.frames.iter().enumerate() {
        let s = (f.clamp(3, 13) - 3) as f32 / 10.0;
        let expected = 0.5 + 3.0 * s;
        let (x, y) = state.centers[0];
        assert!(
            (x - expected).abs() < 1e-6 && (y - expected).abs() < 1e-6,
            "frame {f}: {x},{y}"
        );
    }
    // The rendered sprite follows the same path: 16 px cells, centroid within half a pixel.
    let video = render(&script, 64, 64).unwrap();
    for f in 0..16 {
        let frame = frame_of(&video, f);
        let plane = 64 * 64;
        let (mut sx, mut n) = (0.0, 0.0);
        for i in 0..plane {
            if (0..3).all(|c| (frame.data()[c * plane + i] - SNITCH_COLOR[c]).abs() < 1e-3) {
                sx += (i % 64) as f32 + 0.5;
                n += 1.0;
            }
        }
        let expected = timeline.frames[f].centers[0].0 * 16.0;
        assert!((sx / n - expected).abs() <= 0.5, "frame {f}: {} vs {expected}", sx / n);
    }
    assert_eq!(video.label, 15);
}

#[test]
fn covered_snitch_is_not_drawn() {
    let script = cover_script(true);
    let timeline = script.timeline().unwrap();
    let video = render(&script, 32, 32).unwrap();
    let mut alone = script.clone();
    alone.objects.truncate(1);
    alone.events.clear();
    let reference = render(&alone, 32, 32).unwrap();
    let visible = snitch_pixels(&frame_of(&reference, 0));
    assert!(visible > 0);
    for (f, state) in timeline.frames.iter().enumerate() {
        let n = snitch_pixels(&frame_of(&video, f));
        if state.snitch_hidden {
            assert_eq!(n, 0, "frame {f}");
        }
        if !(2..18).contains(&f) {
            assert_eq!(n, visible, "frame {f}");
        }
    }
    let hidden: Vec<usize> = (0..20).filter(|&f| timeline.frames[f].snitch_hidden).collect();
    assert_eq!(hidden, (6..14).collect::<Vec<_>>());
}

#[test]
fn carried_snitch_ends_where_the_container_went() {
    assert_eq!(cover_script(false).label().unwrap(), 10);
    assert_eq!(cover_script(true).label().unwrap(), 10);
    let last = render_frame(&cover_script(false), 19, 32, 32).unwrap();
    assert_eq!(last_frame_oracle(&last, 4), None);
    let last = render_frame(&cover_script(true), 19, 32, 32).unwrap();
    assert_eq!(last_frame_oracle(&last, 4), Some(10));
}

#[test]
fn inconsistent_scripts_are_rejected() {
    let mut s = cover_script(false);
    s.events[1].actor = 0;
    assert!(s.timeline().is_err());

    let mut s = cover_script(false);
    s.events.remove(0);
    assert!(s.timeline().is_err(), "carry without cover");

    let mut s = cover_script(false);
    s.events[1].start = 5;
    assert!(s.timeline().is_err(), "overlapping events");

    let mut s = cover_script(false);
    s.events[0].target = 6;
    assert!(s.timeline().is_err(), "cover misses the snitch");

    let mut s = cover_script(false);
    s.events.push(event(14, 16, 1, Action::Slide, 3));
    assert!(s.timeline().is_err(), "holding container slides");
}

#[test]
fn small_canvas_is_rejected() {
    let err = render(&cover_script(false), 15, 32).unwrap_err();
    assert!(matches!(err, Error::CanvasTooSmall { min: 16, .. }));
}

#[test]
fn balanced_generation_hits_the_target() {
    let cfg = SynthConfig::default();
    for target in 0..16 {
        let script = generate_balanced(&mut rng(target as u64), &cfg, target).unwrap();
        assert_eq!(script.label().unwrap(), target);
    }
    assert!(generate_balanced(&mut rng(0), &cfg, 16).is_err());
}

#[test]
fn crowded_configs_are_rejected() {
    let cfg = SynthConfig {
        grid: 2,
        ..SynthConfig::default()
    };
    assert!(matches!(generate_script(&mut rng(0), &cfg), Err(Error::Config(_))));
}

#[test]
fn export_round_trips_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        frames: 24,
        height: 16,
        width: 16,
        ..SynthConfig::default()
    };
    let manifest = export_dataset(&cfg, 4, 2, dir.path(), 11).unwrap();
    assert_eq!(manifest.videos.len(), 6);
    assert_eq!(DatasetManifest::read(dir.path()).unwrap(), manifest);

    let (_, train) = load_split(dir.path(), Split::Train).unwrap();
    assert_eq!(train.len(), 4);
    for (entry, sample) in manifest.entries(Split::Train).zip(&train) {
        let video = generate_video(&cfg, entry.seed, entry.label).unwrap();
        assert_eq!(video.frames, sample.frames);
        assert_eq!(video.script_hash, entry.script_hash);
        let bytes = container::encode(&video.frames);
        assert_eq!(sha256_of(&bytes), entry.sha256);
    }
    let labels: Vec<usize> = manifest.entries(Split::Train).map(|e| e.label).collect();
    assert_eq!(labels, vec![0, 1, 2, 3]);

    std::fs::write(dir.path().join("train-00000.tfck"), b"TFCK0001").unwrap();
    assert!(matches!(load_split(dir.path(), Split::Train), Err(Error::Data(_))));
}

fn sha256_of(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn splits_use_independent_seed_streams() {
    let a = derive_seed(1, Split::Train, 0);
    assert_ne!(a, derive_seed(1, Split::Val, 0));
    assert_ne!(a, derive_seed(2, Split::Train, 0));
    assert_ne!(a, derive_seed(1, Split::Train, 1));
}

#[test]
fn cell_coordinates_are_column_then_row() {
    assert_eq!(cell_coords(6, 4), (2, 1));
    assert_eq!(cell_l1(0, 15, 4), 6);
    assert_eq!(cell_l1(5, 5, 4), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_scripts_are_valid(seed in any::<u64>(), hard in any::<bool>()) {
        let difficulty = if hard { Difficulty::Hard } else { Difficulty::Easy };
        let script = generate_script(&mut rng(seed), &config(difficulty)).unwrap();
        let timeline = script.timeline().unwrap();
        prop_assert_eq!(timeline.frames.len(), 64);
        prop_assert!(timeline.final_cell < 16);
        prop_assert_eq!(timeline.frames.last().unwrap().snitch_hidden, hard);
    }
}
