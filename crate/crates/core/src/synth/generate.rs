//! Random scripts with difficulty guarantees.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Action, Difficulty, ObjectKind, SceneEvent, SceneObject, SceneScript, PALETTE};

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub grid: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub containers: usize,
    pub balls: usize,
    pub difficulty: Difficulty,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            frames: 64,
            height: 32,
            width: 32,
            containers: 2,
            balls: 0,
            difficulty: Difficulty::Hard,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let objects = 1 + self.containers + self.balls;
        if self.grid < 2 || self.containers == 0 {
            return Err(Error::Config("need a grid of at least 2 and one container".into()));
        }
        if objects + 2 > self.grid * self.grid {
            return Err(Error::Config(format!(
                "{objects} objects leave too few free cells on a {0}x{0} grid",
                self.grid
            )));
        }
        if objects > PALETTE.len() {
            return Err(Error::Config(format!(
                "at most {} objects have distinct colours",
                PALETTE.len()
            )));
        }
        if self.frames < 16 {
            return Err(Error::Config(format!("need at least 16 frames, got {}", self.frames)));
        }
        Ok(())
    }
}

/// A random valid script. Retries internally until the difficulty
/// constraints hold.
pub fn generate_script<R: Rng + ?Sized>(rng: &mut R, config: &SynthConfig) -> Result<SceneScript> {
    config.validate()?;
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        match attempt(rng, config) {
            Ok(script) => return Ok(script),
            Err(reason) => last = reason,
        }
    }
    Err(Error::Generation {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

/// Rejection-sample scripts until the final snitch cell equals `target`.
pub fn generate_balanced<R: Rng + ?Sized>(rng: &mut R, config: &SynthConfig, target: usize) -> Result<SceneScript> {
    if target >= config.num_classes() {
        return Err(Error::Usage(format!("target cell {target} is outside the grid")));
    }
    let attempts = 64 * config.num_classes();
    for _ in 0..attempts {
        let script = generate_script(rng, config)?;
        if script.label()? == target {
            return Ok(script);
        }
    }
    Err(Error::Generation {
        attempts,
        reason: format!("no script ended in cell {target}"),
    })
}

struct Planner {
    cell: Vec<usize>,
    cells: usize,
    moves: Vec<(usize, Action, usize)>,
}

impl Planner {
    fn free_cell<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let free: Vec<usize> = (0..self.cells).filter(|c| !self.cell.contains(c)).collect();
        *free.choose(rng).expect("config leaves free cells")
    }

    fn push<R: Rng + ?Sized>(&mut self, rng: &mut R, actor: usize, action: Action, snitch: usize) {
        let target = match action {
            Action::Cover => self.cell[snitch],
            _ => self.free_cell(rng),
        };
        self.cell[actor] = target;
        if action == Action::Carry {
            self.cell[snitch] = target;
        }
        self.moves.push((actor, action, target));
    }
}

fn attempt<R: Rng + ?Sized>(rng: &mut R, config: &SynthConfig) -> std::result::Result<SceneScript, String> {
    let cells = config.grid * config.grid;
    let n = 1 + config.containers + config.balls;
    let mut start: Vec<usize> = (0..cells).collect();
    start.shuffle(rng);
    let mut colors: Vec<usize> = (1..PALETTE.len()).collect();
    colors.shuffle(rng);
    let objects: Vec<SceneObject> = (0..n)
        .map(|id| {
            let (kind, size) = if id == 0 {
                (ObjectKind::Snitch, 0.5)
            } else if id <= config.containers {
                (*[ObjectKind::Cone, ObjectKind::Box].choose(rng).unwrap(), 0.9)
            } else {
                (ObjectKind::Ball, 0.6)
            };
            SceneObject {
                id,
                kind,
                color: if id == 0 { 0 } else { colors[id - 1] },
                size,
                cell: start[id],
            }
        })
        .collect();
    let snitch = 0;
    let containers: Vec<usize> = (1..=config.containers).collect();
    let others: Vec<usize> = (1..n).collect();
    let mut plan = Planner {
        cell: start[..n].to_vec(),
        cells,
        moves: Vec::new(),
    };
    let carrier = *containers.choose(rng).unwrap();
    let decoys: Vec<usize> = others.iter().copied().filter(|&o| o != carrier).collect();

    match config.difficulty {
        Difficulty::Hard => {
            if rng.gen_bool(0.5) {
                plan.push(rng, snitch, Action::Slide, snitch);
            }
            plan.push(rng, carrier, Action::Cover, snitch);
            if let Some(&d) = decoys.choose(rng) {
                plan.push(rng, d, Action::Slide, snitch);
            }
            plan.push(rng, carrier, Action::Carry, snitch);
            if let Some(&d) = decoys.choose(rng) {
                plan.push(rng, d, Action::Slide, snitch);
            }
        }
        Difficulty::Easy => {
            let slide = |plan: &mut Planner, rng: &mut R| {
                let actor = if rng.gen_bool(0.5) {
                    snitch
                } else {
                    *others.choose(rng).unwrap()
                };
                plan.push(rng, actor, Action::Slide, snitch);
            };
            for _ in 0..rng.gen_range(0..=1) {
                slide(&mut plan, rng);
            }
            if rng.gen_bool(0.5) {
                plan.push(rng, carrier, Action::Cover, snitch);
                plan.push(rng, carrier, Action::Carry, snitch);
                plan.push(rng, carrier, Action::Uncover, snitch);
            }
            for _ in 0..rng.gen_range(1..=2) {
                slide(&mut plan, rng);
            }
        }
    }

    let events = schedule(rng, &plan.moves, config.frames)?;
    let script = SceneScript {
        grid: config.grid,
        num_frames: config.frames,
        objects,
        events,
    };
    if config.difficulty == Difficulty::Hard {
        let span = |action| {
            script
                .events
                .iter()
                .find(|e| e.action == action)
                .expect("hard plans cover and carry")
        };
        let (cover, carry) = (span(Action::Cover), span(Action::Carry));
        if 4 * cover.end >= config.frames || 2 * carry.start < config.frames {
            return Err(format!(
                "cover ends at {} and carry starts at {}; need the first quarter and the second half",
                cover.end, carry.start
            ));
        }
    }
    let timeline = script.timeline().map_err(|e| e.to_string())?;
    let hidden_tail = timeline.frames.iter().rev().take_while(|s| s.snitch_hidden).count();
    let ok = match config.difficulty {
        Difficulty::Easy => hidden_tail == 0,
        Difficulty::Hard => 4 * hidden_tail >= config.frames,
    };
    if !ok {
        return Err(format!("snitch hidden for {hidden_tail} final frames"));
    }
    Ok(script)
}

/// Give each move a duration and spread the spare frames over the gaps
/// before, between and after the moves, so events span the whole video.
fn schedule<R: Rng + ?Sized>(
    rng: &mut R,
    moves: &[(usize, Action, usize)],
    frames: usize,
) -> std::result::Result<Vec<SceneEvent>, String> {
    let lo = (frames / 16).max(1);
    let hi = (frames / 10).max(lo);
    let durations: Vec<usize> = moves.iter().map(|_| rng.gen_range(lo..=hi)).collect();
    let busy = durations.iter().sum::<usize>() + moves.len().saturating_sub(1);
    let slack = (frames - 1)
        .checked_sub(busy)
        .ok_or_else(|| format!("{} moves do not fit in {frames} frames", moves.len()))?;
    let mut cuts: Vec<usize> = (0..moves.len()).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut events = Vec::with_capacity(moves.len());
    let mut t = 0;
    let mut prev_cut = 0;
    for (i, (&(actor, action, target), &d)) in moves.iter().zip(&durations).enumerate() {
        let start = t + (cuts[i] - prev_cut) + usize::from(i > 0);
        prev_cut = cuts[i];
        events.push(SceneEvent {
            start,
            end: start + d,
            actor,
            action,
            target,
        });
        t = start + d;
    }
    Ok(events)
}
